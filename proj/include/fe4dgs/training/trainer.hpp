#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fe4dgs/deformation.hpp"
#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/density.hpp"
#include "fe4dgs/gaussians/init.hpp"
#include "fe4dgs/hexplane.hpp"
#include "fe4dgs/metrics/image_quality.hpp"
#include "fe4dgs/numerics/adam.hpp"
#include "fe4dgs/rasterizer/render.hpp"
#include "fe4dgs/semantic/decoder.hpp"
#include "fe4dgs/training/config.hpp"
#include "fe4dgs/training/loss.hpp"

namespace fe4dgs {

enum class Stage : std::uint8_t { kCoarse = 0, kFine = 1, kDone = 2 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kCoarse: return "coarse";
    case Stage::kFine: return "fine";
    case Stage::kDone: return "done";
  }
  return "?";
}

inline constexpr double kGaussianAdamEps = 1e-15;
inline constexpr double kNetworkAdamEps = 1e-8;
inline constexpr std::size_t kDefaultTeacherChannels = 256;
inline constexpr std::size_t kFeatFeatIndex = 9;  // f_feat in DeformationNet::all()

/// Everything needed to continue training bit-identically.
struct TrainState {
  GaussianCloud cloud;
  HexPlaneField field;
  DeformationNet net;
  PointwiseDecoder decoder;
  GaussianMoments moments;
  AdamState grid_moments;
  std::vector<AdamState> net_moments;  // DeformationNet::all() order
  AdamState decoder_moments;
  GradStats grad_stats;
  Pcg32 rng;
  Stage stage = Stage::kCoarse;
  std::int64_t iteration = 0;        // across stages
  std::int64_t stage_iteration = 0;  // within the current stage
  std::uint64_t frame_offset = 0;    // seeded round-robin start of the current stage
  double scene_extent = 1.0;
  std::uint64_t config_hash = 0;

  bool operator==(const TrainState& o) const {
    auto nets_equal = [&] {
      const auto a = net.all(), b = o.net.all();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const auto pa = a[i]->params(), pb = b[i]->params();
        if (!std::equal(pa.begin(), pa.end(), pb.begin(), pb.end())) return false;
      }
      return true;
    };
    return cloud == o.cloud && field == o.field && nets_equal() && decoder == o.decoder && moments == o.moments &&
           grid_moments == o.grid_moments && net_moments == o.net_moments && decoder_moments == o.decoder_moments &&
           grad_stats == o.grad_stats && rng == o.rng && stage == o.stage && iteration == o.iteration &&
           stage_iteration == o.stage_iteration && frame_offset == o.frame_offset && scene_extent == o.scene_extent &&
           config_hash == o.config_hash;
  }
};

inline bool feature_loss_active(const TrainConfig& cfg) { return cfg.enable_feature_loss && cfg.lambda_feat > 0.0; }

/// Checks that the frames can drive training under `cfg`.
inline void validate_training_frames(const std::vector<CameraFrame>& frames, const TrainConfig& cfg) {
  if (frames.empty()) throw ConfigError("training needs at least one frame");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].validate();
    if (frames[i].image.empty()) throw DataError("training frame " + std::to_string(i) + " has no color image");
    if (feature_loss_active(cfg) && !frames[i].features) {
      throw ConfigError("feature loss is enabled (lambda_feat > 0) but training frame " + std::to_string(i) +
                        " has no teacher feature map; provide features/ or disable the feature loss");
    }
    if (frames[i].features && frames.front().features &&
        frames[i].features->channels != frames.front().features->channels) {
      throw DataError("teacher feature maps disagree in channel count");
    }
  }
}

/// Seeded initial state: RGB-D point initialization, HexPlane bounds from
/// the initial points, zero-delta deformation network, fresh optimizers.
inline TrainState initialize_state(const TrainConfig& cfg, const std::vector<CameraFrame>& frames) {
  cfg.validate();
  validate_training_frames(frames, cfg);
  TrainState s;
  s.rng = Pcg32(cfg.seed);
  s.config_hash = config_hash(cfg);
  InitOptions init;
  init.feature_dim = cfg.feature_dim;
  init.initial_opacity = cfg.initial_opacity;
  init.seed = cfg.seed;
  s.cloud = init_from_rgbd(frames, cfg.initial_points, init);
  s.scene_extent = scene_extent(frames, s.cloud);

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    lo = lo.cwiseMin(s.cloud.position(i));
    hi = hi.cwiseMax(s.cloud.position(i));
  }
  const Vec3 pad = ((hi - lo) * cfg.aabb_margin).cwiseMax(Vec3::Constant(1e-3));
  s.field = HexPlaneField(cfg.hexplane_config(), Aabb{lo - pad, hi + pad});
  s.field.initialize(s.rng);
  s.net = DeformationNet::create(cfg.deformation_config(), s.rng);
  const std::size_t teacher = frames.front().features ? frames.front().features->channels : kDefaultTeacherChannels;
  s.decoder = PointwiseDecoder::create(cfg.feature_dim, teacher, s.rng);

  s.moments = GaussianMoments::for_cloud(s.cloud, kGaussianAdamEps);
  s.grid_moments = AdamState::for_size(s.field.num_values(), kNetworkAdamEps);
  for (const Mlp* m : s.net.all()) s.net_moments.push_back(AdamState::for_size(m->num_params(), kNetworkAdamEps));
  s.decoder_moments = AdamState::for_size(s.decoder.num_params(), kNetworkAdamEps);
  s.grad_stats.resize(s.cloud.size());
  s.frame_offset = s.rng.below(static_cast<std::uint32_t>(frames.size()));
  return s;
}

struct StepReport {
  std::int64_t iteration = 0;
  Stage stage = Stage::kCoarse;
  std::size_t frame = 0;
  LossBreakdown loss;
  double psnr = 0.0;  // of the render this step was computed from
  std::vector<std::pair<std::string, double>> lr;
  std::size_t gaussians = 0;
  DensifyReport density;
  bool opacity_reset = false;
};

inline nlohmann::json step_report_json(const StepReport& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["stage"] = stage_name(r.stage);
  j["frame"] = r.frame;
  j["loss"] = {{"total", r.loss.total}, {"rgb", r.loss.rgb}, {"depth", r.loss.depth}, {"feat", r.loss.feat},
               {"tv", r.loss.tv}};
  j["psnr"] = std::isfinite(r.psnr) ? nlohmann::json(r.psnr) : nlohmann::json("inf");
  nlohmann::json lr = nlohmann::json::object();
  for (const auto& [name, value] : r.lr) lr[name] = value;
  j["lr"] = lr;
  j["gaussians"] = r.gaussians;
  if (r.density.cloned || r.density.split || r.density.pruned) {
    j["density"] = {{"cloned", r.density.cloned}, {"split", r.density.split}, {"pruned", r.density.pruned}};
  }
  if (r.opacity_reset) j["opacity_reset"] = true;
  return j;
}

namespace detail {

inline void begin_stage(TrainState& s, Stage stage, std::size_t frame_count) {
  s.stage = stage;
  s.stage_iteration = 0;
  if (stage == Stage::kDone) return;
  s.frame_offset = s.rng.below(static_cast<std::uint32_t>(frame_count));
  // Each stage starts with a fresh optimizer for the Gaussian parameters.
  s.moments = GaussianMoments::for_cloud(s.cloud, kGaussianAdamEps);
}

inline void advance_if_complete(TrainState& s, const TrainConfig& cfg, std::size_t frame_count) {
  if (s.stage == Stage::kCoarse && s.stage_iteration >= cfg.coarse_iters) begin_stage(s, Stage::kFine, frame_count);
  if (s.stage == Stage::kFine && s.stage_iteration >= cfg.fine_iters) begin_stage(s, Stage::kDone, frame_count);
}

inline void require_finite(std::span<const double> g, const char* group, std::int64_t iteration) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericalError("iteration " + std::to_string(iteration) + ": non-finite gradient in group " + group +
                           " at index " + std::to_string(i) + "; step aborted");
    }
  }
}

}  // namespace detail

/// Render of the current model at a frame: deformation is applied once the
/// fine stage has begun. `decoded` is filled when `feature_h` and
/// `feature_w` are non-zero.
struct ModelRender {
  RenderOutput render;
  std::optional<DecodedFeatures> decoded;
};

inline ModelRender render_model(const TrainState& s, const CameraFrame& frame, const TrainConfig& cfg,
                                std::size_t feature_h = 0, std::size_t feature_w = 0) {
  const bool deformed = s.stage != Stage::kCoarse;
  const DeformResult def = deform(s.cloud, s.field, s.net, frame.time, deformed);
  ModelRender out{render(def.snapshot, frame, cfg.render), std::nullopt};
  if (feature_h > 0 && feature_w > 0) out.decoded = decode_features(s.decoder, out.render.feature, feature_h, feature_w);
  return out;
}

/// One optimization step of the current stage, followed by density control
/// and the stage transition check. Throws NumericalError on a non-finite
/// loss or gradient without modifying the parameters.
inline StepReport train_step(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg) {
  detail::advance_if_complete(s, cfg, frames.size());
  if (s.stage == Stage::kDone) throw ContractError("train_step: training already finished");
  const bool fine = s.stage == Stage::kFine;
  const std::size_t idx = static_cast<std::size_t>((s.frame_offset + static_cast<std::uint64_t>(s.stage_iteration)) %
                                                   frames.size());
  const CameraFrame& frame = frames[idx];

  const DeformResult def = deform(s.cloud, s.field, s.net, frame.time, fine);
  const RenderOutput r = render(def.snapshot, frame, cfg.render);
  const bool use_feat = fine && feature_loss_active(cfg) && frame.features.has_value();
  std::optional<DecodedFeatures> dec;
  if (use_feat) dec = decode_features(s.decoder, r.feature, frame.features->height, frame.features->width);
  const bool use_tv = fine && cfg.enable_hexplane && cfg.lambda_tv > 0.0;

  std::vector<double> grid_grad(fine ? s.field.num_values() : 0, 0.0);
  LossGradients lg;
  StepReport report;
  report.loss = total_loss(r, frame, dec ? &dec->features : nullptr, use_tv ? &s.field : nullptr, cfg, &lg, grid_grad);
  report.iteration = s.iteration;
  report.stage = s.stage;
  report.frame = idx;
  report.psnr = psnr(r.color, frame.image);
  if (!std::isfinite(report.loss.total)) {
    throw NumericalError("iteration " + std::to_string(s.iteration) + " (" + stage_name(s.stage) + ", frame " +
                         std::to_string(idx) + "): non-finite loss (rgb " + std::to_string(report.loss.rgb) +
                         ", depth " + std::to_string(report.loss.depth) + ", feat " +
                         std::to_string(report.loss.feat) + ", tv " + std::to_string(report.loss.tv) + ")");
  }

  std::optional<DecoderGradients> dec_grad;
  if (dec) {
    dec_grad = decode_features_backward(s.decoder, *dec, lg.decoded);
    lg.render.feature = dec_grad->rendered;
  }
  RenderGradients rg = render_backward(def.snapshot, frame, r, lg.render, cfg.render);
  GaussianCloud canonical_grad;
  DeformGradients dg;
  if (fine) {
    dg = deform_backward(s.cloud, s.field, s.net, def.cache, rg.params);
    canonical_grad = std::move(dg.canonical);
    for (std::size_t i = 0; i < dg.grid.size(); ++i) grid_grad[i] += dg.grid[i];
  } else {
    canonical_grad = std::move(rg.params);
  }

  // Validate every group before touching any parameter.
  const auto it = s.iteration;
  detail::require_finite(canonical_grad.positions, "position", it);
  detail::require_finite(canonical_grad.rotations, "rotation", it);
  detail::require_finite(canonical_grad.log_scales, "scaling", it);
  detail::require_finite(canonical_grad.opacity_logits, "opacity", it);
  detail::require_finite(canonical_grad.colors, "color", it);
  detail::require_finite(canonical_grad.features, "feature", it);
  detail::require_finite(grid_grad, "grid", it);
  for (const auto& g : dg.nets) detail::require_finite(g, "deformation", it);
  if (dec_grad) {
    detail::require_finite(dec_grad->weight, "decoder", it);
    detail::require_finite(dec_grad->bias, "decoder", it);
  }

  const std::int64_t t = s.stage_iteration;
  // Position, grid and deformation rates scale with the scene extent.
  const double spatial = cfg.spatial_lr_scale_by_extent ? s.scene_extent : 1.0;
  auto step = [&](const char* name, std::span<double> p, std::span<const double> g, AdamState& m, const LrSchedule& sch,
                  double scale = 1.0) {
    const double lr = lr_at_step(sch, t) * scale;
    adam_step(p, g, m, lr);
    report.lr.emplace_back(name, lr);
  };
  step("position", s.cloud.positions, canonical_grad.positions, s.moments.position, cfg.lr.position, spatial);
  step("rotation", s.cloud.rotations, canonical_grad.rotations, s.moments.rotation, cfg.lr.rotation);
  step("scaling", s.cloud.log_scales, canonical_grad.log_scales, s.moments.scaling, cfg.lr.scaling);
  step("opacity", s.cloud.opacity_logits, canonical_grad.opacity_logits, s.moments.opacity, cfg.lr.opacity);
  step("color", s.cloud.colors, canonical_grad.colors, s.moments.color, cfg.lr.color);
  if (use_feat) step("feature", s.cloud.features, canonical_grad.features, s.moments.feature, cfg.lr.features);
  if (fine) {
    if (cfg.enable_hexplane) step("grid", s.field.mutable_values(), grid_grad, s.grid_moments, cfg.lr.grid, spatial);
    auto nets = s.net.all();
    for (std::size_t n = 0; n < nets.size(); ++n) {
      if (n == kFeatFeatIndex && !(use_feat && cfg.enable_f_feat)) continue;
      const double lr = lr_at_step(cfg.lr.deformation, t) * spatial;
      adam_step(nets[n]->mutable_params(), dg.nets[n], s.net_moments[n], lr);
      if (n == 0) report.lr.emplace_back("deformation", lr);
    }
    if (dec_grad) {
      // Moments cover weight then bias.
      const std::size_t nw = s.decoder.weight.size();
      std::vector<double> p(s.decoder.weight), g(dec_grad->weight);
      p.insert(p.end(), s.decoder.bias.begin(), s.decoder.bias.end());
      g.insert(g.end(), dec_grad->bias.begin(), dec_grad->bias.end());
      const double lr = lr_at_step(cfg.lr.decoder, t);
      adam_step(p, g, s.decoder_moments, lr);
      std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(nw), s.decoder.weight.begin());
      std::copy(p.begin() + static_cast<std::ptrdiff_t>(nw), p.end(), s.decoder.bias.begin());
      report.lr.emplace_back("decoder", lr);
    }
  }

  s.grad_stats.add(rg.viewspace_grad, rg.visible);
  const std::int64_t done = s.stage_iteration + 1;
  if (cfg.density.densify_due(done) || cfg.density.prune_due(done)) {
    report.density = densify_and_prune(s.cloud, s.grad_stats, done, cfg.density, s.scene_extent, s.rng, &s.moments);
  }
  if (cfg.density.opacity_reset_due(done)) {
    reset_opacity(s.cloud, cfg.density.opacity_reset_cap);
    std::fill(s.moments.opacity.m.begin(), s.moments.opacity.m.end(), 0.0);
    std::fill(s.moments.opacity.v.begin(), s.moments.opacity.v.end(), 0.0);
    report.opacity_reset = true;
  }
  report.gaussians = s.cloud.size();

  ++s.stage_iteration;
  ++s.iteration;
  if (s.stage == Stage::kCoarse && cfg.coarse_psnr_cap > 0.0 && report.psnr >= cfg.coarse_psnr_cap) {
    detail::begin_stage(s, Stage::kFine, frames.size());
  } else {
    detail::advance_if_complete(s, cfg, frames.size());
  }
  return report;
}

using StepCallback = std::function<void(const StepReport&)>;

/// Runs up to `max_steps` steps while the state stays in `stage`.
inline std::int64_t run_stage(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg,
                              Stage stage, std::int64_t max_steps, const StepCallback& on_step = {}) {
  std::int64_t n = 0;
  while (n < max_steps) {
    detail::advance_if_complete(s, cfg, frames.size());
    if (s.stage != stage) break;
    const StepReport r = train_step(s, frames, cfg);
    if (on_step) on_step(r);
    ++n;
  }
  return n;
}

/// Coarse stage: canonical Gaussians only, no deformation, no feature term.
/// A zero-step call leaves the state unchanged.
inline std::int64_t train_coarse(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg,
                                 std::int64_t max_steps, const StepCallback& on_step = {}) {
  if (max_steps <= 0) return 0;
  return run_stage(s, frames, cfg, Stage::kCoarse, max_steps, on_step);
}

/// Fine stage: deformation, feature distillation and TV, all groups stepped.
inline std::int64_t train_fine(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg,
                               std::int64_t max_steps, const StepCallback& on_step = {}) {
  if (max_steps <= 0) return 0;
  detail::advance_if_complete(s, cfg, frames.size());
  if (s.stage == Stage::kCoarse) throw ContractError("train_fine: the coarse stage has not finished");
  return run_stage(s, frames, cfg, Stage::kFine, max_steps, on_step);
}

/// Executes `n` steps of whatever stage is current, crossing stage
/// boundaries; stops early when training is done.
inline std::int64_t train_steps(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg,
                                std::int64_t n, const StepCallback& on_step = {}) {
  std::int64_t done = 0;
  while (done < n) {
    detail::advance_if_complete(s, cfg, frames.size());
    if (s.stage == Stage::kDone) break;
    const StepReport r = train_step(s, frames, cfg);
    if (on_step) on_step(r);
    ++done;
  }
  return done;
}

/// Full coarse-to-fine schedule.
inline void train(TrainState& s, const std::vector<CameraFrame>& frames, const TrainConfig& cfg,
                  const StepCallback& on_step = {}) {
  train_steps(s, frames, cfg, std::numeric_limits<std::int64_t>::max(), on_step);
}

}  // namespace fe4dgs
