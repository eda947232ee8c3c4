#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/metrics/image_quality.hpp"
#include "fe4dgs/semantic/metrics.hpp"
#include "fe4dgs/semantic/prototypes.hpp"
#include "fe4dgs/training/trainer.hpp"

namespace fe4dgs {

struct FrameEval {
  std::size_t index = 0;
  double time = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> feature_loss;  // when the frame has a teacher map
};

struct EvalSummary {
  std::vector<FrameEval> frames;
  double mean_psnr = 0.0;  // +inf if any frame is reproduced exactly
  double mean_ssim = 0.0;
  std::optional<double> mean_feature_loss;
};

/// Rounds every value to single precision, the storage type of feature files.
inline Tensor round_to_float(Tensor t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

/// Renders the model at each listed frame and scores it against the
/// frame's image and teacher map. With `stored_precision` the render is
/// scored as written to feature files, so scores can be recomputed from them.
inline EvalSummary evaluate_frames(const TrainState& s, const std::vector<CameraFrame>& frames,
                                   const std::vector<std::size_t>& indices, const TrainConfig& cfg,
                                   bool stored_precision = false) {
  if (indices.empty()) throw ConfigError("evaluate_frames: no frames selected");
  EvalSummary out;
  double feat_sum = 0.0;
  std::size_t feat_count = 0;
  for (std::size_t i : indices) {
    const CameraFrame& f = frames.at(i);
    if (f.image.empty()) throw DataError("evaluate_frames: frame " + std::to_string(i) + " has no image");
    const std::size_t fh = f.features ? f.features->height : 0, fw = f.features ? f.features->width : 0;
    ModelRender m = render_model(s, f, cfg, fh, fw);
    if (stored_precision) {
      m.render.color = round_to_float(std::move(m.render.color));
      if (m.decoded) m.decoded->features = round_to_float(std::move(m.decoded->features));
    }
    FrameEval e;
    e.index = i;
    e.time = f.time;
    e.psnr = psnr(m.render.color, f.image);
    e.ssim = ssim(m.render.color, f.image);
    if (m.decoded) {
      e.feature_loss = feature_loss(m.decoded->features, *f.features, nullptr);
      feat_sum += *e.feature_loss;
      ++feat_count;
    }
    out.mean_psnr += e.psnr;
    out.mean_ssim += e.ssim;
    out.frames.push_back(e);
  }
  out.mean_psnr /= static_cast<double>(indices.size());
  out.mean_ssim /= static_cast<double>(indices.size());
  if (feat_count > 0) out.mean_feature_loss = feat_sum / static_cast<double>(feat_count);
  return out;
}

/// Where decoded features are compared with labels: at the image size
/// (labels as given) or at the teacher size (labels nearest-downsampled).
enum class SegResolution { kImage, kFeature };

struct DecodedLabels {
  Tensor features;  // [h, w, C_t]
  LabelMap labels;  // aligned with `features`
};

inline DecodedLabels decode_for_segmentation(const TrainState& s, const CameraFrame& f, const LabelMap& labels,
                                             const TrainConfig& cfg, SegResolution res) {
  if (labels.height != f.height || labels.width != f.width) {
    throw DataError("segmentation: label map size differs from the frame");
  }
  std::size_t h = f.height, w = f.width;
  if (res == SegResolution::kFeature) {
    if (!f.features) throw DataError("segmentation at feature resolution needs teacher maps for their size");
    h = f.features->height;
    w = f.features->width;
  }
  ModelRender m = render_model(s, f, cfg, h, w);
  LabelMap l = res == SegResolution::kFeature ? downsample_labels_nearest(labels, h, w) : labels;
  return {std::move(m.decoded->features), std::move(l)};
}

/// Prototypes from the model's decoded features on labelled frames.
inline ClassPrototypes fit_model_prototypes(const TrainState& s, const std::vector<CameraFrame>& frames,
                                            const std::vector<LabelMap>& labels, const std::vector<int>& classes,
                                            const TrainConfig& cfg, double tau, SegResolution res) {
  if (frames.size() != labels.size()) throw ConfigError("fit_model_prototypes: frame and label counts differ");
  std::vector<Tensor> feats;
  std::vector<LabelMap> masks;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    DecodedLabels d = decode_for_segmentation(s, frames[i], labels[i], cfg, res);
    feats.push_back(std::move(d.features));
    masks.push_back(std::move(d.labels));
  }
  return fit_prototypes(feats, masks, classes, tau);
}

struct SegmentationEval {
  std::vector<LabelMap> predictions;
  std::vector<LabelMap> ground_truth;  // at the evaluation resolution
  std::vector<SegMetrics> per_frame;
  SegMetrics pooled;                   // confusion counts summed over frames
  double max_dsc_iou_discrepancy = 0.0;
};

inline SegmentationEval evaluate_segmentation(const TrainState& s, const std::vector<CameraFrame>& frames,
                                              const std::vector<LabelMap>& labels, const ClassPrototypes& protos,
                                              const std::vector<int>& classes, const TrainConfig& cfg,
                                              SegResolution res) {
  if (frames.size() != labels.size()) throw ConfigError("evaluate_segmentation: frame and label counts differ");
  SegmentationEval out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    DecodedLabels d = decode_for_segmentation(s, frames[i], labels[i], cfg, res);
    out.predictions.push_back(segment(d.features, protos));
    out.per_frame.push_back(seg_metrics(out.predictions.back(), d.labels, classes));
    out.max_dsc_iou_discrepancy = std::max(out.max_dsc_iou_discrepancy, dsc_iou_discrepancy(out.per_frame.back()));
    out.ground_truth.push_back(std::move(d.labels));
  }
  out.pooled = seg_metrics(out.predictions, out.ground_truth, classes);
  out.max_dsc_iou_discrepancy = std::max(out.max_dsc_iou_discrepancy, dsc_iou_discrepancy(out.pooled));
  return out;
}

// Prototype file: JSON {"tau": t, "classes": [{"id", "support", "direction": [...]}]}.
inline nlohmann::json prototypes_to_json(const ClassPrototypes& p) {
  nlohmann::json j;
  j["tau"] = p.tau;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : p.classes) j["classes"].push_back({{"id", c.class_id}, {"support", c.support}, {"direction", c.direction}});
  return j;
}

inline ClassPrototypes prototypes_from_json(const nlohmann::json& j) {
  try {
    ClassPrototypes p;
    p.tau = j.at("tau").get<double>();
    for (const auto& c : j.at("classes")) {
      p.classes.push_back({c.at("id").get<int>(), c.at("direction").get<std::vector<double>>(),
                           c.at("support").get<std::size_t>()});
      if (p.classes.back().direction.size() != p.classes.front().direction.size()) {
        throw DataError("prototype file: directions differ in length");
      }
    }
    if (p.classes.empty()) throw DataError("prototype file: no classes");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("prototype file: ") + e.what());
  }
}

inline void save_prototypes(const std::filesystem::path& path, const ClassPrototypes& p) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << prototypes_to_json(p).dump(2) << '\n';
}

inline ClassPrototypes load_prototypes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  try {
    return prototypes_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace fe4dgs
