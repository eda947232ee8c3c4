#pragma once

// Command implementations for fe4dgs_cli. `run_cli` parses arguments and
// maps failures to exit codes: 0 success, 1 usage or configuration,
// 2 data, 3 numerical.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fe4dgs/diagnostics/gradient_suite.hpp"
#include "fe4dgs/errors.hpp"
#include "fe4dgs/io/dataset.hpp"
#include "fe4dgs/io/synthetic.hpp"
#include "fe4dgs/training/checkpoint.hpp"
#include "fe4dgs/training/evaluate.hpp"

namespace fe4dgs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

namespace fs = std::filesystem;

// A run directory holds config.ini, checkpoint.bin and train_log.jsonl.
inline fs::path run_config(const fs::path& run) { return run / "config.ini"; }
inline fs::path run_checkpoint(const fs::path& run) { return run / "checkpoint.bin"; }

struct SplitArgs {
  std::size_t every = 8;
  std::size_t offset = 0;
  bool all = false;  // use every frame for both roles

  void add_to(CLI::App* app) {
    app->add_option("--every", every, "Hold out every n-th frame for testing")->check(CLI::Range(2, 1 << 30));
    app->add_option("--offset", offset, "Index of the first held-out frame");
    app->add_flag("--all-frames", all, "Do not hold out frames");
  }
  FrameSplit split(std::size_t count) const {
    if (!all) return split_every_nth(count, every, offset);
    FrameSplit s;
    for (std::size_t i = 0; i < count; ++i) {
      s.train.push_back(i);
      s.test.push_back(i);
    }
    return s;
  }
};

struct LoadedRun {
  TrainConfig cfg;
  TrainState state;
};

inline LoadedRun load_run(const fs::path& run) {
  if (!fs::exists(run_config(run))) throw DataError(run.string() + ": no config.ini (not a run directory)");
  LoadedRun r{load_config(run_config(run)), load_checkpoint(run_checkpoint(run))};
  if (r.state.config_hash != config_hash(r.cfg)) {
    throw ConfigError(run.string() + ": checkpoint was written under a different configuration");
  }
  return r;
}

inline nlohmann::json number_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf"); }

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  fs::path out;
  SyntheticParams p;
  double depth_scale = 1e-3;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.p.validate();
  const SyntheticScene scene = make_synthetic_scene(a.p);
  DatasetOptions opt;
  opt.depth_scale = a.depth_scale;
  write_dataset(a.out, scene.frames, scene.labels, opt);
  out << "wrote " << scene.frames.size() << " frames (" << a.p.width << "x" << a.p.height << ", " << a.p.classes()
      << " classes) to " << a.out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path data;
  fs::path config;
  fs::path run;
  bool resume = false;
  std::int64_t steps = -1;  // -1: until the schedule ends
  std::int64_t checkpoint_every = 0;
  std::int64_t print_every = 100;
  double depth_scale = 1e-3;
  SplitArgs split;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  DatasetOptions opt;
  opt.depth_scale = a.depth_scale;
  const Dataset ds = load_dataset(a.data, opt);
  const FrameSplit split = a.split.split(ds.frames.size());
  const std::vector<CameraFrame> frames = select_frames(ds.frames, split.train);

  TrainConfig cfg;
  TrainState s;
  if (a.resume) {
    LoadedRun r = load_run(a.run);
    if (!a.config.empty() && config_hash(load_config(a.config)) != config_hash(r.cfg)) {
      throw ConfigError("--config differs from the configuration stored in " + a.run.string());
    }
    cfg = std::move(r.cfg);
    s = std::move(r.state);
  } else {
    if (a.config.empty()) throw ConfigError("train: --config is required unless --resume is given");
    cfg = load_config(a.config);
    s = initialize_state(cfg, frames);
    fs::create_directories(a.run);
    std::ofstream(run_config(a.run)) << config_to_ini(cfg);
  }

  std::ofstream log(a.run / "train_log.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError((a.run / "train_log.jsonl").string() + ": cannot write");
  auto on_step = [&](const StepReport& r) {
    const std::string line = step_report_json(r).dump();
    log << line << '\n';
    if (a.print_every > 0 && (r.iteration + 1) % a.print_every == 0) out << line << '\n';
    if (a.checkpoint_every > 0 && (r.iteration + 1) % a.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_%08lld.bin", static_cast<long long>(r.iteration + 1));
      save_checkpoint(s, a.run / name);
    }
  };
  try {
    train_steps(s, frames, cfg, a.steps < 0 ? std::numeric_limits<std::int64_t>::max() : a.steps, on_step);
  } catch (const NumericalError&) {
    // The state is unchanged by the failed step; keep it for inspection.
    save_checkpoint(s, a.run / "checkpoint_failed.bin");
    throw;
  }
  save_checkpoint(s, run_checkpoint(a.run));
  out << "trained to iteration " << s.iteration << " (" << stage_name(s.stage) << ", " << s.cloud.size()
      << " Gaussians) on " << frames.size() << " frames; checkpoint " << run_checkpoint(a.run).string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  fs::path run;
  fs::path data;
  std::size_t frame = 0;
  std::optional<double> time;  // overrides the frame's timestamp
  fs::path out;                // output prefix
  std::string feature_res = "teacher";
  double depth_scale = 1e-3;
};

/// Writes <out>_color.png, <out>_depth.png (16-bit), and single-precision
/// <out>_color.feat, <out>_depth.feat, <out>_rendered.feat (N channels) and
/// <out>_features.feat (decoded, C_t channels).
inline int cmd_render(const RenderArgs& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run);
  DatasetOptions opt;
  opt.depth_scale = a.depth_scale;
  const Dataset ds = load_dataset(a.data, opt);
  if (a.frame >= ds.frames.size()) throw ConfigError("render: --frame beyond the dataset's " + std::to_string(ds.frames.size()) + " frames");
  CameraFrame f = ds.frames[a.frame];
  if (a.time) f.time = *a.time;
  std::size_t fh = f.height, fw = f.width;
  if (a.feature_res == "teacher" && f.features) {
    fh = f.features->height;
    fw = f.features->width;
  }
  const ModelRender m = render_model(r.state, f, r.cfg, fh, fw);
  if (!a.out.parent_path().empty()) fs::create_directories(a.out.parent_path());
  const std::string p = a.out.string();
  write_png(p + "_color.png", color_png(m.render.color));
  write_png(p + "_depth.png", depth_png(m.render.depth, a.depth_scale));
  save_feature_map(p + "_color.feat", from_hwc(m.render.color));
  Tensor depth3({f.height, f.width, 1});
  std::copy(m.render.depth.values().begin(), m.render.depth.values().end(), depth3.values().begin());
  save_feature_map(p + "_depth.feat", from_hwc(depth3));
  save_feature_map(p + "_rendered.feat", from_hwc(m.render.feature));
  save_feature_map(p + "_features.feat", from_hwc(m.decoded->features));
  out << "rendered frame " << a.frame << " at t=" << f.time << " to " << p << "_*\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path run;
  fs::path data;
  fs::path json;
  double depth_scale = 1e-3;
  SplitArgs split;
};

inline nlohmann::json eval_json(const EvalSummary& e) {
  nlohmann::json j;
  j["frames"] = nlohmann::json::array();
  for (const FrameEval& f : e.frames) {
    nlohmann::json row{{"frame", f.index}, {"time", f.time}, {"psnr", number_json(f.psnr)}, {"ssim", f.ssim}};
    if (f.feature_loss) row["feature_loss"] = *f.feature_loss;
    j["frames"].push_back(row);
  }
  j["mean_psnr"] = number_json(e.mean_psnr);
  j["mean_ssim"] = e.mean_ssim;
  if (e.mean_feature_loss) j["mean_feature_loss"] = *e.mean_feature_loss;
  return j;
}

/// Scores held-out frames at the precision `render` stores, so every number
/// can be recomputed from render outputs.
inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run);
  DatasetOptions opt;
  opt.depth_scale = a.depth_scale;
  const Dataset ds = load_dataset(a.data, opt);
  const FrameSplit split = a.split.split(ds.frames.size());
  if (split.test.empty()) throw ConfigError("eval: the split holds out no frames");
  const EvalSummary e = evaluate_frames(r.state, ds.frames, split.test, r.cfg, true);
  out << std::fixed << std::setprecision(4) << "frame      time      PSNR      SSIM  feat_loss\n";
  for (const FrameEval& f : e.frames) {
    out << std::setw(5) << f.index << std::setw(10) << f.time << std::setw(10) << f.psnr << std::setw(10) << f.ssim;
    if (f.feature_loss) out << std::setw(11) << *f.feature_loss;
    out << '\n';
  }
  out << " mean          " << std::setw(10) << e.mean_psnr << std::setw(10) << e.mean_ssim;
  if (e.mean_feature_loss) out << std::setw(11) << *e.mean_feature_loss;
  out << '\n';
  if (!a.json.empty()) write_json(a.json, eval_json(e));
  return kExitOk;
}

// ---------------------------------------------------------------- segment

struct SegmentArgs {
  fs::path run;
  fs::path data;
  fs::path prototypes;  // read if given, else fitted on training frames
  fs::path out;
  double tau = 0.5;
  std::string resolution = "image";
  double depth_scale = 1e-3;
  SplitArgs split;
};

inline nlohmann::json seg_json(const SegMetrics& m) {
  nlohmann::json j = nlohmann::json::array();
  for (const ClassScores& c : m.per_class) {
    j.push_back({{"class", c.class_id}, {"support", c.support}, {"iou", c.iou}, {"dsc", c.dsc},
                 {"recall", c.recall}, {"precision", c.precision}});
  }
  return j;
}

inline void print_seg_table(std::ostream& out, const SegMetrics& m) {
  out << std::fixed << std::setprecision(4) << "class   support       IoU       DSC    recall precision\n";
  for (const ClassScores& c : m.per_class) {
    out << std::setw(5) << c.class_id << std::setw(10) << c.support << std::setw(10) << c.iou << std::setw(10) << c.dsc
        << std::setw(10) << c.recall << std::setw(10) << c.precision << '\n';
  }
  const ClassScores& g = m.aggregate;
  out << "  all" << std::setw(10) << g.support << std::setw(10) << g.iou << std::setw(10) << g.dsc << std::setw(10)
      << g.recall << std::setw(10) << g.precision << '\n';
}

inline int cmd_segment(const SegmentArgs& a, std::ostream& out) {
  const LoadedRun r = load_run(a.run);
  DatasetOptions opt;
  opt.depth_scale = a.depth_scale;
  const Dataset ds = load_dataset(a.data, opt);
  const SegResolution res = a.resolution == "feature" ? SegResolution::kFeature : SegResolution::kImage;
  const FrameSplit split = a.split.split(ds.frames.size());
  fs::create_directories(a.out / "labels");

  std::vector<int> classes;
  if (ds.has_labels()) {
    std::set<int> ids;
    for (const auto& l : ds.labels) {
      for (int v : l->labels) {
        if (v >= 0) ids.insert(v);
      }
    }
    classes.assign(ids.begin(), ids.end());
  }

  ClassPrototypes protos;
  if (!a.prototypes.empty()) {
    protos = load_prototypes(a.prototypes);
    protos.tau = a.tau;
  } else {
    if (!ds.has_labels()) throw DataError("segment: no --prototypes given and the dataset has no labels/ to fit them");
    std::vector<LabelMap> train_labels;
    for (std::size_t i : split.train) train_labels.push_back(*ds.labels[i]);
    protos = fit_model_prototypes(r.state, select_frames(ds.frames, split.train), train_labels, classes, r.cfg, a.tau, res);
    for (const std::string& w : protos.warnings) out << "warning: " << w << '\n';
    save_prototypes(a.out / "prototypes.json", protos);
  }
  if (ds.frames.front().features && protos.channels() != ds.frames.front().features->channels) {
    throw DataError("segment: prototype channels differ from the teacher channels");
  }

  const std::vector<CameraFrame> test = select_frames(ds.frames, split.test);
  nlohmann::json report;
  report["tau"] = protos.tau;
  report["resolution"] = a.resolution;
  if (ds.has_labels()) {
    std::vector<LabelMap> gt;
    for (std::size_t i : split.test) gt.push_back(*ds.labels[i]);
    const SegmentationEval e = evaluate_segmentation(r.state, test, gt, protos, classes, r.cfg, res);
    for (std::size_t k = 0; k < split.test.size(); ++k) {
      write_png(a.out / "labels" / frame_name(split.test[k], "png"), label_png(e.predictions[k]));
      report["frames"].push_back({{"frame", split.test[k]}, {"classes", seg_json(e.per_frame[k])}});
    }
    report["pooled"] = seg_json(e.pooled);
    report["max_dsc_iou_discrepancy"] = e.max_dsc_iou_discrepancy;
    out << "pooled over " << split.test.size() << " held-out frames:\n";
    print_seg_table(out, e.pooled);
  } else {
    for (std::size_t k = 0; k < test.size(); ++k) {
      const CameraFrame& f = test[k];
      const std::size_t h = res == SegResolution::kFeature && f.features ? f.features->height : f.height;
      const std::size_t w = res == SegResolution::kFeature && f.features ? f.features->width : f.width;
      const ModelRender m = render_model(r.state, f, r.cfg, h, w);
      write_png(a.out / "labels" / frame_name(split.test[k], "png"), label_png(segment(m.decoded->features, protos)));
    }
    out << "wrote " << test.size() << " label maps (no ground truth for metrics)\n";
  }
  write_json(a.out / "metrics.json", report);
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  GradientSuiteOptions opt;
  fs::path json;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const GradientSuiteReport rep = run_gradient_suite(a.opt);
  out << std::left << std::setw(26) << "group" << std::right << std::setw(8) << "params" << std::setw(14)
      << "max_rel_err" << "  result\n";
  nlohmann::json j;
  for (const auto& g : rep.groups) {
    out << std::left << std::setw(26) << g.name << std::right << std::setw(8) << g.checked << std::setw(14)
        << std::scientific << std::setprecision(3) << g.max_rel_error << "  " << (g.passed(a.opt.tolerance) ? "ok" : "FAIL")
        << '\n';
    j["groups"].push_back({{"name", g.name}, {"params", g.checked}, {"max_rel_error", g.max_rel_error}});
  }
  const bool ok = rep.passed(a.opt.tolerance);
  out << std::defaultfloat << (ok ? "all groups within " : "gradient check failed; tolerance ") << a.opt.tolerance
      << " (" << rep.seconds << " s)\n";
  j["passed"] = ok;
  j["seconds"] = rep.seconds;
  if (!a.json.empty()) write_json(a.json, j);
  return ok ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------- entry

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Feature-distilled 4D Gaussian splatting"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic moving-blob dataset with teacher features and labels");
  c_synth->add_option("--out", synth.out, "Dataset root")->required();
  c_synth->add_option("--seed", synth.p.seed);
  c_synth->add_option("--width", synth.p.width);
  c_synth->add_option("--height", synth.p.height);
  c_synth->add_option("--frames", synth.p.frames);
  c_synth->add_option("--blobs", synth.p.blobs);
  c_synth->add_option("--gaussians-per-blob", synth.p.gaussians_per_blob);
  c_synth->add_option("--backdrop-grid", synth.p.backdrop_grid, "Backdrop Gaussians per side");
  c_synth->add_option("--teacher-channels", synth.p.teacher_channels);
  c_synth->add_option("--feature-width", synth.p.feature_width);
  c_synth->add_option("--feature-height", synth.p.feature_height);
  c_synth->add_option("--motion", synth.p.motion_amplitude, "Blob motion amplitude; 0 gives a static scene");
  c_synth->add_option("--depth-scale", synth.depth_scale, "Metres per 16-bit depth code");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train from a dataset; writes a run directory");
  c_train->add_option("--data", tr.data, "Dataset root")->required();
  c_train->add_option("--config", tr.config, "INI configuration");
  c_train->add_option("--run", tr.run, "Run directory")->required();
  c_train->add_flag("--resume", tr.resume, "Continue from <run>/checkpoint.bin");
  c_train->add_option("--steps", tr.steps, "Stop after this many steps (default: whole schedule)");
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Also write checkpoint_<iter>.bin every n steps");
  c_train->add_option("--print-every", tr.print_every, "Echo the JSON step log every n steps (0: never)");
  c_train->add_option("--depth-scale", tr.depth_scale);
  tr.split.add_to(c_train);

  RenderArgs rd;
  auto* c_render = app.add_subcommand("render", "Render color, depth and features from a run");
  c_render->add_option("--run", rd.run)->required();
  c_render->add_option("--data", rd.data, "Dataset supplying the camera")->required();
  c_render->add_option("--frame", rd.frame, "Camera (and default time) of this frame");
  c_render->add_option("--time", rd.time, "Render time in [0, 1]");
  c_render->add_option("--out", rd.out, "Output prefix")->required();
  c_render->add_option("--feature-res", rd.feature_res, "Decoded feature size")->check(CLI::IsMember({"teacher", "image"}));
  c_render->add_option("--depth-scale", rd.depth_scale);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "PSNR, SSIM and feature loss on held-out frames");
  c_eval->add_option("--run", ev.run)->required();
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--json", ev.json, "Also write the table as JSON");
  c_eval->add_option("--depth-scale", ev.depth_scale);
  ev.split.add_to(c_eval);

  SegmentArgs sg;
  auto* c_segment = app.add_subcommand("segment", "Label held-out frames by prototype matching");
  c_segment->add_option("--run", sg.run)->required();
  c_segment->add_option("--data", sg.data)->required();
  c_segment->add_option("--prototypes", sg.prototypes, "Prototype JSON; fitted on training frames when absent");
  c_segment->add_option("--out", sg.out, "Output directory")->required();
  c_segment->add_option("--tau", sg.tau, "Cosine threshold")->check(CLI::Range(-1.0, 1.0));
  c_segment->add_option("--resolution", sg.resolution, "Compare at image or teacher size")
      ->check(CLI::IsMember({"image", "feature"}));
  c_segment->add_option("--depth-scale", sg.depth_scale);
  sg.split.add_to(c_segment);

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every trainable group");
  c_grad->add_option("--seed", gc.opt.seed);
  c_grad->add_option("--tolerance", gc.opt.tolerance);
  c_grad->add_option("--json", gc.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_train->parsed()) return cmd_train(tr, out);
    if (c_render->parsed()) return cmd_render(rd, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_segment->parsed()) return cmd_segment(sg, out);
    if (c_grad->parsed()) return cmd_gradcheck(gc, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace fe4dgs::cli
