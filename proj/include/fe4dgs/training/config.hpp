#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fe4dgs/deformation.hpp"
#include "fe4dgs/errors.hpp"
#include "fe4dgs/gaussians/density.hpp"
#include "fe4dgs/hexplane.hpp"
#include "fe4dgs/numerics/lr_schedule.hpp"
#include "fe4dgs/rasterizer/projection.hpp"

namespace fe4dgs {

/// Learning-rate schedule per optimized parameter group.
struct GroupSchedules {
  LrSchedule position{1.6e-4, 1.6e-6, 7000, 1.0, 0};
  LrSchedule grid{3.2e-3, 3.2e-6, 7000, 1.0, 0};
  LrSchedule deformation{1.6e-4, 1.6e-7, 7000, 0.01, 0};
  LrSchedule decoder{1e-3, 1e-3, 7000, 1.0, 0};
  LrSchedule features{2.5e-3, 2.5e-3, 7000, 1.0, 0};
  LrSchedule opacity{5e-2, 5e-2, 7000, 1.0, 0};
  LrSchedule scaling{5e-3, 5e-3, 7000, 1.0, 0};
  LrSchedule rotation{1e-3, 1e-3, 7000, 1.0, 0};
  LrSchedule color{2.5e-3, 2.5e-3, 7000, 1.0, 0};

  bool operator==(const GroupSchedules&) const = default;
};

struct TrainConfig {
  // Loss weights.
  double lambda_rgb = 1.0;
  double lambda_depth = 0.01;
  double lambda_feat = 1.0;
  double lambda_tv = 0.03;
  double depth_alpha_threshold = 0.5;

  // Schedule.
  std::int64_t coarse_iters = 1000;
  std::int64_t fine_iters = 6000;
  double coarse_psnr_cap = 35.0;  // <= 0 disables the early coarse stop
  bool spatial_lr_scale_by_extent = true;
  GroupSchedules lr;
  DensityConfig density;

  // Ablations.
  bool enable_f_feat = true;
  bool enable_feature_loss = true;
  bool enable_hexplane = true;

  // Model.
  std::size_t feature_dim = 128;
  std::size_t initial_points = 90000;
  double initial_opacity = 0.1;
  std::size_t net_width = 64;
  std::size_t net_depth = 8;
  std::size_t semantic_hidden = 64;
  int output_coordinate_dim = 64;
  std::vector<int> multires{1, 2, 4, 8};
  std::array<int, 4> grid_resolution{64, 64, 64, 100};
  double aabb_margin = 0.1;  // fraction of the initial point extent

  RenderSettings render;
  std::uint64_t seed = 0;

  HexPlaneConfig hexplane_config() const {
    HexPlaneConfig c;
    c.multipliers = multires;
    c.base_resolution = grid_resolution;
    c.feat_dim = HexPlaneConfig::per_level_dim(output_coordinate_dim, multires.size(), 32);
    return c;
  }

  DeformationConfig deformation_config() const {
    DeformationConfig c;
    const auto hp = hexplane_config();
    c.input_dim = hp.multipliers.size() * static_cast<std::size_t>(hp.feat_dim);
    c.width = net_width;
    c.depth = net_depth;
    c.feature_dim = feature_dim;
    c.semantic_hidden = semantic_hidden;
    c.enable_hexplane = enable_hexplane;
    c.enable_f_feat = enable_f_feat;
    return c;
  }

  void validate() const {
    for (double l : {lambda_rgb, lambda_depth, lambda_feat, lambda_tv}) {
      if (!(l >= 0.0)) throw ConfigError("TrainConfig: loss weights must be >= 0");
    }
    if (coarse_iters < 0 || fine_iters < 0) throw ConfigError("TrainConfig: iteration counts must be >= 0");
    if (feature_dim == 0) throw ConfigError("TrainConfig: feature_dim must be positive");
    if (initial_points == 0) throw ConfigError("TrainConfig: initial_points must be positive");
    if (!(initial_opacity > 0.0 && initial_opacity < 1.0)) throw ConfigError("TrainConfig: initial_opacity must lie in (0, 1)");
    if (multires.empty()) throw ConfigError("TrainConfig: multires needs at least one level");
    if (render.tile_size <= 0) throw ConfigError("TrainConfig: tile_size must be positive");
    if (render.threads == 0) throw ConfigError("TrainConfig: threads must be >= 1");
    if (!(aabb_margin >= 0.0)) throw ConfigError("TrainConfig: aabb_margin must be >= 0");
    for (const LrSchedule* s : {&lr.position, &lr.grid, &lr.deformation, &lr.decoder, &lr.features, &lr.opacity,
                                &lr.scaling, &lr.rotation, &lr.color}) {
      s->validate();
    }
  }

  bool operator==(const TrainConfig& o) const;
};

namespace detail {

inline std::string join_ints(const auto& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<double> split_numbers(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Visits every (section.key, field) pair in a fixed order so that reading,
// writing and hashing share one key list.
template <typename Config, typename Visitor>
void visit_config(Config& c, Visitor&& v) {
  v.number("loss.lambda_rgb", c.lambda_rgb);
  v.number("loss.lambda_depth", c.lambda_depth);
  v.number("loss.lambda_feat", c.lambda_feat);
  v.number("loss.lambda_tv", c.lambda_tv);
  v.number("loss.depth_alpha_threshold", c.depth_alpha_threshold);

  v.number("schedule.coarse_iterations", c.coarse_iters);
  v.number("schedule.fine_iterations", c.fine_iters);
  v.number("schedule.coarse_psnr_cap", c.coarse_psnr_cap);
  v.flag("schedule.spatial_lr_scale_by_extent", c.spatial_lr_scale_by_extent);

  auto group = [&](const std::string& name, auto& s) {
    v.number("lr." + name + "_lr_init", s.lr_init);
    v.number("lr." + name + "_lr_final", s.lr_final);
    v.number("lr." + name + "_lr_max_steps", s.max_steps);
    v.number("lr." + name + "_lr_delay_mult", s.delay_mult);
    v.number("lr." + name + "_lr_delay_steps", s.delay_steps);
  };
  group("position", c.lr.position);
  group("grid", c.lr.grid);
  group("deformation", c.lr.deformation);
  group("decoder", c.lr.decoder);
  group("feature", c.lr.features);
  group("opacity", c.lr.opacity);
  group("scaling", c.lr.scaling);
  group("rotation", c.lr.rotation);
  group("color", c.lr.color);

  v.flag("density.enabled", c.density.enabled);
  v.number("density.densify_grad_threshold", c.density.grad_threshold);
  v.number("density.percent_dense", c.density.percent_dense);
  v.number("density.split_factor", c.density.split_factor);
  v.number("density.prune_opacity", c.density.prune_opacity);
  v.number("density.split_children", c.density.split_children);
  v.number("density.densify_from_iter", c.density.densify_from);
  v.number("density.densify_until_iter", c.density.densify_until);
  v.number("density.densification_interval", c.density.densify_interval);
  v.number("density.prune_interval", c.density.prune_interval);
  v.number("density.opacity_reset_interval", c.density.opacity_reset_interval);
  v.number("density.opacity_reset_cap", c.density.opacity_reset_cap);

  v.flag("ablation.enable_f_feat", c.enable_f_feat);
  v.flag("ablation.enable_feature_loss", c.enable_feature_loss);
  v.flag("ablation.enable_hexplane", c.enable_hexplane);

  v.number("model.feature_dim", c.feature_dim);
  v.number("model.initial_points", c.initial_points);
  v.number("model.initial_opacity", c.initial_opacity);
  v.number("model.net_width", c.net_width);
  v.number("model.net_depth", c.net_depth);
  v.number("model.semantic_hidden", c.semantic_hidden);
  v.number("model.output_coordinate_dim", c.output_coordinate_dim);
  v.int_list("model.multires", c.multires);
  v.int_array("model.grid_resolution", c.grid_resolution);
  v.number("model.aabb_margin", c.aabb_margin);

  v.vec3("render.background", c.render.background);
  v.number("render.tile_size", c.render.tile_size);
  v.number("render.threads", c.render.threads);

  v.number("run.seed", c.seed);
}

struct ConfigWriter {
  boost::property_tree::ptree& tree;
  template <typename T>
  void number(const std::string& key, const T& value) {
    if constexpr (std::is_floating_point_v<T>) {
      tree.put(key, format_double(value));
    } else {
      tree.put(key, std::to_string(value));
    }
  }
  void flag(const std::string& key, bool value) { tree.put(key, value ? "true" : "false"); }
  void int_list(const std::string& key, const std::vector<int>& v) { tree.put(key, join_ints(v)); }
  void int_array(const std::string& key, const std::array<int, 4>& v) { tree.put(key, join_ints(v)); }
  void vec3(const std::string& key, const Vec3& v) {
    tree.put(key, format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]));
  }
};

struct ConfigReader {
  const boost::property_tree::ptree& tree;
  std::set<std::string> seen;

  std::optional<std::string> raw(const std::string& key) {
    seen.insert(key);
    if (auto v = tree.get_optional<std::string>(key)) return *v;
    return std::nullopt;
  }
  template <typename T>
  void number(const std::string& key, T& value) {
    auto text = raw(key);
    if (!text) return;
    const auto parsed = split_numbers(*text, key);
    if (parsed.size() != 1) throw ConfigError("config key " + key + ": expected one number");
    if constexpr (std::is_floating_point_v<T>) {
      value = parsed[0];
    } else {
      if (parsed[0] != std::floor(parsed[0])) throw ConfigError("config key " + key + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (parsed[0] < 0) throw ConfigError("config key " + key + ": expected a non-negative integer");
      }
      value = static_cast<T>(parsed[0]);
    }
  }
  void flag(const std::string& key, bool& value) {
    auto text = raw(key);
    if (!text) return;
    if (*text == "true" || *text == "1" || *text == "yes") {
      value = true;
    } else if (*text == "false" || *text == "0" || *text == "no") {
      value = false;
    } else {
      throw ConfigError("config key " + key + ": expected true or false, got '" + *text + "'");
    }
  }
  void int_list(const std::string& key, std::vector<int>& v) {
    auto text = raw(key);
    if (!text) return;
    v.clear();
    for (double d : split_numbers(*text, key)) v.push_back(static_cast<int>(d));
  }
  void int_array(const std::string& key, std::array<int, 4>& v) {
    auto text = raw(key);
    if (!text) return;
    const auto d = split_numbers(*text, key);
    if (d.size() != 4) throw ConfigError("config key " + key + ": expected four integers");
    for (std::size_t i = 0; i < 4; ++i) v[i] = static_cast<int>(d[i]);
  }
  void vec3(const std::string& key, Vec3& v) {
    auto text = raw(key);
    if (!text) return;
    const auto d = split_numbers(*text, key);
    if (d.size() != 3) throw ConfigError("config key " + key + ": expected three numbers");
    v = Vec3(d[0], d[1], d[2]);
  }
};

}  // namespace detail

inline std::string config_to_ini(const TrainConfig& cfg) {
  boost::property_tree::ptree tree;
  detail::ConfigWriter w{tree};
  detail::visit_config(cfg, w);
  std::ostringstream os;
  boost::property_tree::write_ini(os, tree);
  return os.str();
}

/// Keys absent from the text keep their defaults; unknown keys are errors.
inline TrainConfig config_from_ini(const std::string& text, TrainConfig cfg = {}) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  detail::ConfigReader r{tree, {}};
  detail::visit_config(cfg, r);
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      if (!r.seen.count(section + "." + key)) throw ConfigError("unknown config key " + section + "." + key);
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_ini(ss.str());
}

/// FNV-1a over the canonical INI text. The thread count is excluded since
/// results do not depend on it.
inline std::uint64_t config_hash(TrainConfig cfg) {
  cfg.render.threads = 1;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config_to_ini(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline bool TrainConfig::operator==(const TrainConfig& o) const { return config_to_ini(*this) == config_to_ini(o); }

}  // namespace fe4dgs
