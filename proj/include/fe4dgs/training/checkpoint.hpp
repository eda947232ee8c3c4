#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/semantic/feature_map.hpp"
#include "fe4dgs/training/trainer.hpp"

namespace fe4dgs {

// Checkpoint layout, little-endian throughout. Vectors are a u64 length
// followed by f64 values.
//   "FE4C" u16 version u64 config_hash
//   u8 stage, i64 iteration, i64 stage_iteration, u64 frame_offset,
//   f64 scene_extent, u64 rng_state, u64 rng_increment
//   cloud:    u64 K, u64 N, vec positions, rotations, log_scales,
//             opacity_logits, colors, features
//   hexplane: u64 levels, i32 multipliers[levels], i32 base_resolution[4],
//             i32 feat_dim, f64 aabb_min[3], f64 aabb_max[3], vec values
//   network:  u64 input_dim, width, depth, feature_dim, semantic_hidden,
//             u8 enable_hexplane, u8 enable_f_feat, then 10 MLPs each as
//             u64 layers, (u64 in, u64 out, u8 activation) per layer, vec params
//   decoder:  u64 in, u64 out, vec weight, vec bias
//   optimizer states (position, rotation, scaling, opacity, color, feature,
//             grid, 10 networks, decoder): vec m, vec v, i64 steps,
//             f64 beta1, beta2, eps
//   grad stats: vec accum, vec count
inline constexpr std::array<char, 4> kCheckpointMagic{'F', 'E', '4', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto at = bytes_.size();
    bytes_.resize(at + sizeof(T));
    std::memcpy(bytes_.data() + at, &v, sizeof(T));
  }
  void put_vec(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    const auto at = bytes_.size();
    bytes_.resize(at + v.size() * sizeof(double));
    if (!v.empty()) std::memcpy(bytes_.data() + at, v.data(), v.size() * sizeof(double));
  }
  void put_raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<double> get_vec(const char* what, std::optional<std::size_t> expected = std::nullopt) {
    const std::size_t at = pos_;
    const auto n = get<std::uint64_t>(what);
    if (expected && n != *expected) {
      throw FormatError(std::string("checkpoint: ") + what + " has " + std::to_string(n) + " values, expected " +
                            std::to_string(*expected),
                        at);
    }
    if (n > (bytes_.size() - pos_) / sizeof(double)) need(n * sizeof(double), what);
    std::vector<double> v(n);
    if (n) std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

inline void put_adam(ByteWriter& w, const AdamState& a) {
  w.put_vec(a.m);
  w.put_vec(a.v);
  w.put<std::int64_t>(a.step_count);
  w.put<double>(a.beta1);
  w.put<double>(a.beta2);
  w.put<double>(a.eps);
}

inline AdamState get_adam(ByteReader& r, std::size_t expected) {
  AdamState a;
  a.m = r.get_vec("optimizer moments", expected);
  a.v = r.get_vec("optimizer moments", expected);
  a.step_count = r.get<std::int64_t>("optimizer step");
  a.beta1 = r.get<double>("optimizer beta1");
  a.beta2 = r.get<double>("optimizer beta2");
  a.eps = r.get<double>("optimizer eps");
  return a;
}

inline void put_mlp(ByteWriter& w, const Mlp& m) {
  w.put<std::uint64_t>(m.num_layers());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    w.put<std::uint64_t>(m.layer(l).in);
    w.put<std::uint64_t>(m.layer(l).out);
    w.put<std::uint8_t>(m.layer(l).activation == Activation::kRelu ? 1 : 0);
  }
  w.put_vec(m.params());
}

inline Mlp get_mlp(ByteReader& r) {
  const auto layers = r.get<std::uint64_t>("network layer count");
  if (layers == 0 || layers > 1024) throw FormatError("checkpoint: implausible network layer count", r.pos());
  std::vector<LinearLayer> spec;
  for (std::uint64_t l = 0; l < layers; ++l) {
    LinearLayer layer;
    layer.in = r.get<std::uint64_t>("layer width");
    layer.out = r.get<std::uint64_t>("layer width");
    const auto act = r.get<std::uint8_t>("layer activation");
    if (act > 1) throw FormatError("checkpoint: unknown activation code", r.pos() - 1);
    layer.activation = act ? Activation::kRelu : Activation::kNone;
    spec.push_back(std::move(layer));
  }
  std::size_t total = 0;
  for (const auto& l : spec) total += l.in * l.out + l.out;
  const auto params = r.get_vec("network parameters", total);
  std::size_t off = 0;
  for (auto& l : spec) {
    l.weight.assign(params.begin() + static_cast<std::ptrdiff_t>(off),
                    params.begin() + static_cast<std::ptrdiff_t>(off + l.in * l.out));
    off += l.in * l.out;
    l.bias.assign(params.begin() + static_cast<std::ptrdiff_t>(off), params.begin() + static_cast<std::ptrdiff_t>(off + l.out));
    off += l.out;
  }
  try {
    return Mlp(spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), r.pos());
  }
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const TrainState& s) {
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint64_t>(s.config_hash);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.stage));
  w.put<std::int64_t>(s.iteration);
  w.put<std::int64_t>(s.stage_iteration);
  w.put<std::uint64_t>(s.frame_offset);
  w.put<double>(s.scene_extent);
  w.put<std::uint64_t>(s.rng.state());
  w.put<std::uint64_t>(s.rng.increment());

  const GaussianCloud& c = s.cloud;
  w.put<std::uint64_t>(c.size());
  w.put<std::uint64_t>(c.feature_dim);
  for (const auto* v : {&c.positions, &c.rotations, &c.log_scales, &c.opacity_logits, &c.colors, &c.features}) {
    w.put_vec(*v);
  }

  const auto& hc = s.field.config();
  w.put<std::uint64_t>(hc.multipliers.size());
  for (int m : hc.multipliers) w.put<std::int32_t>(m);
  for (int r : hc.base_resolution) w.put<std::int32_t>(r);
  w.put<std::int32_t>(hc.feat_dim);
  for (int a = 0; a < 3; ++a) w.put<double>(s.field.aabb().min[a]);
  for (int a = 0; a < 3; ++a) w.put<double>(s.field.aabb().max[a]);
  w.put_vec(s.field.values());

  const auto& nc = s.net.config;
  for (std::size_t v : {nc.input_dim, nc.width, nc.depth, nc.feature_dim, nc.semantic_hidden}) w.put<std::uint64_t>(v);
  w.put<std::uint8_t>(nc.enable_hexplane);
  w.put<std::uint8_t>(nc.enable_f_feat);
  for (const Mlp* m : s.net.all()) detail::put_mlp(w, *m);

  w.put<std::uint64_t>(s.decoder.in_channels);
  w.put<std::uint64_t>(s.decoder.out_channels);
  w.put_vec(s.decoder.weight);
  w.put_vec(s.decoder.bias);

  const auto& m = s.moments;
  for (const AdamState* a : {&m.position, &m.rotation, &m.scaling, &m.opacity, &m.color, &m.feature}) {
    detail::put_adam(w, *a);
  }
  detail::put_adam(w, s.grid_moments);
  for (const auto& a : s.net_moments) detail::put_adam(w, a);
  detail::put_adam(w, s.decoder_moments);
  w.put_vec(s.grad_stats.accum);
  w.put_vec(s.grad_stats.count);
  return std::move(w.bytes());
}

/// Decodes into a fresh state; nothing is returned unless every field parsed.
inline TrainState decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes.size() <= i || bytes[i] != kCheckpointMagic[i]) throw FormatError("checkpoint has bad magic", i);
  }
  r.get<std::array<char, 4>>("magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      4);
  }
  TrainState s;
  s.config_hash = r.get<std::uint64_t>("config hash");
  const auto stage = r.get<std::uint8_t>("stage");
  if (stage > 2) throw FormatError("checkpoint: unknown stage code", r.pos() - 1);
  s.stage = static_cast<Stage>(stage);
  s.iteration = r.get<std::int64_t>("iteration");
  s.stage_iteration = r.get<std::int64_t>("stage iteration");
  s.frame_offset = r.get<std::uint64_t>("frame offset");
  s.scene_extent = r.get<double>("scene extent");
  const auto rng_state = r.get<std::uint64_t>("rng state");
  const auto rng_inc = r.get<std::uint64_t>("rng increment");
  s.rng.restore(rng_state, rng_inc);

  const auto k = r.get<std::uint64_t>("Gaussian count");
  const auto n = r.get<std::uint64_t>("feature width");
  GaussianCloud& c = s.cloud;
  c.feature_dim = n;
  c.positions = r.get_vec("positions", k * 3);
  c.rotations = r.get_vec("rotations", k * 4);
  c.log_scales = r.get_vec("log scales", k * 3);
  c.opacity_logits = r.get_vec("opacity logits", k);
  c.colors = r.get_vec("colors", k * 3);
  c.features = r.get_vec("features", k * n);

  HexPlaneConfig hc;
  const auto levels = r.get<std::uint64_t>("HexPlane levels");
  if (levels == 0 || levels > 64) throw FormatError("checkpoint: implausible HexPlane level count", r.pos() - 8);
  hc.multipliers.clear();
  for (std::uint64_t l = 0; l < levels; ++l) hc.multipliers.push_back(r.get<std::int32_t>("HexPlane multiplier"));
  for (int& v : hc.base_resolution) v = r.get<std::int32_t>("HexPlane resolution");
  hc.feat_dim = r.get<std::int32_t>("HexPlane channels");
  Aabb box;
  for (int a = 0; a < 3; ++a) box.min[a] = r.get<double>("HexPlane bounds");
  for (int a = 0; a < 3; ++a) box.max[a] = r.get<double>("HexPlane bounds");
  try {
    s.field = HexPlaneField(hc, box);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), r.pos());
  }
  const auto values = r.get_vec("HexPlane values", s.field.num_values());
  std::copy(values.begin(), values.end(), s.field.mutable_values().begin());

  DeformationConfig& nc = s.net.config;
  for (std::size_t* v : {&nc.input_dim, &nc.width, &nc.depth, &nc.feature_dim, &nc.semantic_hidden}) {
    *v = r.get<std::uint64_t>("network config");
  }
  nc.enable_hexplane = r.get<std::uint8_t>("network flags") != 0;
  nc.enable_f_feat = r.get<std::uint8_t>("network flags") != 0;
  for (Mlp* m : s.net.all()) *m = detail::get_mlp(r);

  s.decoder.in_channels = r.get<std::uint64_t>("decoder width");
  s.decoder.out_channels = r.get<std::uint64_t>("decoder width");
  s.decoder.weight = r.get_vec("decoder weight", s.decoder.in_channels * s.decoder.out_channels);
  s.decoder.bias = r.get_vec("decoder bias", s.decoder.out_channels);

  GaussianMoments& m = s.moments;
  m.position = detail::get_adam(r, k * 3);
  m.rotation = detail::get_adam(r, k * 4);
  m.scaling = detail::get_adam(r, k * 3);
  m.opacity = detail::get_adam(r, k);
  m.color = detail::get_adam(r, k * 3);
  m.feature = detail::get_adam(r, k * n);
  s.grid_moments = detail::get_adam(r, s.field.num_values());
  for (const Mlp* net : s.net.all()) s.net_moments.push_back(detail::get_adam(r, net->num_params()));
  s.decoder_moments = detail::get_adam(r, s.decoder.num_params());
  s.grad_stats.accum = r.get_vec("gradient statistics", k);
  s.grad_stats.count = r.get_vec("gradient statistics", k);
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return s;
}

inline void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  detail::write_all(path, encode_checkpoint(s));
}

inline TrainState load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_all(path)); }

}  // namespace fe4dgs
