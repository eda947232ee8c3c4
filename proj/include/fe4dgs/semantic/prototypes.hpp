#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/numerics/tensor.hpp"

namespace fe4dgs {

/// Integer class id per pixel, row-major. 0 is background; negative ids are
/// ignored by prototype fitting and metrics.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, int fill = 0) : height(h), width(w), labels(h * w, fill) {}

  int& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  bool operator==(const LabelMap&) const = default;
};

/// Nearest-neighbour resample: src = floor((dst + 0.5) * in / out).
inline LabelMap downsample_labels_nearest(const LabelMap& in, std::size_t out_h, std::size_t out_w) {
  if (in.height == 0 || in.width == 0 || out_h == 0 || out_w == 0) {
    throw ConfigError("downsample_labels_nearest: zero-sized label map");
  }
  LabelMap out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto sy = std::min(in.height - 1, (2 * y + 1) * in.height / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto sx = std::min(in.width - 1, (2 * x + 1) * in.width / (2 * out_w));
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

struct ClassPrototype {
  int class_id = 0;
  std::vector<double> direction;  // unit norm, teacher channels
  std::size_t support = 0;        // member pixels
};

/// Per-class unit mean directions; pixels are labelled when cosine >= tau.
struct ClassPrototypes {
  std::vector<ClassPrototype> classes;  // ascending class id
  double tau = 0.5;
  std::vector<std::string> warnings;

  std::size_t channels() const { return classes.empty() ? 0 : classes.front().direction.size(); }
};

/// Mean teacher-space feature per class over every member pixel of every
/// map, normalized. `features[i]` is [H, W, C] and `masks[i]` is H x W.
/// Classes listed in `class_ids` with no member pixels are skipped with a
/// warning.
inline ClassPrototypes fit_prototypes(const std::vector<Tensor>& features, const std::vector<LabelMap>& masks,
                                      const std::vector<int>& class_ids, double tau = 0.5) {
  if (features.size() != masks.size()) throw ConfigError("fit_prototypes: feature and mask counts differ");
  if (tau < -1.0 || tau > 1.0) throw ConfigError("fit_prototypes: tau must lie in [-1, 1]");
  ClassPrototypes out;
  out.tau = tau;
  if (features.empty()) {
    out.warnings.push_back("no feature maps supplied; no prototypes fitted");
    return out;
  }
  const std::size_t c = features.front().dim(2);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Tensor& f = features[i];
    if (f.rank() != 3 || f.dim(2) != c) throw ConfigError("fit_prototypes: inconsistent feature channels");
    if (f.dim(0) != masks[i].height || f.dim(1) != masks[i].width) {
      throw ConfigError("fit_prototypes: mask " + std::to_string(i) + " is not aligned with its feature map");
    }
  }
  for (int id : class_ids) {
    std::vector<double> sum(c, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const Tensor& f = features[i];
      for (std::size_t p = 0; p < masks[i].labels.size(); ++p) {
        if (masks[i].labels[p] != id) continue;
        const double* v = f.data() + p * c;
        for (std::size_t ch = 0; ch < c; ++ch) sum[ch] += v[ch];
        ++count;
      }
    }
    if (count == 0) {
      out.warnings.push_back("class " + std::to_string(id) + " has no pixels; excluded");
      continue;
    }
    double norm = 0.0;
    for (double v : sum) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      out.warnings.push_back("class " + std::to_string(id) + " has a zero mean feature; excluded");
      continue;
    }
    for (double& v : sum) v /= norm;
    out.classes.push_back({id, std::move(sum), count});
  }
  std::sort(out.classes.begin(), out.classes.end(),
            [](const ClassPrototype& a, const ClassPrototype& b) { return a.class_id < b.class_id; });
  return out;
}

/// Cosine argmax against the prototypes. Below tau the pixel is background
/// (0). Ties resolve to the lower class id; a zero feature has cosine 0.
inline LabelMap segment(const Tensor& features, const ClassPrototypes& protos) {
  if (protos.classes.empty()) throw ConfigError("segment: no prototypes");
  if (features.rank() != 3 || features.dim(2) != protos.channels()) {
    throw ConfigError("segment: feature map " + features.shape_string() + " does not have " +
                      std::to_string(protos.channels()) + " channels");
  }
  const std::size_t c = features.dim(2);
  LabelMap out(features.dim(0), features.dim(1));
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    const double* v = features.data() + p * c;
    double norm = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) norm += v[ch] * v[ch];
    norm = std::sqrt(norm);
    double best = -2.0;
    int best_id = 0;
    for (const auto& proto : protos.classes) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += v[ch] * proto.direction[ch];
      const double cosine = norm > 0.0 ? dot / norm : 0.0;
      if (cosine > best) {
        best = cosine;
        best_id = proto.class_id;
      }
    }
    out.labels[p] = best >= protos.tau ? best_id : 0;
  }
  return out;
}

}  // namespace fe4dgs
