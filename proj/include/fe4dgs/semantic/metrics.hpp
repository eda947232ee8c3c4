#pragma once

#include <cmath>
#include <vector>

#include "fe4dgs/errors.hpp"
#include "fe4dgs/semantic/prototypes.hpp"

namespace fe4dgs {

struct ClassScores {
  int class_id = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t support = 0;  // ground-truth pixels of this class
  double iou = 0, dsc = 0, recall = 0, precision = 0;
};

struct SegMetrics {
  std::vector<ClassScores> per_class;
  ClassScores aggregate;  // support-weighted mean; counts summed
};

namespace detail {

/// A 0/0 ratio is perfect agreement when the class is absent from both maps.
inline double safe_ratio(double num, double den, bool absent) { return den > 0.0 ? num / den : (absent ? 1.0 : 0.0); }

}  // namespace detail

/// Scores from per-class confusion counts, in `counts` order.
inline SegMetrics scores_from_counts(std::vector<ClassScores> counts) {
  SegMetrics out;
  double weight = 0.0;
  for (ClassScores& s : counts) {
    s.support = s.tp + s.fn;
    const bool absent = s.tp + s.fp + s.fn == 0;
    const auto tp = static_cast<double>(s.tp), fp = static_cast<double>(s.fp), fn = static_cast<double>(s.fn);
    s.iou = detail::safe_ratio(tp, tp + fp + fn, absent);
    s.dsc = detail::safe_ratio(2 * tp, 2 * tp + fp + fn, absent);
    s.recall = detail::safe_ratio(tp, tp + fn, absent);
    s.precision = detail::safe_ratio(tp, tp + fp, absent);
    out.aggregate.tp += s.tp;
    out.aggregate.fp += s.fp;
    out.aggregate.fn += s.fn;
    out.aggregate.support += s.support;
    const auto w = static_cast<double>(s.support);
    out.aggregate.iou += w * s.iou;
    out.aggregate.dsc += w * s.dsc;
    out.aggregate.recall += w * s.recall;
    out.aggregate.precision += w * s.precision;
    weight += w;
    out.per_class.push_back(s);
  }
  if (weight > 0.0) {
    out.aggregate.iou /= weight;
    out.aggregate.dsc /= weight;
    out.aggregate.recall /= weight;
    out.aggregate.precision /= weight;
  }
  return out;
}

/// Confusion counts pooled over every map pair, then scored per class in
/// `classes`. Pixels whose ground truth is negative are ignored.
inline SegMetrics seg_metrics(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& gt,
                              const std::vector<int>& classes) {
  if (pred.size() != gt.size()) throw ConfigError("seg_metrics: prediction and ground-truth counts differ");
  std::vector<ClassScores> counts(classes.size());
  for (std::size_t c = 0; c < classes.size(); ++c) counts[c].class_id = classes[c];
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i].height != gt[i].height || pred[i].width != gt[i].width) {
      throw ConfigError("seg_metrics: label maps differ in shape");
    }
    for (std::size_t p = 0; p < gt[i].labels.size(); ++p) {
      const int g = gt[i].labels[p], q = pred[i].labels[p];
      if (g < 0) continue;
      for (ClassScores& s : counts) {
        s.tp += g == s.class_id && q == s.class_id;
        s.fp += g != s.class_id && q == s.class_id;
        s.fn += g == s.class_id && q != s.class_id;
      }
    }
  }
  return scores_from_counts(std::move(counts));
}

/// Scores for a single prediction / ground-truth pair.
inline SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& gt, const std::vector<int>& classes) {
  return seg_metrics(std::vector<LabelMap>{pred}, std::vector<LabelMap>{gt}, classes);
}

/// Largest |DSC - 2 IoU / (1 + IoU)| over the per-class scores.
inline double dsc_iou_discrepancy(const SegMetrics& m) {
  double worst = 0.0;
  for (const auto& s : m.per_class) worst = std::max(worst, std::abs(s.dsc - 2.0 * s.iou / (1.0 + s.iou)));
  return worst;
}

}  // namespace fe4dgs
