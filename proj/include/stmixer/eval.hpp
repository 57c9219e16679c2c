#pragma once

#include <algorithm>
#include <vector>

#include "stmixer/decoder.hpp"
#include "stmixer/synthdata.hpp"

namespace stmixer {

struct ClassEval {
  double ap = 0.0;
  int64_t gt_count = 0;
  int64_t det_count = 0;
};

struct EvalReport {
  std::vector<ClassEval> per_class;  // indexed by class id
  double map = 0.0;                  // mean over classes with >= 1 ground truth
  int64_t classes_in_mean = 0;
};

namespace detail {

struct RankedDet {
  double score;
  int64_t clip;
  int64_t index_in_clip;  // tie-break: earlier detections first
  Box box;
};

/// All-point interpolated AP: area under the precision envelope of the
/// exact PR staircase.
inline double average_precision(std::vector<char>& is_tp, int64_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> precisions;
  int64_t tp = 0;
  for (size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) {
      ++tp;
      precisions.push_back(double(tp) / double(i + 1));
    } else {
      precisions.push_back(0.0);  // placeholder; only TP ranks add recall
    }
  }
  // suffix max over precision at every rank, then sum at TP ranks
  double best = 0.0;
  std::vector<double> envelope(is_tp.size(), 0.0);
  int64_t running_tp = 0;
  std::vector<double> raw(is_tp.size(), 0.0);
  for (size_t i = 0; i < is_tp.size(); ++i) {
    if (is_tp[i]) ++running_tp;
    raw[i] = double(running_tp) / double(i + 1);
  }
  for (size_t i = is_tp.size(); i-- > 0;) {
    best = std::max(best, raw[i]);
    envelope[i] = best;
  }
  double ap = 0.0;
  for (size_t i = 0; i < is_tp.size(); ++i)
    if (is_tp[i]) ap += envelope[i] / double(n_gt);
  return ap;
}

}  // namespace detail

/// AVA-style frame-level mean average precision: each (box, class, score)
/// is an independent detection ranked by the class score; a detection is a
/// true positive if it clears the IoU threshold against a not-yet-matched
/// ground truth of that class in its clip. Classes with no ground truth
/// are excluded from the mean.
inline EvalReport frame_map(const std::vector<std::vector<Detection>>& per_clip_detections,
                            const std::vector<std::vector<GroundTruth>>& per_clip_gts,
                            int64_t classes, double iou_threshold = 0.5) {
  if (per_clip_detections.size() != per_clip_gts.size())
    throw DimensionError("frame_map: detections and ground truths cover different clip counts");
  EvalReport report;
  report.per_class.resize(size_t(classes));
  for (int64_t c = 0; c < classes; ++c) {
    ClassEval& ce = report.per_class[size_t(c)];
    std::vector<detail::RankedDet> dets;
    int64_t n_gt = 0;
    for (size_t clip = 0; clip < per_clip_gts.size(); ++clip) {
      for (const GroundTruth& g : per_clip_gts[clip])
        if (g.labels.count(int(c))) ++n_gt;
      const auto& clip_dets = per_clip_detections[clip];
      for (size_t i = 0; i < clip_dets.size(); ++i)
        dets.push_back(detail::RankedDet{clip_dets[i].action_scores[size_t(c)], int64_t(clip),
                                         int64_t(i), clip_dets[i].box});
    }
    ce.gt_count = n_gt;
    ce.det_count = int64_t(dets.size());
    if (n_gt == 0) continue;
    std::sort(dets.begin(), dets.end(), [](const detail::RankedDet& a, const detail::RankedDet& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.clip != b.clip) return a.clip < b.clip;
      return a.index_in_clip < b.index_in_clip;
    });
    // greedy match: best still-unmatched gt of this class within the clip
    std::vector<std::vector<char>> taken(per_clip_gts.size());
    for (size_t clip = 0; clip < per_clip_gts.size(); ++clip)
      taken[clip].assign(per_clip_gts[clip].size(), 0);
    std::vector<char> is_tp(dets.size(), 0);
    for (size_t di = 0; di < dets.size(); ++di) {
      const detail::RankedDet& d = dets[di];
      const auto& gts = per_clip_gts[size_t(d.clip)];
      double best_iou = 0.0;
      int best_j = -1;
      for (size_t j = 0; j < gts.size(); ++j) {
        if (!gts[j].labels.count(int(c)) || taken[size_t(d.clip)][j]) continue;
        double v = iou(d.box, gts[j].box);
        if (v > best_iou) {
          best_iou = v;
          best_j = int(j);
        }
      }
      if (best_j >= 0 && best_iou >= iou_threshold) {
        is_tp[di] = 1;
        taken[size_t(d.clip)][size_t(best_j)] = 1;
      }
    }
    ce.ap = detail::average_precision(is_tp, n_gt);
  }
  double sum = 0.0;
  int64_t counted = 0;
  for (const ClassEval& ce : report.per_class)
    if (ce.gt_count > 0) {
      sum += ce.ap;
      ++counted;
    }
  report.classes_in_mean = counted;
  report.map = counted > 0 ? sum / double(counted) : 0.0;
  return report;
}

}  // namespace stmixer
