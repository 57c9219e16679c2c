#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "stmixer/geometry.hpp"
#include "stmixer/synthdata.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

/// Injective prediction-to-ground-truth matching.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, gt index)
  std::vector<int> unmatched_predictions;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 2.0;
  double giou = 2.0;
  double act = 24.0;
  // Relative weight of the background class inside the human cross-entropy
  // (the standard sparse-detection counterweight to the many unmatched
  // queries; without it every query collapses to background).
  double background = 0.1;
};

namespace detail {

/// Shortest-augmenting-path assignment on a square matrix (row -> column),
/// exact for arbitrary finite real costs.
inline std::vector<int> solve_square_assignment(const std::vector<double>& a, int n) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
  std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(n) + 1, kInf);
    std::vector<char> used(size_t(n) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[size_t(j)]) continue;
        double cur = a[size_t(i0 - 1) * size_t(n) + size_t(j - 1)] - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(size_t(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[size_t(j)] > 0) row_to_col[size_t(p[size_t(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Optimal bipartite matching of an m x n cost matrix (rows = predictions,
/// columns = ground truths). The smaller side is padded with zero-cost
/// dummies, which leaves the real matching undistorted.
inline Assignment hungarian(const std::vector<double>& cost, int m, int n) {
  if (int(cost.size()) != m * n) throw DimensionError("hungarian: cost size != m*n");
  for (double c : cost)
    if (!std::isfinite(c)) throw NumericError("hungarian: non-finite cost entry");
  Assignment out;
  if (n == 0) {
    for (int i = 0; i < m; ++i) out.unmatched_predictions.push_back(i);
    return out;
  }
  int s = std::max(m, n);
  std::vector<double> sq(size_t(s) * size_t(s), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) sq[size_t(i) * size_t(s) + size_t(j)] = cost[size_t(i) * size_t(n) + size_t(j)];
  std::vector<int> row_to_col = detail::solve_square_assignment(sq, s);
  std::vector<char> matched(size_t(m), 0);
  for (int i = 0; i < m; ++i) {
    int j = row_to_col[size_t(i)];
    if (j >= 0 && j < n) {
      out.pairs.emplace_back(i, j);
      matched[size_t(i)] = 1;
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  for (int i = 0; i < m; ++i)
    if (!matched[size_t(i)]) out.unmatched_predictions.push_back(i);
  return out;
}

inline double assignment_cost(const Assignment& a, const std::vector<double>& cost, int n) {
  double total = 0.0;
  for (auto [i, j] : a.pairs) total += cost[size_t(i) * size_t(n) + size_t(j)];
  return total;
}

/// Matching cost per (prediction, ground truth):
///   lambda_cls * (-p_human) + lambda_l1 * |boxes|_1 + lambda_giou * (-giou)
/// with boxes normalized to [0,1] by the frame size for the L1 term.
inline std::vector<double> match_cost(const std::vector<double>& human_probs,
                                      const std::vector<Box>& pred_boxes,
                                      const std::vector<GroundTruth>& gts, const LossWeights& lw,
                                      double frame_w, double frame_h) {
  int m = int(pred_boxes.size()), n = int(gts.size());
  std::vector<double> cost(size_t(m) * size_t(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const Box& a = pred_boxes[size_t(i)];
      const Box& b = gts[size_t(j)].box;
      double l1 = std::fabs(a.x1 - b.x1) / frame_w + std::fabs(a.y1 - b.y1) / frame_h +
                  std::fabs(a.x2 - b.x2) / frame_w + std::fabs(a.y2 - b.y2) / frame_h;
      cost[size_t(i) * size_t(n) + size_t(j)] =
          lw.cls * (-human_probs[size_t(i)]) + lw.l1 * l1 + lw.giou * (-giou(a, b));
    }
  return cost;
}

/// Differentiable per-stage outputs the loss consumes.
struct StageOutputs {
  Tensor boxes;          // [N, 4] corner form, on the tape
  Tensor human_logits;   // [N, 2], column 0 = human, column 1 = background
  Tensor action_logits;  // [N, C]
};

struct StageLossValues {
  double cls = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  double act = 0.0;
  double total = 0.0;
};

struct StageLossResult {
  Tensor total;  // scalar, on the tape
  StageLossValues values;
  Assignment assignment;
};

/// Matches this stage independently and evaluates the set terms: cross-entropy
/// over {human, background} on all N predictions, L1+GIoU and BCE action
/// loss on matched pairs only. The matching is treated as a constant of
/// the backward pass.
inline StageLossResult stage_loss(const StageOutputs& stage, const std::vector<GroundTruth>& gts,
                                  const LossWeights& lw, double frame_w, double frame_h,
                                  int64_t classes) {
  int64_t n = stage.human_logits.dim(0);
  // Matching on detached values.
  std::vector<double> probs(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* l = stage.human_logits.data() + i * 2;
    double m = std::max(l[0], l[1]);
    double e0 = std::exp(l[0] - m), e1 = std::exp(l[1] - m);
    probs[size_t(i)] = e0 / (e0 + e1);
  }
  std::vector<Box> boxes;
  for (int64_t i = 0; i < n; ++i) {
    const double* b = stage.boxes.data() + i * 4;
    boxes.push_back(Box{b[0], b[1], b[2], b[3]});
  }
  StageLossResult res;
  res.assignment = hungarian(match_cost(probs, boxes, gts, lw, frame_w, frame_h), int(n),
                             int(gts.size()));

  // Human cross-entropy over all N predictions; background rows carry the
  // down-weighting and the mean is taken over the total class weight.
  Tensor lse = logsumexp_lastaxis(stage.human_logits);
  Tensor logp = sub_rowscalar(stage.human_logits, lse);
  Tensor onehot = Tensor::zeros({n, 2});
  for (int64_t i = 0; i < n; ++i) onehot.data()[i * 2 + 1] = lw.background;
  for (auto [pi, gi] : res.assignment.pairs) {
    onehot.data()[pi * 2 + 0] = 1.0;
    onehot.data()[pi * 2 + 1] = 0.0;
  }
  double matched = double(res.assignment.pairs.size());
  double weight_sum = matched + lw.background * (double(n) - matched);
  Tensor l_cls = mul_scalar(sum_all(mul(logp, onehot)), -1.0 / weight_sum);

  Tensor l_l1, l_giou, l_act;
  int64_t k = int64_t(res.assignment.pairs.size());
  if (k == 0) {
    l_l1 = Tensor::scalar(0.0);
    l_giou = Tensor::scalar(0.0);
    l_act = Tensor::scalar(0.0);
  } else {
    std::vector<int64_t> pred_idx;
    Tensor gt_boxes = Tensor::uninit({k, 4});
    Tensor gt_actions = Tensor::zeros({k, classes});
    for (int64_t p = 0; p < k; ++p) {
      auto [pi, gi] = res.assignment.pairs[size_t(p)];
      pred_idx.push_back(pi);
      const Box& b = gts[size_t(gi)].box;
      double* gb = gt_boxes.data() + p * 4;
      gb[0] = b.x1;
      gb[1] = b.y1;
      gb[2] = b.x2;
      gb[3] = b.y2;
      for (int c : gts[size_t(gi)].labels) gt_actions.data()[p * classes + c] = 1.0;
    }
    Tensor norm = Tensor::of({4}, {1.0 / frame_w, 1.0 / frame_h, 1.0 / frame_w, 1.0 / frame_h});
    Tensor pred_matched = gather_rows(stage.boxes, pred_idx);
    Tensor diff = abs_(sub(mul_lastaxis(pred_matched, norm), mul_lastaxis(gt_boxes, norm)));
    l_l1 = mul_scalar(sum_all(diff), 1.0 / double(k));
    l_giou = add_scalar(mul_scalar(sum_all(giou_pairs(pred_matched, gt_boxes)), -1.0 / double(k)),
                        1.0);
    Tensor act_matched = gather_rows(stage.action_logits, pred_idx);
    Tensor bce = sub(softplus(act_matched), mul(act_matched, gt_actions));
    l_act = mean_all(bce);
  }

  res.total = add(add(mul_scalar(l_cls, lw.cls), mul_scalar(l_l1, lw.l1)),
                  add(mul_scalar(l_giou, lw.giou), mul_scalar(l_act, lw.act)));
  res.values = StageLossValues{l_cls.value(), l_l1.value(), l_giou.value(), l_act.value(),
                               res.total.value()};
  return res;
}

struct LossBreakdown {
  Tensor total;  // scalar on the tape: sum of per-stage weighted losses
  std::vector<StageLossValues> stages;

  double total_value() const { return total.value(); }
};

/// Intermediate supervision: independent matching and loss per stage,
/// summed over the whole trace.
template <class StageRange>
LossBreakdown total_loss_over(const StageRange& stages, const std::vector<GroundTruth>& gts,
                              const LossWeights& lw, double frame_w, double frame_h,
                              int64_t classes) {
  LossBreakdown out;
  Tensor total;
  for (const StageOutputs& st : stages) {
    StageLossResult r = stage_loss(st, gts, lw, frame_w, frame_h, classes);
    out.stages.push_back(r.values);
    total = total.defined() ? add(total, r.total) : r.total;
  }
  if (!total.defined()) throw ConfigError("total_loss: empty stage trace");
  out.total = total;
  return out;
}

}  // namespace stmixer
