#pragma once

#include <utility>
#include <vector>

#include "stmixer/config.hpp"
#include "stmixer/geometry.hpp"
#include "stmixer/losses.hpp"
#include "stmixer/mixer.hpp"
#include "stmixer/sampler.hpp"

namespace stmixer {

/// Keyframe detection: a box, the human confidence, and per-class action
/// scores. Emitted only when human_prob clears the threshold.
struct Detection {
  Box box;
  double human_prob = 0.0;
  std::vector<double> action_scores;
};

/// Everything one ASAM module leaves behind, kept on the tape for
/// intermediate supervision and exportable for visualization.
struct Stage {
  QuerySet queries;
  SamplingPoints points;
  Tensor boxes;          // [N, 4] corners decoded from the positional queries
  Tensor human_logits;   // [N, 2]
  Tensor action_logits;  // [N, C]

  StageOutputs outputs() const { return StageOutputs{boxes, human_logits, action_logits}; }
};

using StageTrace = std::vector<Stage>;

/// One adaptive-sampling / adaptive-mixing decoder block: self-attention on
/// both query sets, query-guided sampling from the 4D feature space,
/// dual-branch mixing, and an FFN update of the positional queries.
class AsamModule {
 public:
  AsamModule() = default;
  AsamModule(const std::string& name, const TrainConfig& cfg, Rng& rng)
      : attn_s_(name + ".attn_s", cfg.d, int(cfg.heads), rng),
        attn_t_(name + ".attn_t", cfg.d, int(cfg.heads), rng),
        mixer_(name + ".mixer", cfg.d, cfg.groups, cfg.effective_p_in(), cfg.p_out, cfg.data.t,
               cfg.t_out, rng),
        pos_ffn_(name + ".pos_ffn", cfg.d, cfg.d, 4, rng, /*zero_init_last=*/true),
        sampling_(sampling_strategy_from(cfg.sampling)),
        temporal_(temporal_mode_from(cfg.temporal)),
        mixing_(mixing_strategy_from(cfg.mixing)),
        groups_(cfg.groups),
        grid_(int(cfg.grid)),
        frames_(cfg.data.t) {
    if (sampling_ == SamplingStrategy::kAdaptive)
      sampler_ = SamplerHead(name + ".sampler", cfg.d, cfg.groups, cfg.p_in, rng);
    if (temporal_ == TemporalMode::kMove)
      move_head_ = Linear(name + ".move_head", cfg.d, cfg.data.t * 4, rng, -1.0, /*zero_init=*/true);
  }

  /// Queries in, updated queries out; also reports where it sampled.
  std::pair<QuerySet, SamplingPoints> forward(const QuerySet& queries,
                                              const FeatureSpace4D& space) const {
    Tensor qs = attn_s_.forward(queries.spatial);
    Tensor qt = attn_t_.forward(queries.temporal);

    Tensor offsets = sampling_ == SamplingStrategy::kAdaptive
                         ? sampler_.regress(qs)
                         : lattice_offsets(queries.count(), groups_, grid_);
    SamplingPoints points =
        temporal_ == TemporalMode::kCopy
            ? propagate_copy(decode_points(queries.positional, offsets), frames_)
            : propagate_move(queries.positional, offsets,
                             reshape(move_head_.forward(qs), {queries.count(), frames_, 4}));
    Tensor sampled = sample_4d(space, points);

    auto [qs2, qt2] = mixer_.mix(qs, qt, sampled, mixing_);
    Tensor qp2 = apply_box_deltas(queries.positional, pos_ffn_.forward(qs2));
    return {QuerySet{qs2, qt2, qp2}, points};
  }

  void visit(const ParamVisitor& v) {
    attn_s_.visit(v);
    attn_t_.visit(v);
    if (sampling_ == SamplingStrategy::kAdaptive) sampler_.visit(v);
    if (temporal_ == TemporalMode::kMove) move_head_.visit(v);
    mixer_.visit(v);
    pos_ffn_.visit(v);
  }

  const MixerBlock& mixer() const { return mixer_; }

 private:
  SelfAttentionBlock attn_s_, attn_t_;
  SamplerHead sampler_;
  Linear move_head_;
  MixerBlock mixer_;
  Ffn pos_ffn_;
  SamplingStrategy sampling_ = SamplingStrategy::kAdaptive;
  TemporalMode temporal_ = TemporalMode::kCopy;
  MixingStrategy mixing_ = MixingStrategy::kDual;
  int64_t groups_ = 1;
  int grid_ = 7;
  int64_t frames_ = 1;
};

/// Prediction heads, shared across decoder stages. The short-term action
/// head is optional: the long-term phase replaces it with the query-bank
/// classifier.
struct PredictionHeads {
  Ffn human;   // Q_s' -> [N, 2] logits (human, background)
  Ffn action;  // concat(Q_s', Q_t') -> [N, C] logits

  PredictionHeads() = default;
  PredictionHeads(const std::string& name, int64_t d, int64_t classes, Rng& rng,
                  bool with_action = true)
      : human(name + ".human", d, d, 2, rng) {
    if (with_action) action = Ffn(name + ".action", 2 * d, 2 * d, classes, rng);
  }

  Tensor predict_human(const Tensor& qs) const { return human.forward(qs); }

  Tensor predict_actions_short(const Tensor& qs, const Tensor& qt) const {
    if (!action.fc1.w.value.defined())
      throw ConfigError("predict_actions_short: this model has no short-term action head");
    return action.forward(concat({qs, qt}, 1));
  }

  void visit(const ParamVisitor& v) {
    human.visit(v);
    if (action.fc1.w.value.defined()) action.visit(v);
  }
};

/// Softmax human probability (column 0) from a [N, 2] logits tensor.
inline std::vector<double> human_probabilities(const Tensor& logits) {
  int64_t n = logits.dim(0);
  std::vector<double> out(size_t(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* l = logits.data() + i * 2;
    double m = std::max(l[0], l[1]);
    double e0 = std::exp(l[0] - m), e1 = std::exp(l[1] - m);
    out[size_t(i)] = e0 / (e0 + e1);
  }
  return out;
}

/// Detections from the last stage: decode boxes, filter by the human
/// threshold, sigmoid the action logits. Sparse set prediction, no NMS.
inline std::vector<Detection> detections_from_stage(const Stage& stage, double threshold) {
  std::vector<Detection> dets;
  std::vector<double> probs = human_probabilities(stage.human_logits);
  int64_t n = stage.human_logits.dim(0);
  int64_t classes = stage.action_logits.dim(1);
  for (int64_t i = 0; i < n; ++i) {
    if (!(probs[size_t(i)] > threshold)) continue;
    Detection d;
    const double* b = stage.boxes.data() + i * 4;
    d.box = Box{b[0], b[1], b[2], b[3]};
    d.human_prob = probs[size_t(i)];
    for (int64_t c = 0; c < classes; ++c) {
      double l = stage.action_logits.data()[i * classes + c];
      d.action_scores.push_back(l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                                         : std::exp(l) / (1.0 + std::exp(l)));
    }
    dets.push_back(std::move(d));
  }
  return dets;
}

}  // namespace stmixer
