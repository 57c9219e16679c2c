#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stmixer/decoder.hpp"
#include "stmixer/longterm.hpp"

namespace stmixer {

/// The full detector: video backbone, 4D feature-space construction, a
/// stack of ASAM modules with shared prediction heads, and (long phase)
/// the query-bank classifier. One instance serves one forward/backward at
/// a time; construction is a pure function of (config, seed).
class STMixerModel {
 public:
  STMixerModel(const TrainConfig& cfg, uint64_t seed)
      : cfg_(cfg), classes_(ActionVocabulary::standard().count()) {
    cfg_.validate();
    Rng rng(splitmix64(seed ^ 0x517cc1b727220a95ull));
    backbone_ = Backbone(backbone_kind_from(cfg.backbone), "backbone", 1, rng);
    featspace_ = FeatureSpaceBuilder("featspace", backbone_.out_channels(), cfg.d, rng);
    QuerySet init = init_queries(cfg.queries, cfg.d, double(cfg.data.width),
                                 double(cfg.data.height), rng);
    query_s_ = Parameter("queries.spatial", init.spatial);
    query_t_ = Parameter("queries.temporal", init.temporal);
    query_p_ = Parameter("queries.positional", init.positional);
    for (int64_t m = 0; m < cfg.stages; ++m)
      modules_.emplace_back("asam" + std::to_string(m), cfg, rng);
    bool short_phase = cfg.phase == "short";
    heads_ = PredictionHeads("heads", cfg.d, classes_, rng, /*with_action=*/short_phase);
    if (!short_phase)
      long_head_ = LongTermClassifier("heads.long", 2 * cfg.d, classes_, cfg.ca_layers, cfg.heads,
                                      rng);
  }

  STMixerModel(const STMixerModel&) = delete;
  STMixerModel& operator=(const STMixerModel&) = delete;

  const TrainConfig& config() const { return cfg_; }
  int64_t classes() const { return classes_; }
  bool is_long() const { return cfg_.phase == "long"; }

  /// Short-term forward: one Stage per ASAM module, heads evaluated on
  /// every stage's outputs for intermediate supervision.
  StageTrace forward(const Tensor& video) const {
    return run(video, nullptr, nullptr);
  }

  /// Long-term forward: action scores come from cross-attention into the
  /// stacked query-bank window instead of the short-term FFN.
  StageTrace forward_long(const Tensor& video, const StackedWindow& window,
                          bool* used_fallback = nullptr) const {
    if (!is_long()) throw ConfigError("forward_long: model was built for the short phase");
    return run(video, &window, used_fallback);
  }

  std::vector<Detection> infer(const Tensor& video, double threshold) const {
    StageTrace trace = forward(video);
    return detections_from_stage(trace.back(), threshold);
  }

  std::vector<Detection> infer_long(const Tensor& video, const StackedWindow& window,
                                    double threshold) const {
    StageTrace trace = forward_long(video, window);
    return detections_from_stage(trace.back(), threshold);
  }

  /// Stable, construction-ordered parameter listing.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    const_cast<const STMixerModel*>(this)->visit([&out](Parameter& p) { out.push_back(&p); });
    return out;
  }

  void visit(const ParamVisitor& v) const {
    auto* self = const_cast<STMixerModel*>(this);
    self->backbone_.visit(v);
    self->featspace_.visit(v);
    v(self->query_s_);
    v(self->query_t_);
    v(self->query_p_);
    for (auto& m : self->modules_) m.visit(v);
    self->heads_.visit(v);
    if (is_long()) self->long_head_.visit(v);
  }

  const AsamModule& module(int64_t i) const { return modules_[size_t(i)]; }

 private:
  StageTrace run(const Tensor& video, const StackedWindow* window, bool* used_fallback) const {
    if (video.rank() != 4 || video.dim(0) != 1)
      throw DimensionError("forward: video must be [1,T,H,W], got " + shape_str(video.shape()));
    if (video.dim(1) != cfg_.data.t)
      throw ConfigError("forward: clip has " + std::to_string(video.dim(1)) +
                        " frames, model was built for " + std::to_string(cfg_.data.t));
    PyramidMaps maps = backbone_.forward(video);
    FeatureSpace4D space = featspace_.build(maps);
    QuerySet q{query_s_.value, query_t_.value, query_p_.value};
    StageTrace trace;
    for (const AsamModule& m : modules_) {
      auto [q2, points] = m.forward(q, space);
      q = q2;
      Stage stage;
      stage.queries = q;
      stage.points = points;
      stage.boxes = pquery_to_corners(q.positional);
      stage.human_logits = heads_.predict_human(q.spatial);
      if (window == nullptr) {
        stage.action_logits = heads_.predict_actions_short(q.spatial, q.temporal);
      } else {
        Tensor s_t = concat({q.spatial, q.temporal}, 1);
        stage.action_logits = long_head_.forward(s_t, *window, used_fallback);
      }
      trace.push_back(std::move(stage));
    }
    return trace;
  }

  TrainConfig cfg_;
  int64_t classes_ = 0;
  Backbone backbone_;
  FeatureSpaceBuilder featspace_;
  Parameter query_s_, query_t_, query_p_;
  std::vector<AsamModule> modules_;
  PredictionHeads heads_;
  LongTermClassifier long_head_;
};

/// Indices of the k highest human scores, ties broken by lower index.
inline std::vector<int64_t> top_k_by_score(const std::vector<double>& scores, int64_t k) {
  std::vector<int64_t> idx(scores.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = int64_t(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&scores](int64_t a, int64_t b) { return scores[size_t(a)] > scores[size_t(b)]; });
  idx.resize(size_t(k));
  return idx;
}

/// Offline bank construction: per clip, run the trained short-term model,
/// rank last-stage queries by human probability and store the top-k
/// concat(Q_s', Q_t') rows.
inline QueryBank build_bank(const STMixerModel& model,
                            const std::vector<std::vector<ClipSample>>& videos, int64_t k) {
  if (k > model.config().queries)
    throw ConfigError("build_bank: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(model.config().queries) + " queries per clip");
  if (model.is_long()) throw ConfigError("build_bank: needs a short-term model");
  QueryBank bank;
  bank.k = k;
  bank.d = 2 * model.config().d;
  for (const auto& video : videos) {
    std::vector<std::vector<double>> clips;
    for (const ClipSample& clip : video) {
      StageTrace trace = model.forward(clip.video);
      const Stage& last = trace.back();
      std::vector<double> probs = human_probabilities(last.human_logits);
      std::vector<int64_t> top = top_k_by_score(probs, k);
      int64_t d = model.config().d;
      std::vector<double> block(size_t(k * bank.d), 0.0);
      for (int64_t r = 0; r < k; ++r) {
        const double* qs = last.queries.spatial.data() + top[size_t(r)] * d;
        const double* qt = last.queries.temporal.data() + top[size_t(r)] * d;
        std::copy(qs, qs + d, block.begin() + r * bank.d);
        std::copy(qt, qt + d, block.begin() + r * bank.d + d);
      }
      clips.push_back(std::move(block));
    }
    bank.rows.push_back(std::move(clips));
  }
  return bank;
}

}  // namespace stmixer
