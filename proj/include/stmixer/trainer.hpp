#pragma once

#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include "stmixer/eval.hpp"
#include "stmixer/manifest.hpp"
#include "stmixer/model.hpp"

namespace stmixer {

struct StepMetrics {
  int64_t step = 0;
  double cls = 0.0, l1 = 0.0, giou = 0.0, act = 0.0;
  double total = 0.0;
  double map = -1.0;  // train-set frame mAP when evaluated this step, else -1
};

struct TrainResult {
  std::unique_ptr<STMixerModel> model;
  Dataset dataset;
  std::vector<StepMetrics> metrics;

  double initial_loss() const { return metrics.front().total; }
  double final_loss() const { return metrics.back().total; }
};

/// Train-set (or held-out) frame mAP. For long-phase models the bank and
/// window length must be supplied so each clip gets its stacked context.
inline EvalReport evaluate(const STMixerModel& model, const Dataset& data, double iou_threshold = 0.5,
                           const QueryBank* bank = nullptr) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (auto [v, c] : data.flat_index()) {
    const ClipSample& clip = data.videos[size_t(v)][size_t(c)];
    if (model.is_long()) {
      if (bank == nullptr) throw ConfigError("evaluate: long-phase model needs a query bank");
      StackedWindow window = window_stack(*bank, v, c, model.config().window);
      dets.push_back(model.infer_long(clip.video, window, model.config().threshold));
    } else {
      dets.push_back(model.infer(clip.video, model.config().threshold));
    }
    gts.push_back(clip.gt);
  }
  return frame_map(dets, gts, model.classes(), iou_threshold);
}

namespace detail {

inline StepMetrics metrics_from(int64_t step, const LossBreakdown& lb) {
  StepMetrics m;
  m.step = step;
  for (const StageLossValues& s : lb.stages) {
    m.cls += s.cls;
    m.l1 += s.l1;
    m.giou += s.giou;
    m.act += s.act;
  }
  m.total = lb.total_value();
  return m;
}

inline void check_finite_loss(int64_t step, const StepMetrics& m) {
  if (std::isfinite(m.total)) return;
  std::ostringstream os;
  os << "train: non-finite loss at step " << step << " (cls=" << m.cls << ", l1=" << m.l1
     << ", giou=" << m.giou << ", act=" << m.act << ")";
  throw NumericError(os.str());
}

/// Runs the shared training loop. forward_fn maps a flat dataset index to
/// a StageTrace; eval_fn computes the train-set mAP for periodic logging.
/// Gradients optionally accumulate over grad_accum clips.
template <class ForwardFn, class EvalFn>
TrainResult run_training(const TrainConfig& cfg, Dataset dataset, std::unique_ptr<STMixerModel> model,
                         ForwardFn&& forward_fn, EvalFn&& eval_fn) {
  LossWeights lw{cfg.lambda_cls, cfg.lambda_l1, cfg.lambda_giou, cfg.lambda_act};
  auto flat = dataset.flat_index();
  if (flat.empty()) throw ConfigError("train: empty dataset");
  std::vector<Parameter*> params = model->parameters();
  std::vector<std::vector<double>> accum(params.size());

  TrainResult result;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    StepMetrics step_metrics;
    step_metrics.step = step;
    for (auto& a : accum) a.clear();
    for (int64_t micro = 0; micro < cfg.grad_accum; ++micro) {
      int64_t idx = (step * cfg.grad_accum + micro) % int64_t(flat.size());
      const ClipSample& clip = dataset.clip(flat[size_t(idx)]);
      StageTrace trace = forward_fn(flat[size_t(idx)], clip);
      std::vector<StageOutputs> outs;
      for (const Stage& s : trace) outs.push_back(s.outputs());
      LossBreakdown lb = total_loss_over(outs, clip.gt, lw, double(cfg.data.width),
                                         double(cfg.data.height), model->classes());
      StepMetrics m = metrics_from(step, lb);
      step_metrics.cls += m.cls / double(cfg.grad_accum);
      step_metrics.l1 += m.l1 / double(cfg.grad_accum);
      step_metrics.giou += m.giou / double(cfg.grad_accum);
      step_metrics.act += m.act / double(cfg.grad_accum);
      step_metrics.total += m.total / double(cfg.grad_accum);
      for (Parameter* p : params) p->value.clear_grad();
      lb.total.backward();
      for (size_t pi = 0; pi < params.size(); ++pi) {
        if (!params[pi]->value.has_grad()) continue;
        Tensor g = params[pi]->value.grad();
        if (accum[pi].empty()) accum[pi].assign(size_t(g.numel()), 0.0);
        for (int64_t i = 0; i < g.numel(); ++i) accum[pi][size_t(i)] += g.data()[i] / double(cfg.grad_accum);
      }
    }
    check_finite_loss(step, step_metrics);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      if (accum[pi].empty()) continue;  // parameter did not participate
      adamw_step(*params[pi], Tensor::of(params[pi]->value.shape(), accum[pi]), cfg.optim);
    }
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
      step_metrics.map = eval_fn(*model, dataset);
    result.metrics.push_back(step_metrics);
  }
  result.model = std::move(model);
  result.dataset = std::move(dataset);
  return result;
}

}  // namespace detail

/// Short-term phase: seeded init, then per step
/// clip -> backbone -> feature space -> ASAM stack -> matched loss ->
/// backward -> AdamW, with per-stage loss breakdowns logged.
inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.phase != "short") throw ConfigError("train: config phase must be 'short'");
  Dataset dataset = build_dataset(cfg.data, cfg.clips, cfg.data_seed, cfg.video_len);
  auto model = std::make_unique<STMixerModel>(cfg, cfg.seed);
  STMixerModel* raw = model.get();
  return detail::run_training(
      cfg, std::move(dataset), std::move(model),
      [raw](const std::pair<int64_t, int64_t>&, const ClipSample& clip) {
        return raw->forward(clip.video);
      },
      [](const STMixerModel& m, const Dataset& d) { return evaluate(m, d).map; });
}

/// Long-term phase: identical loop but action scores come from the frozen
/// query bank through the long-term classifier; all weights re-initialize
/// from scratch.
inline TrainResult train_long(const TrainConfig& cfg, const QueryBank& bank) {
  cfg.validate();
  if (cfg.phase != "long") throw ConfigError("train_long: config phase must be 'long'");
  if (bank.d != 2 * cfg.d)
    throw ConfigError("train_long: bank width d=" + std::to_string(bank.d) +
                      " does not equal 2*D=" + std::to_string(2 * cfg.d));
  Dataset dataset = build_dataset(cfg.data, cfg.clips, cfg.data_seed, cfg.video_len);
  if (bank.videos() != int64_t(dataset.videos.size()))
    throw ConfigError("train_long: bank covers " + std::to_string(bank.videos()) +
                      " videos, dataset has " + std::to_string(dataset.videos.size()));
  auto model = std::make_unique<STMixerModel>(cfg, cfg.seed);
  STMixerModel* raw = model.get();
  int64_t window_len = cfg.window;
  return detail::run_training(
      cfg, std::move(dataset), std::move(model),
      [raw, &bank, window_len](const std::pair<int64_t, int64_t>& idx, const ClipSample& clip) {
        StackedWindow window = window_stack(bank, idx.first, idx.second, window_len);
        return raw->forward_long(clip.video, window);
      },
      [&bank](const STMixerModel& m, const Dataset& d) { return evaluate(m, d, 0.5, &bank).map; });
}

}  // namespace stmixer
