#pragma once

#include <limits>
#include <vector>

#include "stmixer/nn.hpp"

namespace stmixer {

/// Per-clip stores of the top-k decoded queries of a video: row block t
/// holds the concat(Q_s', Q_t') rows (width d = 2D) of the k highest human
/// scores of clip t, produced offline by a trained short-term model.
struct QueryBank {
  int64_t k = 0;
  int64_t d = 0;  // 2D
  // rows[video][clip] is a flat k*d block.
  std::vector<std::vector<std::vector<double>>> rows;

  int64_t videos() const { return int64_t(rows.size()); }
  int64_t clips(int64_t video) const { return int64_t(rows[size_t(video)].size()); }
};

/// Stacked window of Eq.-7 shape: K = w * k rows centered at clip t
/// (t - w/2 .. t + w/2 - 1). Out-of-range clips contribute zero rows whose
/// mask entries are -inf, so they receive exactly zero attention weight.
struct StackedWindow {
  Tensor rows;  // [K, d], constant (the bank is frozen input)
  Tensor mask;  // [K], 0 for valid rows, -inf for padding
  bool any_valid = false;
};

inline StackedWindow window_stack(const QueryBank& bank, int64_t video, int64_t t, int64_t w) {
  if (w < 2 || w % 2 != 0) throw ConfigError("window_stack: window length must be even and >= 2");
  if (video < 0 || video >= bank.videos()) throw ConfigError("window_stack: video out of range");
  int64_t n_clips = bank.clips(video);
  int64_t K = w * bank.k;
  StackedWindow out;
  out.rows = Tensor::zeros({K, bank.d});
  out.mask = Tensor::zeros({K});
  const double kNegInf = -std::numeric_limits<double>::infinity();
  for (int64_t s = 0; s < w; ++s) {
    int64_t clip = t - w / 2 + s;
    bool valid = clip >= 0 && clip < n_clips;
    for (int64_t r = 0; r < bank.k; ++r) {
      int64_t row = s * bank.k + r;
      if (valid) {
        const std::vector<double>& block = bank.rows[size_t(video)][size_t(clip)];
        std::copy(block.begin() + r * bank.d, block.begin() + (r + 1) * bank.d,
                  out.rows.data() + row * bank.d);
        out.any_valid = true;
      } else {
        out.mask.data()[row] = kNegInf;
      }
    }
  }
  return out;
}

/// Long-term classifier: stacked cross-attention layers from the current
/// queries S_t (width d = 2D) into the masked window, each with residual
/// and LayerNorm, then channel-wise concat with S_t and an FFN to C action
/// logits. A fully masked window falls back to the short-term path
/// (S' = S_t) and flags it.
class LongTermClassifier {
 public:
  LongTermClassifier() = default;
  LongTermClassifier(const std::string& name, int64_t d, int64_t classes, int64_t layers,
                     int64_t heads, Rng& rng) {
    for (int64_t i = 0; i < layers; ++i) {
      cross_.emplace_back(name + ".ca" + std::to_string(i), d, int(heads), rng);
      norms_.emplace_back(name + ".ln" + std::to_string(i), d);
    }
    head_ = Ffn(name + ".head", 2 * d, 2 * d, classes, rng);
  }

  Tensor forward(const Tensor& s_t, const StackedWindow& window, bool* used_fallback = nullptr) const {
    Tensor s_prime = s_t;
    bool fallback = !window.any_valid;
    if (!fallback) {
      for (size_t i = 0; i < cross_.size(); ++i)
        s_prime = norms_[i].forward(
            add(s_prime, cross_[i].forward(s_prime, window.rows, window.mask)));
    }
    if (used_fallback) *used_fallback = fallback;
    return head_.forward(concat({s_prime, s_t}, 1));
  }

  int64_t layers() const { return int64_t(cross_.size()); }

  void visit(const ParamVisitor& v) {
    for (auto& c : cross_) c.visit(v);
    for (auto& n : norms_) n.visit(v);
    head_.visit(v);
  }

 private:
  std::vector<MultiHeadAttention> cross_;
  std::vector<LayerNormBlock> norms_;
  Ffn head_;
};

}  // namespace stmixer
