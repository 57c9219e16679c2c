#pragma once

#include <functional>
#include <vector>

#include "stmixer/rng.hpp"
#include "stmixer/tensor.hpp"

namespace stmixer {

/// Scalar-valued function of a set of tensors.
using ScalarFn = std::function<Tensor(std::vector<Tensor>&)>;

namespace detail {

inline double rel_err(double analytic, double numeric) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
  return std::fabs(analytic - numeric) / denom;
}

inline double check_entries(const ScalarFn& f, std::vector<Tensor>& inputs, size_t which,
                            const std::vector<int64_t>& coords, const std::vector<double>& analytic,
                            double h) {
  double worst = 0.0;
  Tensor& t = inputs[which];
  for (int64_t c : coords) {
    double saved = t.data()[c];
    t.data()[c] = saved + h;
    double fp = f(inputs).value();
    t.data()[c] = saved - h;
    double fm = f(inputs).value();
    t.data()[c] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[size_t(c)], numeric));
  }
  return worst;
}

}  // namespace detail

/// Compares tape gradients of f against central finite differences,
/// entrywise over every input, and returns the worst relative error.
/// The error is |a - n| / max(|a|, |n|, 1e-4), so gradients smaller than
/// 1e-4 are compared absolutely.
inline double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Tensor y = f(inputs);
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad().values() : std::vector<double>(size_t(t.numel()), 0.0));
  double worst = 0.0;
  for (size_t w = 0; w < inputs.size(); ++w) {
    std::vector<int64_t> coords(size_t(inputs[w].numel()));
    for (size_t i = 0; i < coords.size(); ++i) coords[i] = int64_t(i);
    worst = std::max(worst, detail::check_entries(f, inputs, w, coords, analytic[w], h));
  }
  return worst;
}

/// Same check restricted to k seeded-random coordinates per input tensor;
/// used where full entrywise differencing would be too slow.
inline double grad_check_sampled(const ScalarFn& f, std::vector<Tensor> inputs, int k,
                                 uint64_t seed, double h = 1e-5) {
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Tensor y = f(inputs);
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : inputs)
    analytic.push_back(t.has_grad() ? t.grad().values() : std::vector<double>(size_t(t.numel()), 0.0));
  Rng rng(seed);
  double worst = 0.0;
  for (size_t w = 0; w < inputs.size(); ++w) {
    int64_t n = inputs[w].numel();
    std::vector<int64_t> coords;
    if (n <= k) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < k; ++i) coords.push_back(rng.uniform_int(0, n - 1));
    }
    worst = std::max(worst, detail::check_entries(f, inputs, w, coords, analytic[w], h));
  }
  return worst;
}

}  // namespace stmixer
