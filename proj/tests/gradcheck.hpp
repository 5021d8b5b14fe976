#pragma once

// Test-only helpers: random tensors and a backprop vs. central-difference
// comparison.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "deepself/model.hpp"
#include "deepself/ops.hpp"
#include "deepself/tensor.hpp"

namespace deepself::testing {

inline Tensor64 random_tensor(std::mt19937& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor64(std::move(shape), std::move(v));
}

inline std::size_t random_dim(std::mt19937& rng, std::size_t lo = 1, std::size_t hi = 8) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Runs `loss_fn` once with the tape to get analytic grads for every tensor in
/// `wrt`, then perturbs each element in place for central differences.
/// Returns the worst relative error over all elements.
inline double max_gradient_error(const std::function<Tensor64()>& loss_fn, std::vector<Tensor64> wrt,
                                 double h = 1e-5) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double>::current().clear();
  auto loss = loss_fn();
  backward(loss);

  double worst = 0.0;
  for (auto& t : wrt) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const auto original = t.clone();
    auto numeric = finite_diff_grad<double>(
        [&](const Tensor64& probe) {
          std::copy(probe.data().begin(), probe.data().end(), t.mutable_data().begin());
          return loss_fn().item();
        },
        original, h);
    std::copy(original.data().begin(), original.data().end(), t.mutable_data().begin());
    for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

/// Whole-model check over parameters and input, batch of 3.
inline double model_gradient_error(const ModelSpec& spec, std::mt19937& rng) {
  auto m = Model64::init(spec);
  Shape batch_shape{3};
  batch_shape.insert(batch_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  const auto x = random_tensor(rng, batch_shape);
  std::vector<std::size_t> targets{0, 1, spec.n_classes - 1};
  std::vector<Tensor64> wrt;
  for (auto& p : m.parameters()) wrt.push_back(p.tensor);
  auto input = x.clone();
  wrt.push_back(input);
  return max_gradient_error([&] { return softmax_cross_entropy(m.forward(input, true).logits, targets).loss; }, wrt);
}

}  // namespace deepself::testing
