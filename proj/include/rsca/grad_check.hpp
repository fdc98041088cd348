#pragma once

// Central finite-difference oracle for the reverse-mode tape. Runs in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rsca/tensor.hpp"

namespace rsca {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros comparable.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the tape gradient of a scalar function against central differences for every
/// element of every input (or a seeded random subset of at most max_per_input elements each).
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                  double eps = 1e-4, std::size_t max_per_input = 0, std::uint64_t seed = 7) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<double> out = f();
  out.backward();

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (auto& in : inputs) {
    const std::vector<double> analytic = in.grad();
    std::vector<std::size_t> idx(in.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_input > 0 && idx.size() > max_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_input);
    }
    auto values = in.mutable_data();
    for (std::size_t i : idx) {
      const double saved = values[i];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + eps;
        plus = f().item();
        values[i] = saved - eps;
        minus = f().item();
        values[i] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      ++result.checked;
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return result;
}

/// Convenience: single input.
inline GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                                  double eps = 1e-4) {
  return grad_check([&f, &x]() { return f(x); }, {x}, eps);
}

}  // namespace rsca
