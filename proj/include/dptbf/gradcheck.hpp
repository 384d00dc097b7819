// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dptbf/autodiff.hpp"

namespace dptbf::ad {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error: |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// Check at most this many elements per input (evenly strided); 0 = all.
  Index max_per_input = 0;
};

struct GradcheckEntry {
  std::size_t input = 0;
  Index element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool finite = true;
  bool passed = false;
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Denominator floor for one central difference. Besides opts.abs_floor it
/// covers the stencil's own resolution: a few ulps of the loss over 2h is
/// the smallest derivative the difference can resolve, so discrepancies
/// below that are rounding, not gradient errors.
inline double resolution_floor(double up, double down, const GradcheckOptions& opts) {
  const double ulps = 8.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down));
  return std::max(opts.abs_floor, ulps / (2.0 * opts.step) / opts.tolerance);
}

/// Compares backward() against central differences of `fn`, which must map
/// the given leaf inputs to a scalar. Inputs are perturbed in place and restored.
template <typename Scalar>
GradcheckReport gradcheck(const std::function<Tensor<Scalar>()>& fn, std::vector<Tensor<Scalar>> inputs,
                          const GradcheckOptions& opts = {}) {
  GradcheckReport report;
  for (auto& x : inputs) x.zero_grad();
  const Tensor<Scalar> loss = fn();
  if (!std::isfinite(double(loss.item()))) {
    report.finite = false;
    report.max_rel_error = std::numeric_limits<double>::infinity();
    return report;
  }
  loss.backward();

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& x = inputs[i];
    const auto analytic = x.grad();
    const Index n = x.size();
    const Index stride = (opts.max_per_input > 0 && n > opts.max_per_input) ? n / opts.max_per_input : 1;
    for (Index k = 0; k < n; k += stride) {
      const Scalar saved = x.mutable_value()[k];
      x.mutable_value()[k] = saved + Scalar(opts.step);
      const double up = double(fn().item());
      x.mutable_value()[k] = saved - Scalar(opts.step);
      const double down = double(fn().item());
      x.mutable_value()[k] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      GradcheckEntry e{i, k, double(analytic[k]), numeric, 0.0};
      if (!std::isfinite(numeric) || !std::isfinite(e.analytic)) {
        report.finite = false;
        e.rel_error = std::numeric_limits<double>::infinity();
      } else {
        e.rel_error = relative_error(e.analytic, numeric, resolution_floor(up, down, opts));
      }
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(e);
    }
  }
  report.passed = report.finite && report.max_rel_error < opts.tolerance;
  return report;
}

/// Directional variant: for `directions` random unit vectors v over all
/// inputs, compares <grad, v> with (f(x + h v) - f(x - h v)) / 2h.
template <typename Scalar>
GradcheckReport gradcheck_directional(const std::function<Tensor<Scalar>()>& fn, std::vector<Tensor<Scalar>> inputs,
                                      int directions, std::uint64_t seed, const GradcheckOptions& opts = {}) {
  GradcheckReport report;
  for (auto& x : inputs) x.zero_grad();
  const Tensor<Scalar> loss = fn();
  if (!std::isfinite(double(loss.item()))) {
    report.finite = false;
    report.max_rel_error = std::numeric_limits<double>::infinity();
    return report;
  }
  loss.backward();
  std::vector<typename Tensor<Scalar>::Array> grads;
  for (auto& x : inputs) grads.push_back(x.grad());

  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  for (int d = 0; d < directions; ++d) {
    std::vector<typename Tensor<Scalar>::Array> dirs;
    double norm2 = 0.0;
    for (auto& x : inputs) {
      typename Tensor<Scalar>::Array v(x.size());
      for (Index k = 0; k < v.size(); ++k) v[k] = Scalar(gauss(rng));
      norm2 += double(v.square().sum());
      dirs.push_back(std::move(v));
    }
    const Scalar inv = Scalar(1.0 / std::sqrt(norm2));
    double analytic = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      dirs[i] *= inv;
      analytic += double((grads[i] * dirs[i]).sum());
    }
    std::vector<typename Tensor<Scalar>::Array> saved;
    for (auto& x : inputs) saved.push_back(x.value());
    auto shift = [&](double h) {
      for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].mutable_value() = saved[i] + Scalar(h) * dirs[i];
    };
    shift(opts.step);
    const double up = double(fn().item());
    shift(-opts.step);
    const double down = double(fn().item());
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].mutable_value() = saved[i];
    const double numeric = (up - down) / (2.0 * opts.step);
    GradcheckEntry e{0, d, analytic, numeric, relative_error(analytic, numeric, resolution_floor(up, down, opts))};
    if (!std::isfinite(numeric)) {
      report.finite = false;
      e.rel_error = std::numeric_limits<double>::infinity();
    }
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  report.passed = report.finite && report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace dptbf::ad
