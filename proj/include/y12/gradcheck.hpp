#pragma once

// Central-difference gradient verification against the tape. fp64 only: the
// 1e-6 acceptance threshold is not meaningful at fp32.

#include <functional>

#include "y12/ops.hpp"

namespace y12 {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise a seeded subset per input, which is
  // what keeps wide composite blocks inside the time budget.
  std::size_t max_coords_per_input = 0;
  std::uint64_t coord_seed = 0x9a7dc0de;
};

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Returns max over checked coordinates of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double gradcheck(const GradCheckFn& f, const std::vector<Tensor<double>>& inputs,
                        const GradCheckOptions& opt = {}) {
  // Analytic pass: fresh leaves on a fresh tape.
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) {
    Tensor<double> leaf(in.shape(), in.values());
    leaf.set_requires_grad(true);
    leaves.push_back(std::move(leaf));
  }
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Tensor<double> out = f(leaves);
    Tensor<double> loss = out.numel() == 1 ? out : sum(out);
    loss.backward();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const auto* g = leaves[i].grad();
      analytic[i] = g ? *g : std::vector<double>(leaves[i].numel(), 0.0);
    }
  }

  // Numeric pass: central differences on detached copies, no tape active.
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tensor<double> out = f(xs);
    double acc = 0.0;
    for (double v : out.values()) acc += v;
    if (!std::isfinite(acc)) throw NumericError("gradcheck: non-finite function value");
    return acc;
  };

  double max_rel = 0.0;
  SplitMix64 pick(opt.coord_seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Tensor<double>> probe;
    probe.reserve(inputs.size());
    for (const auto& in : inputs) probe.push_back(in.clone());

    const std::size_t n = inputs[i].numel();
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_input == 0 || n <= opt.max_coords_per_input) {
      coords.resize(n);
      for (std::size_t c = 0; c < n; ++c) coords[c] = c;
    } else {
      coords.reserve(opt.max_coords_per_input);
      for (std::size_t c = 0; c < opt.max_coords_per_input; ++c)
        coords.push_back(static_cast<std::size_t>(pick.below(n)));
    }

    auto& vals = probe[i].values_mut();
    for (std::size_t c : coords) {
      const double saved = vals[c];
      vals[c] = saved + opt.eps;
      const double fp = eval(probe);
      vals[c] = saved - opt.eps;
      const double fm = eval(probe);
      vals[c] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double exact = analytic[i][c];
      if (!std::isfinite(numeric))
        throw NumericError("gradcheck: non-finite numeric gradient at input " +
                           std::to_string(i) + " coordinate " + std::to_string(c));
      const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
      max_rel = std::max(max_rel, std::abs(exact - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace y12
