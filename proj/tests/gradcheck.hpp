#pragma once

#include "oisa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace oisa::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

// Central-difference oracle: perturbs `n_coords` random entries of `param`
// and compares d loss / d entry against the analytic gradient.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss_fn, ag::Var param, int n_coords,
                                  std::uint64_t seed, double step = 1e-5) {
  param.zero_grad();
  ag::Var loss = loss_fn();
  ag::backward(loss);
  const ag::Mat analytic = param.grad().size() ? param.grad() : ag::Mat::Zero(param.rows(), param.cols());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, param.value().size() - 1);
  GradCheckResult out;
  ag::NoGradGuard no_grad;
  for (int i = 0; i < n_coords; ++i) {
    const Eigen::Index idx = pick(rng);
    double& x = param.mutable_value().data()[idx];
    const double saved = x;
    x = saved + step;
    const double up = loss_fn().item();
    x = saved - step;
    const double down = loss_fn().item();
    x = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.data()[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
    ++out.checked;
  }
  return out;
}

}  // namespace oisa::testing
