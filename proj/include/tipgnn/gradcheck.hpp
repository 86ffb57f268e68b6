#pragma once

#include <random>
#include <string>
#include <vector>

#include "tipgnn/tensor.hpp"

namespace tipgnn {

struct GradCheckReport {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string worst;  // coordinate and values behind max_rel_err
  int64_t coords_checked = 0;
};

/// Central finite differences against reverse-mode gradients.
///
/// f must rebuild the loss from the current parameter values on every call
/// and return a scalar tensor. Relative error uses |a - n| / max(1, |a| + |n|)
/// so tiny gradients are compared absolutely. Use double precision tensors;
/// float loses too many digits for eps this small.
template <class T, class F>
GradCheckReport finite_diff_check(F&& f, const std::vector<Tensor<T>>& params,
                                  double eps = 1e-5, double tol = 1e-4,
                                  int64_t max_coords_per_tensor = -1,
                                  uint64_t sample_seed = 0) {
  GradCheckReport rep;

  for (auto& p : params) const_cast<Tensor<T>&>(p).zero_grad();
  Tensor<T> loss = f();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params)
    analytic.emplace_back(p.grad(), p.grad() + p.numel());

  std::mt19937_64 rng(sample_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = const_cast<Tensor<T>&>(params[pi]);
    int64_t n = p.numel();
    std::vector<int64_t> coords;
    if (max_coords_per_tensor < 0 || max_coords_per_tensor >= n) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::vector<int64_t> all(n);
      for (int64_t i = 0; i < n; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      coords.assign(all.begin(), all.begin() + max_coords_per_tensor);
    }
    for (int64_t i : coords) {
      T* buf = p.mutable_data();
      T saved = buf[i];
      double lp, lm;
      {
        NoGradGuard ng;
        buf[i] = saved + static_cast<T>(eps);
        lp = static_cast<double>(f().item());
        buf[i] = saved - static_cast<T>(eps);
        lm = static_cast<double>(f().item());
        buf[i] = saved;
      }
      double numeric = (lp - lm) / (2.0 * eps);
      double a = static_cast<double>(analytic[pi][i]);
      double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = detail::str("param ", pi, " coord ", i, ": analytic=", a,
                                " numeric=", numeric);
      }
    }
  }
  rep.ok = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace tipgnn
