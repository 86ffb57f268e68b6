#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tipgnn/tensor.hpp"

namespace tipgnn {

/// Adam with L2 regularization folded into the gradients. Moment buffers
/// live here and persist across steps; bias correction uses the step count.
template <class T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double lr, double weight_decay = 0.0,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    detail::check(lr_ > 0, detail::str("adam: lr=", lr_, " not positive"));
    detail::check(wd_ >= 0, "adam: negative weight decay");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  /// One update from the gradients currently stored on the parameters.
  /// Throws on any non-finite gradient; the caller decides whether that
  /// aborts the epoch or the run.
  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<T>& p = params_[pi];
      const T* g = p.grad();
      T* w = p.mutable_data();
      T* m = m_[pi].data();
      T* v = v_[pi].data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi))
          throw Error(detail::str("optimizer: non-finite gradient in parameter ",
                                  pi, " at ", i, " (step ", t_, ")"));
        gi += wd_ * static_cast<double>(w[i]);
        double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
        double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t steps() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) {
    detail::check(lr > 0, "adam: lr must stay positive");
    lr_ = lr;
  }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

/// Value snapshot of a parameter list, for best-epoch restore.
template <class T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Tensor<T>>& params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.data(), p.data() + p.numel());
  return out;
}

template <class T>
void restore_params(std::vector<Tensor<T>>& params,
                    const std::vector<std::vector<T>>& snap) {
  detail::check(params.size() == snap.size(), "restore: parameter count changed");
  for (size_t i = 0; i < params.size(); ++i) {
    detail::check(params[i].numel() == static_cast<int64_t>(snap[i].size()),
                  "restore: parameter shape changed");
    std::copy(snap[i].begin(), snap[i].end(), params[i].mutable_data());
  }
}

}  // namespace tipgnn
