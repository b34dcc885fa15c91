#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "interloc/error.hpp"
#include "interloc/tensor.hpp"

namespace interloc::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of `params` in place; `t` is the 1-based step.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state,
               const AdamConfig& cfg, std::size_t t) {
  if (grads.size() != params.size()) throw ShapeMismatch("adam_step: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeMismatch("adam_step: state size mismatch");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

/// Adam over a fixed list of leaves; leaves without a gradient buffer are skipped.
template <typename T>
class Adam {
 public:
  Adam(std::vector<tensor::Var<T>> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg), state_(params_.size()) {}

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().empty()) continue;
      adam_step<T>(p.mutable_value().data(), p.grad().data(), state_[i], cfg_, t_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<tensor::Var<T>> params_;
  AdamConfig cfg_;
  std::vector<AdamState> state_;
  std::size_t t_ = 0;
};

}  // namespace interloc::optim
