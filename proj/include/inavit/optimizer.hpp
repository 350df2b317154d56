#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "inavit/tensor.hpp"

namespace inavit {

template <typename Real>
struct OptimizerState {
  std::map<std::string, Tensor<Real>> m;  // first moments
  std::map<std::string, Tensor<Real>> v;  // second moments
  int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW update over every parameter in `params`. Weight decay is
/// decoupled: applied straight to the parameter, never mixed into the
/// gradient moments. Moments are bias-corrected; arithmetic runs in double
/// regardless of the storage type.
template <typename Real>
void adamw_step(std::map<std::string, Tensor<Real>>& params,
                const std::map<std::string, Tensor<Real>>& grads,
                OptimizerState<Real>& state) {
  require(state.lr > 0.0, "adamw: lr must be positive");
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    require(git != grads.end(), "adamw: missing gradient for " + name);
    const Tensor<Real>& g = git->second;
    require(g.shape == p.shape, "adamw: gradient shape mismatch for " + name);
    Tensor<Real>& m =
        state.m.try_emplace(name, Tensor<Real>::zeros_like(p)).first->second;
    Tensor<Real>& v =
        state.v.try_emplace(name, Tensor<Real>::zeros_like(p)).first->second;
    require(m.shape == p.shape && v.shape == p.shape,
            "adamw: moment shape mismatch for " + name);
    for (size_t i = 0; i < p.data.size(); ++i) {
      double gi = static_cast<double>(g.data[i]);
      double mi = state.beta1 * static_cast<double>(m.data[i]) +
                  (1.0 - state.beta1) * gi;
      double vi = state.beta2 * static_cast<double>(v.data[i]) +
                  (1.0 - state.beta2) * gi * gi;
      m.data[i] = static_cast<Real>(mi);
      v.data[i] = static_cast<Real>(vi);
      double update = state.lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      double pi = static_cast<double>(p.data[i]);
      p.data[i] =
          static_cast<Real>(pi - state.lr * state.weight_decay * pi - update);
    }
  }
}

}  // namespace inavit
