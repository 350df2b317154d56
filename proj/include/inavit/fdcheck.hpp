#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "inavit/tensor.hpp"

namespace inavit {

using ParamMap = std::map<std::string, Tensor<double>>;

/// Central-difference gradient of a scalar objective, one coordinate at a
/// time: (f(θ+εe) − f(θ−εe)) / 2ε. Wide precision only — single precision is
/// too noisy for the tolerances used downstream.
inline ParamMap finite_difference_gradient(
    const std::function<double(const ParamMap&)>& f, ParamMap theta,
    double eps = 1e-4) {
  require(eps > 0.0, "finite differences: eps must be positive");
  ParamMap out;
  for (auto& [name, t] : theta) {
    Tensor<double> g = Tensor<double>::zeros_like(t);
    for (size_t i = 0; i < t.data.size(); ++i) {
      double keep = t.data[i];
      t.data[i] = keep + eps;
      double fp = f(theta);
      t.data[i] = keep - eps;
      double fm = f(theta);
      t.data[i] = keep;
      require(std::isfinite(fp) && std::isfinite(fm),
              "finite differences: non-finite objective at " + name);
      g.data[i] = (fp - fm) / (2.0 * eps);
    }
    out[name] = std::move(g);
  }
  return out;
}

struct GradCompare {
  double max_rel_err = 0.0;
  std::string worst;  // "name[index]" of the worst coordinate
};

/// Largest relative disagreement between two gradient maps, with the usual
/// guarded denominator max(1, |a|, |b|). Missing entries or shape mismatches
/// are errors.
inline GradCompare compare_gradients(const ParamMap& a, const ParamMap& b) {
  require(a.size() == b.size(), "compare_gradients: key sets differ");
  GradCompare r;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    require(it != b.end(), "compare_gradients: missing entry " + name);
    const Tensor<double>& tb = it->second;
    require(ta.shape == tb.shape, "compare_gradients: shape mismatch at " + name);
    for (size_t i = 0; i < ta.data.size(); ++i) {
      double x = ta.data[i], y = tb.data[i];
      double den = std::max({1.0, std::fabs(x), std::fabs(y)});
      double rel = std::fabs(x - y) / den;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace inavit
