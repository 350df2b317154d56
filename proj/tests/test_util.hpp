// Shared helpers for the record-based test suites.
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "inavit/fdcheck.hpp"
#include "inavit/record.hpp"
#include "inavit/rng.hpp"
#include "inavit/tensor.hpp"

namespace testutil {

using inavit::ComputationRecord;
using inavit::Tensor;

inline Tensor<double> rand_tensor(inavit::Rng& rng, int r, int c,
                                  double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(r, c);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Fixed pseudo-random projection of a matrix to a scalar so the loss
/// depends on every entry with distinct weights.
inline Tensor<double> weighted_sum(ComputationRecord<double>& rec,
                                   const Tensor<double>& node) {
  Tensor<double> w(node.rows(), node.cols());
  for (int i = 0; i < node.rows(); ++i)
    for (int j = 0; j < node.cols(); ++j)
      w.at(i, j) = 0.25 + 0.071 * ((i * 31 + j * 17) % 13);
  return rec.sum_all(rec.mul(node, rec.constant(w)));
}

using Handles = std::map<std::string, Tensor<double>>;
using GraphBuilder =
    std::function<Tensor<double>(ComputationRecord<double>&, Handles&)>;

/// Builds the graph twice: once for reverse-mode, once inside the
/// finite-difference probe; asserts agreement on every parameter.
inline void check_grads(const inavit::ParamMap& theta,
                        const GraphBuilder& build, double tol = 1e-5,
                        double eps = 1e-4) {
  ComputationRecord<double> rec;
  Handles handles;
  for (const auto& [name, value] : theta)
    handles.emplace(name, rec.param(value, name));
  Tensor<double> loss = build(rec, handles);
  auto grads = rec.gradients(loss);

  auto objective = [&](const inavit::ParamMap& p) {
    ComputationRecord<double> r2;
    Handles h2;
    for (const auto& [name, value] : p) h2.emplace(name, r2.param(value, name));
    return build(r2, h2).at(0, 0);
  };
  auto fd = inavit::finite_difference_gradient(objective, theta, eps);
  auto cmp = inavit::compare_gradients(grads, fd);
  EXPECT_LE(cmp.max_rel_err, tol) << "worst entry: " << cmp.worst;
}

}  // namespace testutil
