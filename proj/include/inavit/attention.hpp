#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "inavit/record.hpp"
#include "inavit/tensor.hpp"

namespace inavit {

/// Max-subtraction softmax over a plain vector.
template <typename Real>
std::vector<Real> softmax(const std::vector<Real>& x) {
  require(!x.empty(), "softmax: empty input");
  for (Real v : x)
    require(std::isfinite(static_cast<double>(v)), "softmax: non-finite input");
  Real mx = x[0];
  for (Real v : x) mx = std::max(mx, v);
  std::vector<Real> out(x.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    s += static_cast<double>(out[i]);
  }
  Real inv = static_cast<Real>(1.0 / s);
  for (Real& v : out) v *= inv;
  return out;
}

/// Projections for one attention site. Handles into the active record.
template <typename Real>
struct AttentionParams {
  Tensor<Real> wq, wk, wv, wo;  // each d x d
  int heads = 1;
};

constexpr double kMaskSentinel = -1e30;

/// Per-key validity; empty means every key is valid.
using KeyMask = std::vector<uint8_t>;

template <typename Real>
struct Attend {
  Tensor<Real> out;      // m x d_h
  Tensor<Real> weights;  // m x n attention weights (record handle)
};

/// Scaled dot-product attention over already-projected single-head Q/K/V.
/// Queries and keys are each scaled by d_h^{-1/4} (so logits equal
/// <q,k>/sqrt(d_h)); masked keys get a -1e30 logit, which normalizes to a
/// weight of exactly zero.
template <typename Real>
Attend<Real> attend_full(ComputationRecord<Real>& rec, const Tensor<Real>& q,
                         const Tensor<Real>& k, const Tensor<Real>& v,
                         const KeyMask& key_mask = {}) {
  require(q.is2d() && k.is2d() && v.is2d(), "attend: operands must be 2-d");
  require(q.cols() == k.cols(), "attend: query/key width mismatch");
  require(k.rows() == v.rows(), "attend: key/value count mismatch");
  bool all_valid = key_mask.empty();
  if (!all_valid) {
    require(static_cast<int>(key_mask.size()) == k.rows(),
            "attend: mask length mismatch");
    int valid = 0;
    for (uint8_t m : key_mask) valid += m ? 1 : 0;
    require(valid > 0, "no valid keys");
    all_valid = valid == k.rows();
  }
  Real s = static_cast<Real>(
      1.0 / std::sqrt(std::sqrt(static_cast<double>(q.cols()))));
  Tensor<Real> logits =
      rec.matmul(rec.scale(q, s), rec.transpose(rec.scale(k, s)));
  if (!all_valid) {
    Tensor<Real> m(1, k.rows());
    for (int j = 0; j < k.rows(); ++j)
      m.data[j] = key_mask[j] ? Real(0) : static_cast<Real>(kMaskSentinel);
    logits = rec.add_row_vec(logits, rec.constant(m));
  }
  Tensor<Real> w = rec.row_softmax(logits);
  return {rec.matmul(w, v), w};
}

template <typename Real>
Tensor<Real> attend(ComputationRecord<Real>& rec, const Tensor<Real>& q,
                    const Tensor<Real>& k, const Tensor<Real>& v,
                    const KeyMask& key_mask = {}) {
  return attend_full(rec, q, k, v, key_mask).out;
}

template <typename Real>
void check_attention_params(const AttentionParams<Real>& p, int d) {
  require(p.heads >= 1 && d % p.heads == 0,
          "attention: head count must divide width");
  for (const Tensor<Real>* w : {&p.wq, &p.wk, &p.wv, &p.wo})
    require(w->is2d() && w->rows() == d && w->cols() == d,
            "attention: projection must be d x d");
}

template <typename Real>
struct MultiHeadAttend {
  Tensor<Real> out;                        // m x d
  std::vector<Tensor<Real>> head_weights;  // heads entries, each m x n
};

/// Project targets/sources, attend per head, concatenate, apply the output
/// projection. Self-attention is the call with targets == sources.
template <typename Real>
MultiHeadAttend<Real> multi_head_attend_full(ComputationRecord<Real>& rec,
                                             const AttentionParams<Real>& p,
                                             const Tensor<Real>& targets,
                                             const Tensor<Real>& sources,
                                             const KeyMask& key_mask = {}) {
  int d = targets.cols();
  require(sources.cols() == d, "multi_head_attend: width mismatch");
  check_attention_params(p, d);
  Tensor<Real> q = rec.matmul(targets, p.wq);
  Tensor<Real> k = rec.matmul(sources, p.wk);
  Tensor<Real> v = rec.matmul(sources, p.wv);
  int dh = d / p.heads;
  MultiHeadAttend<Real> r;
  Tensor<Real> cat;
  for (int h = 0; h < p.heads; ++h) {
    Attend<Real> a = attend_full(rec, rec.slice_cols(q, h * dh, (h + 1) * dh),
                                 rec.slice_cols(k, h * dh, (h + 1) * dh),
                                 rec.slice_cols(v, h * dh, (h + 1) * dh),
                                 key_mask);
    r.head_weights.push_back(a.weights);
    cat = h == 0 ? a.out : rec.concat_cols(cat, a.out);
  }
  r.out = rec.matmul(cat, p.wo);
  return r;
}

template <typename Real>
Tensor<Real> multi_head_attend(ComputationRecord<Real>& rec,
                               const AttentionParams<Real>& p,
                               const Tensor<Real>& targets,
                               const Tensor<Real>& sources,
                               const KeyMask& key_mask = {}) {
  return multi_head_attend_full(rec, p, targets, sources, key_mask).out;
}

}  // namespace inavit
