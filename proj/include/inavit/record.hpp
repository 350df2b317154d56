#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "inavit/tensor.hpp"

namespace inavit {

enum class OpKind {
  Leaf,
  Add,
  Mul,
  Scale,
  MatMul,
  Transpose,
  RowSoftmax,
  Gelu,
  SumAll,
  AddRowVec,
  TileRows,
  RepeatEachRow,
  GatherRows,
  ConcatRows,
  ConcatCols,
  SliceCols,
  RowMix,
  LayerNorm,
  CrossEntropy,
  MaxOverRows,
  RowDot,
  ScaleRows,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::Gelu: return "gelu";
    case OpKind::SumAll: return "sum_all";
    case OpKind::AddRowVec: return "add_row_vec";
    case OpKind::TileRows: return "tile_rows";
    case OpKind::RepeatEachRow: return "repeat_each_row";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::RowMix: return "row_mix";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::MaxOverRows: return "max_over_rows";
    case OpKind::RowDot: return "row_dot";
    case OpKind::ScaleRows: return "scale_rows";
  }
  return "?";
}

/// Fixed sparse linear combination of input rows:
/// out[i] = sum over terms[i] of weight * in[src_row].
/// Used for bilinear region sampling, where the mixing pattern is data
/// (box geometry), not a learned quantity.
struct RowMixPlan {
  std::vector<std::vector<std::pair<int, double>>> terms;
};

/// Append-only record of primitive applications. Every op validates its
/// inputs, evaluates immediately, checks the result is finite, and returns a
/// value handle (a Tensor whose node_id points back into the record).
/// Gradients are produced by a reverse sweep over the recorded nodes.
template <typename Real>
class ComputationRecord {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::array<int32_t, 3> in{{-1, -1, -1}};
    Tensor<Real> value;
    bool needs_grad = false;
    Real scalar = Real(0);  // Scale factor or LayerNorm eps
    int i0 = 0;             // slice start / repeat count / class label
    int i1 = 0;             // slice end
    std::shared_ptr<const std::vector<int>> indices;  // GatherRows
    std::shared_ptr<const RowMixPlan> plan;           // RowMix
    std::string name;                                 // named leaves
  };

  // ---- bookkeeping ----

  void set_section(std::string s) { section_ = std::move(s); }
  const std::string& section() const { return section_; }

  int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  // ---- leaves ----

  Tensor<Real> leaf(const Tensor<Real>& v, std::string name = "",
                    bool requires_grad = false) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = v;
    n.value.node_id = -1;
    n.value.requires_grad = false;
    n.needs_grad = requires_grad;
    n.name = std::move(name);
    if (requires_grad && !n.name.empty())
      require(named_.find(n.name) == named_.end(),
              "duplicate named leaf: " + n.name);
    int32_t id = push(std::move(n));
    if (nodes_[id].needs_grad && !nodes_[id].name.empty())
      named_[nodes_[id].name] = id;
    return wrap(id);
  }

  Tensor<Real> constant(const Tensor<Real>& v) { return leaf(v); }

  Tensor<Real> param(const Tensor<Real>& v, std::string name) {
    return leaf(v, std::move(name), true);
  }

  // ---- primitives ----

  Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.shape == b.shape, "add: shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    return emit(OpKind::Add, ia, ib);
  }

  Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.shape == b.shape, "mul: shape mismatch");
    return emit(OpKind::Mul, ia, ib);
  }

  Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    int32_t ia = in_id(a);
    require(std::isfinite(static_cast<double>(s)), "scale: non-finite factor");
    Node n;
    n.kind = OpKind::Scale;
    n.in[0] = ia;
    n.scalar = s;
    return wrap(push(std::move(n)));
  }

  Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.is2d() && b.is2d(), "matmul: operands must be 2-d");
    require(a.cols() == b.rows(), "matmul: inner extents differ, " +
                                      shape_str(a.shape) + " x " +
                                      shape_str(b.shape));
    return emit(OpKind::MatMul, ia, ib);
  }

  Tensor<Real> transpose(const Tensor<Real>& a) {
    int32_t ia = in_id(a);
    require(a.is2d(), "transpose: operand must be 2-d");
    return emit(OpKind::Transpose, ia);
  }

  Tensor<Real> row_softmax(const Tensor<Real>& a) {
    int32_t ia = in_id(a);
    require(a.is2d() && a.cols() > 0, "row_softmax: empty input");
    return emit(OpKind::RowSoftmax, ia);
  }

  Tensor<Real> gelu(const Tensor<Real>& a) { return emit(OpKind::Gelu, in_id(a)); }

  Tensor<Real> sum_all(const Tensor<Real>& a) {
    return emit(OpKind::SumAll, in_id(a));
  }

  Tensor<Real> add_row_vec(const Tensor<Real>& a, const Tensor<Real>& v) {
    int32_t ia = in_id(a), iv = in_id(v);
    require(a.is2d() && v.is2d() && v.rows() == 1 && v.cols() == a.cols(),
            "add_row_vec: need (m x n) + (1 x n)");
    return emit(OpKind::AddRowVec, ia, iv);
  }

  /// Stack `times` whole copies: out[(j*m)+i] = a[i], j = 0..times-1.
  Tensor<Real> tile_rows(const Tensor<Real>& a, int times) {
    int32_t ia = in_id(a);
    require(a.is2d() && times >= 1, "tile_rows: bad repeat count");
    Node n;
    n.kind = OpKind::TileRows;
    n.in[0] = ia;
    n.i0 = times;
    return wrap(push(std::move(n)));
  }

  /// Repeat each row in place: out[(i*times)+j] = a[i], j = 0..times-1.
  Tensor<Real> repeat_each_row(const Tensor<Real>& a, int times) {
    int32_t ia = in_id(a);
    require(a.is2d() && times >= 1, "repeat_each_row: bad repeat count");
    Node n;
    n.kind = OpKind::RepeatEachRow;
    n.in[0] = ia;
    n.i0 = times;
    return wrap(push(std::move(n)));
  }

  Tensor<Real> gather_rows(const Tensor<Real>& a, std::vector<int> idx) {
    int32_t ia = in_id(a);
    require(a.is2d() && !idx.empty(), "gather_rows: empty index list");
    for (int i : idx)
      require(i >= 0 && i < a.rows(), "gather_rows: row index out of range");
    Node n;
    n.kind = OpKind::GatherRows;
    n.in[0] = ia;
    n.indices = std::make_shared<const std::vector<int>>(std::move(idx));
    return wrap(push(std::move(n)));
  }

  Tensor<Real> concat_rows(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.is2d() && b.is2d() && a.cols() == b.cols(),
            "concat_rows: column widths differ");
    return emit(OpKind::ConcatRows, ia, ib);
  }

  Tensor<Real> concat_cols(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.is2d() && b.is2d() && a.rows() == b.rows(),
            "concat_cols: row counts differ");
    return emit(OpKind::ConcatCols, ia, ib);
  }

  Tensor<Real> slice_cols(const Tensor<Real>& a, int c0, int c1) {
    int32_t ia = in_id(a);
    require(a.is2d() && c0 >= 0 && c0 < c1 && c1 <= a.cols(),
            "slice_cols: bad column range");
    Node n;
    n.kind = OpKind::SliceCols;
    n.in[0] = ia;
    n.i0 = c0;
    n.i1 = c1;
    return wrap(push(std::move(n)));
  }

  Tensor<Real> row_mix(const Tensor<Real>& a,
                       std::shared_ptr<const RowMixPlan> plan) {
    int32_t ia = in_id(a);
    require(a.is2d() && plan && !plan->terms.empty(), "row_mix: empty plan");
    for (const auto& row : plan->terms) {
      require(!row.empty(), "row_mix: plan row with no terms");
      for (const auto& [src, w] : row) {
        require(src >= 0 && src < a.rows(), "row_mix: source row out of range");
        require(std::isfinite(w), "row_mix: non-finite weight");
      }
    }
    Node n;
    n.kind = OpKind::RowMix;
    n.in[0] = ia;
    n.plan = std::move(plan);
    return wrap(push(std::move(n)));
  }

  Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& sc,
                          const Tensor<Real>& sh, Real eps) {
    int32_t ix = in_id(x), is = in_id(sc), ih = in_id(sh);
    require(x.is2d(), "layer_norm: input must be 2-d");
    require(sc.is2d() && sc.rows() == 1 && sc.cols() == x.cols() &&
                sh.is2d() && sh.rows() == 1 && sh.cols() == x.cols(),
            "layer_norm: scale/shift must be 1 x cols(input)");
    require(eps > Real(0), "layer_norm: eps must be positive");
    Node n;
    n.kind = OpKind::LayerNorm;
    n.in = {ix, is, ih};
    n.scalar = eps;
    return wrap(push(std::move(n)));
  }

  Tensor<Real> cross_entropy(const Tensor<Real>& logits, int label) {
    int32_t il = in_id(logits);
    require(logits.is2d() && logits.rows() == 1, "cross_entropy: want 1 x C");
    require(label >= 0 && label < logits.cols(),
            "cross_entropy: label out of range");
    Node n;
    n.kind = OpKind::CrossEntropy;
    n.in[0] = il;
    n.i0 = label;
    return wrap(push(std::move(n)));
  }

  /// Column-wise max over rows; ties resolve to the lowest row index.
  Tensor<Real> max_over_rows(const Tensor<Real>& a) {
    int32_t ia = in_id(a);
    require(a.is2d(), "max_over_rows: operand must be 2-d");
    return emit(OpKind::MaxOverRows, ia);
  }

  /// Per-row inner product: out (m x 1), out[i] = <a[i,:], b[i,:]>.
  Tensor<Real> row_dot(const Tensor<Real>& a, const Tensor<Real>& b) {
    int32_t ia = in_id(a), ib = in_id(b);
    require(a.shape == b.shape && a.is2d(), "row_dot: shape mismatch");
    return emit(OpKind::RowDot, ia, ib);
  }

  /// out[i,j] = v[i] * a[i,j] with v (m x 1).
  Tensor<Real> scale_rows(const Tensor<Real>& v, const Tensor<Real>& a) {
    int32_t iv = in_id(v), ia = in_id(a);
    require(v.is2d() && v.cols() == 1 && v.rows() == a.rows() && a.is2d(),
            "scale_rows: need (m x 1) against (m x n)");
    return emit(OpKind::ScaleRows, iv, ia);
  }

  // ---- gradients ----

  /// Reverse sweep from a scalar loss. Returns gradients for every named
  /// requires_grad leaf; leaves the loss never touched get zero gradients.
  std::map<std::string, Tensor<Real>> gradients(const Tensor<Real>& loss) const {
    int32_t lid = in_id(loss);
    require(nodes_[lid].value.size() == 1, "loss is not scalar");
    std::vector<Tensor<Real>> grad(nodes_.size());
    grad[lid] = Tensor<Real>::zeros_like(nodes_[lid].value);
    grad[lid].data[0] = Real(1);
    for (int32_t id = lid; id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!n.needs_grad || grad[id].data.empty()) continue;
      if (n.kind != OpKind::Leaf) backward(n, grad[id], grad);
    }
    std::map<std::string, Tensor<Real>> out;
    for (const auto& [name, id] : named_) {
      if (grad[id].data.empty())
        out[name] = Tensor<Real>::zeros_like(nodes_[id].value);
      else
        out[name] = std::move(grad[id]);
      out[name].node_id = -1;
      out[name].requires_grad = false;
    }
    return out;
  }

  /// Re-evaluates every recorded op and compares against the stored forward
  /// values bit for bit.
  bool replay_verify() const {
    for (const Node& n : nodes_) {
      if (n.kind == OpKind::Leaf) continue;
      Tensor<Real> re = eval(n);
      if (re.shape != n.value.shape) return false;
      if (std::memcmp(re.data.data(), n.value.data.data(),
                      re.data.size() * sizeof(Real)) != 0)
        return false;
    }
    return true;
  }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int32_t> named_;
  std::string section_;

  int32_t in_id(const Tensor<Real>& t) const {
    require(t.node_id >= 0 && t.node_id < size(),
            "tensor is not a handle into this record");
    require(nodes_[t.node_id].value.shape == t.shape,
            "stale handle: shape changed");
    return t.node_id;
  }

  Tensor<Real> wrap(int32_t id) const {
    Tensor<Real> t = nodes_[id].value;
    t.node_id = id;
    t.requires_grad = nodes_[id].needs_grad;
    return t;
  }

  Tensor<Real> emit(OpKind k, int32_t a, int32_t b = -1) {
    Node n;
    n.kind = k;
    n.in[0] = a;
    n.in[1] = b;
    return wrap(push(std::move(n)));
  }

  int32_t push(Node n) {
    if (n.kind != OpKind::Leaf) {
      bool ng = false;
      for (int32_t i : n.in)
        if (i >= 0) ng = ng || nodes_[i].needs_grad;
      n.needs_grad = ng;
      n.value = eval(n);
    }
    require(all_finite(n.value),
            std::string("non-finite output of ") + op_name(n.kind) +
                (section_.empty() ? "" : " in " + section_));
    nodes_.push_back(std::move(n));
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  Tensor<Real> eval(const Node& n) const {
    const Tensor<Real>& A = nodes_[n.in[0]].value;
    switch (n.kind) {
      case OpKind::Leaf:
        return n.value;
      case OpKind::Add: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out = A;
        out.node_id = -1;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
        return out;
      }
      case OpKind::Mul: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out = A;
        out.node_id = -1;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
        return out;
      }
      case OpKind::Scale: {
        Tensor<Real> out = A;
        out.node_id = -1;
        for (Real& v : out.data) v *= n.scalar;
        return out;
      }
      case OpKind::MatMul: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        int m = A.rows(), k = A.cols(), c = B.cols();
        Tensor<Real> out(m, c);
        for (int i = 0; i < m; ++i) {
          const Real* ar = A.row_ptr(i);
          Real* orow = out.row_ptr(i);
          for (int p = 0; p < k; ++p) {
            Real av = ar[p];
            const Real* br = B.row_ptr(p);
            for (int j = 0; j < c; ++j) orow[j] += av * br[j];
          }
        }
        return out;
      }
      case OpKind::Transpose: {
        Tensor<Real> out(A.cols(), A.rows());
        for (int i = 0; i < A.rows(); ++i)
          for (int j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
        return out;
      }
      case OpKind::RowSoftmax: {
        Tensor<Real> out(A.rows(), A.cols());
        int c = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
          const Real* x = A.row_ptr(i);
          Real* y = out.row_ptr(i);
          Real mx = x[0];
          for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
          double s = 0.0;
          for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += static_cast<double>(y[j]);
          }
          Real inv = static_cast<Real>(1.0 / s);
          for (int j = 0; j < c; ++j) y[j] *= inv;
        }
        return out;
      }
      case OpKind::Gelu: {
        Tensor<Real> out = Tensor<Real>::zeros_like(A);
        for (size_t i = 0; i < A.data.size(); ++i) {
          double x = static_cast<double>(A.data[i]);
          out.data[i] = static_cast<Real>(
              0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)));
        }
        return out;
      }
      case OpKind::SumAll: {
        double s = 0.0;
        for (Real v : A.data) s += static_cast<double>(v);
        return Tensor<Real>::scalar(static_cast<Real>(s));
      }
      case OpKind::AddRowVec: {
        const Tensor<Real>& V = nodes_[n.in[1]].value;
        Tensor<Real> out = A;
        out.node_id = -1;
        int c = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
          Real* r = out.row_ptr(i);
          for (int j = 0; j < c; ++j) r[j] += V.data[j];
        }
        return out;
      }
      case OpKind::TileRows: {
        int m = A.rows(), c = A.cols();
        Tensor<Real> out(m * n.i0, c);
        for (int j = 0; j < n.i0; ++j)
          std::memcpy(out.row_ptr(j * m), A.data.data(),
                      A.data.size() * sizeof(Real));
        return out;
      }
      case OpKind::RepeatEachRow: {
        int m = A.rows(), c = A.cols();
        Tensor<Real> out(m * n.i0, c);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n.i0; ++j)
            std::memcpy(out.row_ptr(i * n.i0 + j), A.row_ptr(i),
                        static_cast<size_t>(c) * sizeof(Real));
        return out;
      }
      case OpKind::GatherRows: {
        const std::vector<int>& idx = *n.indices;
        Tensor<Real> out(static_cast<int>(idx.size()), A.cols());
        for (size_t i = 0; i < idx.size(); ++i)
          std::memcpy(out.row_ptr(static_cast<int>(i)), A.row_ptr(idx[i]),
                      static_cast<size_t>(A.cols()) * sizeof(Real));
        return out;
      }
      case OpKind::ConcatRows: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out(A.rows() + B.rows(), A.cols());
        std::memcpy(out.data.data(), A.data.data(),
                    A.data.size() * sizeof(Real));
        std::memcpy(out.row_ptr(A.rows()), B.data.data(),
                    B.data.size() * sizeof(Real));
        return out;
      }
      case OpKind::ConcatCols: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out(A.rows(), A.cols() + B.cols());
        for (int i = 0; i < A.rows(); ++i) {
          std::memcpy(out.row_ptr(i), A.row_ptr(i),
                      static_cast<size_t>(A.cols()) * sizeof(Real));
          std::memcpy(out.row_ptr(i) + A.cols(), B.row_ptr(i),
                      static_cast<size_t>(B.cols()) * sizeof(Real));
        }
        return out;
      }
      case OpKind::SliceCols: {
        Tensor<Real> out(A.rows(), n.i1 - n.i0);
        for (int i = 0; i < A.rows(); ++i)
          std::memcpy(out.row_ptr(i), A.row_ptr(i) + n.i0,
                      static_cast<size_t>(n.i1 - n.i0) * sizeof(Real));
        return out;
      }
      case OpKind::RowMix: {
        const auto& terms = n.plan->terms;
        int c = A.cols();
        Tensor<Real> out(static_cast<int>(terms.size()), c);
        for (size_t i = 0; i < terms.size(); ++i) {
          Real* r = out.row_ptr(static_cast<int>(i));
          for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (const auto& [src, w] : terms[i])
              s += w * static_cast<double>(A.at(src, j));
            r[j] = static_cast<Real>(s);
          }
        }
        return out;
      }
      case OpKind::LayerNorm: {
        const Tensor<Real>& S = nodes_[n.in[1]].value;
        const Tensor<Real>& H = nodes_[n.in[2]].value;
        int c = A.cols();
        Tensor<Real> out(A.rows(), c);
        double eps = static_cast<double>(n.scalar);
        for (int i = 0; i < A.rows(); ++i) {
          const Real* x = A.row_ptr(i);
          Real* y = out.row_ptr(i);
          double mu = 0.0;
          for (int j = 0; j < c; ++j) mu += static_cast<double>(x[j]);
          mu /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) {
            double d = static_cast<double>(x[j]) - mu;
            var += d * d;
          }
          var /= c;
          double inv = 1.0 / std::sqrt(var + eps);
          for (int j = 0; j < c; ++j)
            y[j] = static_cast<Real>((static_cast<double>(x[j]) - mu) * inv *
                                         static_cast<double>(S.data[j]) +
                                     static_cast<double>(H.data[j]));
        }
        return out;
      }
      case OpKind::CrossEntropy: {
        int c = A.cols();
        const Real* z = A.row_ptr(0);
        double mx = static_cast<double>(z[0]);
        for (int j = 1; j < c; ++j)
          mx = std::max(mx, static_cast<double>(z[j]));
        double s = 0.0;
        for (int j = 0; j < c; ++j)
          s += std::exp(static_cast<double>(z[j]) - mx);
        double loss = mx + std::log(s) - static_cast<double>(z[n.i0]);
        return Tensor<Real>::scalar(static_cast<Real>(loss));
      }
      case OpKind::MaxOverRows: {
        int c = A.cols();
        Tensor<Real> out(1, c);
        for (int j = 0; j < c; ++j) {
          Real best = A.at(0, j);
          for (int i = 1; i < A.rows(); ++i)
            if (A.at(i, j) > best) best = A.at(i, j);
          out.data[j] = best;
        }
        return out;
      }
      case OpKind::RowDot: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out(A.rows(), 1);
        int c = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
          const Real* ar = A.row_ptr(i);
          const Real* br = B.row_ptr(i);
          double s = 0.0;
          for (int j = 0; j < c; ++j)
            s += static_cast<double>(ar[j]) * static_cast<double>(br[j]);
          out.data[i] = static_cast<Real>(s);
        }
        return out;
      }
      case OpKind::ScaleRows: {
        const Tensor<Real>& B = nodes_[n.in[1]].value;
        Tensor<Real> out(B.rows(), B.cols());
        int c = B.cols();
        for (int i = 0; i < B.rows(); ++i) {
          Real v = A.data[i];
          const Real* br = B.row_ptr(i);
          Real* r = out.row_ptr(i);
          for (int j = 0; j < c; ++j) r[j] = v * br[j];
        }
        return out;
      }
    }
    fail("unreachable op kind");
  }

  static Tensor<Real>& slot(std::vector<Tensor<Real>>& grad, int32_t id,
                            const Tensor<Real>& like) {
    if (grad[id].data.empty()) grad[id] = Tensor<Real>::zeros_like(like);
    return grad[id];
  }

  bool wants(int32_t id) const { return id >= 0 && nodes_[id].needs_grad; }

  void backward(const Node& n, const Tensor<Real>& g,
                std::vector<Tensor<Real>>& grad) const {
    const int32_t ia = n.in[0], ib = n.in[1], ic = n.in[2];
    const Tensor<Real>& A = nodes_[ia].value;
    switch (n.kind) {
      case OpKind::Leaf:
        return;
      case OpKind::Add: {
        if (wants(ia)) {
          Tensor<Real>& ga = slot(grad, ia, A);
          for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (wants(ib)) {
          Tensor<Real>& gb = slot(grad, ib, nodes_[ib].value);
          for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
        }
        return;
      }
      case OpKind::Mul: {
        const Tensor<Real>& B = nodes_[ib].value;
        if (wants(ia)) {
          Tensor<Real>& ga = slot(grad, ia, A);
          for (size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * B.data[i];
        }
        if (wants(ib)) {
          Tensor<Real>& gb = slot(grad, ib, B);
          for (size_t i = 0; i < g.data.size(); ++i)
            gb.data[i] += g.data[i] * A.data[i];
        }
        return;
      }
      case OpKind::Scale: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        for (size_t i = 0; i < g.data.size(); ++i)
          ga.data[i] += n.scalar * g.data[i];
        return;
      }
      case OpKind::MatMul: {
        const Tensor<Real>& B = nodes_[ib].value;
        int m = A.rows(), k = A.cols(), c = B.cols();
        if (wants(ia)) {  // dA = g . B^T
          Tensor<Real>& ga = slot(grad, ia, A);
          for (int i = 0; i < m; ++i) {
            const Real* gr = g.row_ptr(i);
            Real* gar = ga.row_ptr(i);
            for (int p = 0; p < k; ++p) {
              const Real* br = B.row_ptr(p);
              Real s = Real(0);
              for (int j = 0; j < c; ++j) s += gr[j] * br[j];
              gar[p] += s;
            }
          }
        }
        if (wants(ib)) {  // dB = A^T . g
          Tensor<Real>& gb = slot(grad, ib, B);
          for (int i = 0; i < m; ++i) {
            const Real* ar = A.row_ptr(i);
            const Real* gr = g.row_ptr(i);
            for (int p = 0; p < k; ++p) {
              Real av = ar[p];
              Real* gbr = gb.row_ptr(p);
              for (int j = 0; j < c; ++j) gbr[j] += av * gr[j];
            }
          }
        }
        return;
      }
      case OpKind::Transpose: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        for (int i = 0; i < A.rows(); ++i)
          for (int j = 0; j < A.cols(); ++j) ga.at(i, j) += g.at(j, i);
        return;
      }
      case OpKind::RowSoftmax: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        const Tensor<Real>& P = n.value;
        int c = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
          const Real* p = P.row_ptr(i);
          const Real* gr = g.row_ptr(i);
          double dot = 0.0;
          for (int j = 0; j < c; ++j)
            dot += static_cast<double>(gr[j]) * static_cast<double>(p[j]);
          Real* gar = ga.row_ptr(i);
          for (int j = 0; j < c; ++j)
            gar[j] += p[j] * (gr[j] - static_cast<Real>(dot));
        }
        return;
      }
      case OpKind::Gelu: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        for (size_t i = 0; i < A.data.size(); ++i) {
          double x = static_cast<double>(A.data[i]);
          double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
          double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
          ga.data[i] += g.data[i] * static_cast<Real>(cdf + x * pdf);
        }
        return;
      }
      case OpKind::SumAll: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        Real gs = g.data[0];
        for (Real& v : ga.data) v += gs;
        return;
      }
      case OpKind::AddRowVec: {
        if (wants(ia)) {
          Tensor<Real>& ga = slot(grad, ia, A);
          for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (wants(ib)) {
          Tensor<Real>& gv = slot(grad, ib, nodes_[ib].value);
          int c = A.cols();
          for (int i = 0; i < A.rows(); ++i) {
            const Real* gr = g.row_ptr(i);
            for (int j = 0; j < c; ++j) gv.data[j] += gr[j];
          }
        }
        return;
      }
      case OpKind::TileRows: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        int m = A.rows(), c = A.cols();
        for (int j = 0; j < n.i0; ++j)
          for (int i = 0; i < m; ++i) {
            const Real* gr = g.row_ptr(j * m + i);
            Real* gar = ga.row_ptr(i);
            for (int t = 0; t < c; ++t) gar[t] += gr[t];
          }
        return;
      }
      case OpKind::RepeatEachRow: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        int m = A.rows(), c = A.cols();
        for (int i = 0; i < m; ++i) {
          Real* gar = ga.row_ptr(i);
          for (int j = 0; j < n.i0; ++j) {
            const Real* gr = g.row_ptr(i * n.i0 + j);
            for (int t = 0; t < c; ++t) gar[t] += gr[t];
          }
        }
        return;
      }
      case OpKind::GatherRows: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        const std::vector<int>& idx = *n.indices;
        int c = A.cols();
        for (size_t i = 0; i < idx.size(); ++i) {
          const Real* gr = g.row_ptr(static_cast<int>(i));
          Real* gar = ga.row_ptr(idx[i]);
          for (int t = 0; t < c; ++t) gar[t] += gr[t];
        }
        return;
      }
      case OpKind::ConcatRows: {
        const Tensor<Real>& B = nodes_[ib].value;
        int c = A.cols();
        if (wants(ia)) {
          Tensor<Real>& ga = slot(grad, ia, A);
          for (int i = 0; i < A.rows(); ++i) {
            const Real* gr = g.row_ptr(i);
            Real* gar = ga.row_ptr(i);
            for (int t = 0; t < c; ++t) gar[t] += gr[t];
          }
        }
        if (wants(ib)) {
          Tensor<Real>& gb = slot(grad, ib, B);
          for (int i = 0; i < B.rows(); ++i) {
            const Real* gr = g.row_ptr(A.rows() + i);
            Real* gbr = gb.row_ptr(i);
            for (int t = 0; t < c; ++t) gbr[t] += gr[t];
          }
        }
        return;
      }
      case OpKind::ConcatCols: {
        const Tensor<Real>& B = nodes_[ib].value;
        if (wants(ia)) {
          Tensor<Real>& ga = slot(grad, ia, A);
          for (int i = 0; i < A.rows(); ++i) {
            const Real* gr = g.row_ptr(i);
            Real* gar = ga.row_ptr(i);
            for (int t = 0; t < A.cols(); ++t) gar[t] += gr[t];
          }
        }
        if (wants(ib)) {
          Tensor<Real>& gb = slot(grad, ib, B);
          for (int i = 0; i < B.rows(); ++i) {
            const Real* gr = g.row_ptr(i) + A.cols();
            Real* gbr = gb.row_ptr(i);
            for (int t = 0; t < B.cols(); ++t) gbr[t] += gr[t];
          }
        }
        return;
      }
      case OpKind::SliceCols: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        int w = n.i1 - n.i0;
        for (int i = 0; i < A.rows(); ++i) {
          const Real* gr = g.row_ptr(i);
          Real* gar = ga.row_ptr(i) + n.i0;
          for (int t = 0; t < w; ++t) gar[t] += gr[t];
        }
        return;
      }
      case OpKind::RowMix: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        const auto& terms = n.plan->terms;
        int c = A.cols();
        for (size_t i = 0; i < terms.size(); ++i) {
          const Real* gr = g.row_ptr(static_cast<int>(i));
          for (const auto& [src, w] : terms[i]) {
            Real* gar = ga.row_ptr(src);
            Real rw = static_cast<Real>(w);
            for (int t = 0; t < c; ++t) gar[t] += rw * gr[t];
          }
        }
        return;
      }
      case OpKind::LayerNorm: {
        const Tensor<Real>& S = nodes_[ib].value;
        int c = A.cols();
        double eps = static_cast<double>(n.scalar);
        std::vector<double> xhat(static_cast<size_t>(c));
        for (int i = 0; i < A.rows(); ++i) {
          const Real* x = A.row_ptr(i);
          const Real* gr = g.row_ptr(i);
          double mu = 0.0;
          for (int j = 0; j < c; ++j) mu += static_cast<double>(x[j]);
          mu /= c;
          double var = 0.0;
          for (int j = 0; j < c; ++j) {
            double d = static_cast<double>(x[j]) - mu;
            var += d * d;
          }
          var /= c;
          double inv = 1.0 / std::sqrt(var + eps);
          for (int j = 0; j < c; ++j)
            xhat[j] = (static_cast<double>(x[j]) - mu) * inv;
          if (wants(ia)) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < c; ++j) {
              double gh = static_cast<double>(gr[j]) *
                          static_cast<double>(S.data[j]);
              m1 += gh;
              m2 += gh * xhat[j];
            }
            m1 /= c;
            m2 /= c;
            Tensor<Real>& ga = slot(grad, ia, A);
            Real* gar = ga.row_ptr(i);
            for (int j = 0; j < c; ++j) {
              double gh = static_cast<double>(gr[j]) *
                          static_cast<double>(S.data[j]);
              gar[j] += static_cast<Real>((gh - m1 - xhat[j] * m2) * inv);
            }
          }
          if (wants(ib)) {
            Tensor<Real>& gs = slot(grad, ib, S);
            for (int j = 0; j < c; ++j)
              gs.data[j] += gr[j] * static_cast<Real>(xhat[j]);
          }
          if (wants(ic)) {
            Tensor<Real>& gh = slot(grad, ic, nodes_[ic].value);
            for (int j = 0; j < c; ++j) gh.data[j] += gr[j];
          }
        }
        return;
      }
      case OpKind::CrossEntropy: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        int c = A.cols();
        const Real* z = A.row_ptr(0);
        double mx = static_cast<double>(z[0]);
        for (int j = 1; j < c; ++j)
          mx = std::max(mx, static_cast<double>(z[j]));
        double s = 0.0;
        std::vector<double> e(static_cast<size_t>(c));
        for (int j = 0; j < c; ++j) {
          e[j] = std::exp(static_cast<double>(z[j]) - mx);
          s += e[j];
        }
        Real gs = g.data[0];
        for (int j = 0; j < c; ++j) {
          double p = e[j] / s;
          ga.data[j] += gs * static_cast<Real>(p - (j == n.i0 ? 1.0 : 0.0));
        }
        return;
      }
      case OpKind::MaxOverRows: {
        if (!wants(ia)) return;
        Tensor<Real>& ga = slot(grad, ia, A);
        for (int j = 0; j < A.cols(); ++j) {
          int arg = 0;
          for (int i = 1; i < A.rows(); ++i)
            if (A.at(i, j) > A.at(arg, j)) arg = i;
          ga.at(arg, j) += g.data[j];
        }
        return;
      }
      case OpKind::RowDot: {
        const Tensor<Real>& B = nodes_[ib].value;
        int c = A.cols();
        for (int i = 0; i < A.rows(); ++i) {
          Real gv = g.data[i];
          if (wants(ia)) {
            Real* gar = slot(grad, ia, A).row_ptr(i);
            const Real* br = B.row_ptr(i);
            for (int j = 0; j < c; ++j) gar[j] += gv * br[j];
          }
          if (wants(ib)) {
            Real* gbr = slot(grad, ib, B).row_ptr(i);
            const Real* ar = A.row_ptr(i);
            for (int j = 0; j < c; ++j) gbr[j] += gv * ar[j];
          }
        }
        return;
      }
      case OpKind::ScaleRows: {
        const Tensor<Real>& B = nodes_[ib].value;
        int c = B.cols();
        for (int i = 0; i < B.rows(); ++i) {
          const Real* gr = g.row_ptr(i);
          if (wants(ia)) {
            const Real* br = B.row_ptr(i);
            double s = 0.0;
            for (int j = 0; j < c; ++j)
              s += static_cast<double>(gr[j]) * static_cast<double>(br[j]);
            slot(grad, ia, A).data[i] += static_cast<Real>(s);
          }
          if (wants(ib)) {
            Real v = A.data[i];
            Real* gbr = slot(grad, ib, B).row_ptr(i);
            for (int j = 0; j < c; ++j) gbr[j] += v * gr[j];
          }
        }
        return;
      }
    }
  }
};

template <typename Real>
std::map<std::string, Tensor<Real>> reverse_gradients(
    const ComputationRecord<Real>& record, const Tensor<Real>& loss_node) {
  return record.gradients(loss_node);
}

}  // namespace inavit
