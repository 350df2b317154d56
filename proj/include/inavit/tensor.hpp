#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace inavit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Dense row-major tensor. Most of the engine works on 2-D matrices;
/// scalars are stored as 1x1.
template <typename Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;
  bool requires_grad = false;
  int32_t node_id = -1;  // handle into the tape this tensor was last bound to

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), Real(0)) {}

  Tensor(int r, int c) : Tensor(std::vector<int>{r, c}) {}

  Tensor(int r, int c, std::vector<Real> d) : shape{r, c}, data(std::move(d)) {
    require(count(shape) == data.size(), "tensor data length does not match shape");
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int e : s) {
      require(e > 0, "tensor extents must be positive");
      n *= static_cast<size_t>(e);
    }
    return n;
  }

  size_t size() const { return data.size(); }
  bool is2d() const { return shape.size() == 2; }
  bool is_scalar() const { return size() == 1; }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const {
    if (shape.size() < 2) return shape.size() == 1 ? 1 : 0;
    int c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  Real& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  const Real& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  Real* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols(); }
  const Real* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros_like(const Tensor& o) {
    Tensor t;
    t.shape = o.shape;
    t.data.assign(o.data.size(), Real(0));
    return t;
  }

  static Tensor scalar(Real v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  static Tensor row(std::vector<Real> d) {
    int n = static_cast<int>(d.size());
    return Tensor(1, n, std::move(d));
  }
};

template <typename Real>
bool all_finite(const Tensor<Real>& t) {
  for (Real v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  out.requires_grad = t.requires_grad;
  return out;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

}  // namespace inavit
