// Naive reference implementations used to cross-check the record-based code.
// Deliberately independent: nested std::vectors and explicit loops only.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "inavit/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(size_t r, size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat matmul(const Mat& a, const Mat& b) {
  size_t m = a.size(), k = b.size(), n = b[0].size();
  Mat out = zeros(m, n);
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p)
      for (size_t j = 0; j < n; ++j) out[i][j] += a[i][p] * b[p][j];
  return out;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

template <typename Real>
Mat to_mat(const inavit::Tensor<Real>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j)
      m[i][j] = static_cast<double>(t.at(i, j));
  return m;
}

/// Multi-head attention; logits <q,k>/sqrt(d_h); masked keys skipped
/// entirely. mask empty = all valid.
inline Mat mha(const Mat& targets, const Mat& sources, const Mat& wq,
               const Mat& wk, const Mat& wv, const Mat& wo, int heads,
               const std::vector<uint8_t>& mask = {}) {
  size_t m = targets.size(), n = sources.size(), d = targets[0].size();
  int dh = static_cast<int>(d) / heads;
  Mat q = matmul(targets, wq);
  Mat k = matmul(sources, wk);
  Mat v = matmul(sources, wv);
  Mat cat = zeros(m, d);
  for (int h = 0; h < heads; ++h) {
    int off = h * dh;
    for (size_t i = 0; i < m; ++i) {
      std::vector<double> logit(n, 0.0);
      double mx = -1e300;
      for (size_t j = 0; j < n; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q[i][off + c] * k[j][off + c];
        logit[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logit[j]);
      }
      double z = 0.0;
      std::vector<double> w(n, 0.0);
      for (size_t j = 0; j < n; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        w[j] = std::exp(logit[j] - mx);
        z += w[j];
      }
      for (size_t j = 0; j < n; ++j)
        for (int c = 0; c < dh; ++c)
          cat[i][off + c] += (w[j] / z) * v[j][off + c];
    }
  }
  return matmul(cat, wo);
}

struct MhaParams {
  Mat wq, wk, wv, wo;
  int heads = 1;
};

/// Frame-local cross-attention: hand over valid objects; each valid object
/// over {hand} + other valid objects. Returns refined hand per frame and
/// refined object rows (invalid slots zero).
struct ScaResult {
  Mat hand;                       // T x d
  std::vector<Mat> objects;       // [T], N x d
};

inline ScaResult sca(const Mat& hand, const std::vector<Mat>& objects,
                     const std::vector<std::vector<uint8_t>>& mask,
                     const MhaParams& hp, const MhaParams& op) {
  size_t t_count = hand.size(), n = mask[0].size(), d = hand[0].size();
  ScaResult r;
  r.hand = zeros(t_count, d);
  for (size_t t = 0; t < t_count; ++t) {
    Mat valid;
    for (size_t i = 0; i < n; ++i)
      if (mask[t][i]) valid.push_back(objects[t][i]);
    if (valid.empty()) {
      r.hand[t] = hand[t];
    } else {
      r.hand[t] = mha({hand[t]}, valid, hp.wq, hp.wk, hp.wv, hp.wo, hp.heads)[0];
    }
    Mat obj_out = zeros(n, d);
    for (size_t i = 0; i < n; ++i) {
      if (!mask[t][i]) continue;
      Mat keys{hand[t]};
      for (size_t j = 0; j < n; ++j)
        if (j != i && mask[t][j]) keys.push_back(objects[t][j]);
      obj_out[i] =
          mha({objects[t][i]}, keys, op.wq, op.wk, op.wv, op.wo, op.heads)[0];
    }
    r.objects.push_back(obj_out);
  }
  return r;
}

/// Track-wise temporal self-attention: hand over all frames; each object
/// track over the frames where it is valid.
inline ScaResult sot(const Mat& hand, const std::vector<Mat>& objects,
                     const std::vector<std::vector<uint8_t>>& mask,
                     const std::vector<std::vector<int>>& tracks,
                     const MhaParams& hp, const MhaParams& op) {
  size_t t_count = hand.size(), n = mask[0].size(), d = hand[0].size();
  ScaResult r;
  r.hand = mha(hand, hand, hp.wq, hp.wk, hp.wv, hp.wo, hp.heads);
  for (size_t t = 0; t < t_count; ++t) r.objects.push_back(zeros(n, d));
  std::map<int, std::vector<std::pair<size_t, size_t>>> by_track;
  for (size_t t = 0; t < t_count; ++t)
    for (size_t i = 0; i < n; ++i)
      if (mask[t][i]) by_track[tracks[t][i]].push_back({t, i});
  for (const auto& [track, slots] : by_track) {
    Mat seq;
    for (const auto& [t, i] : slots) seq.push_back(objects[t][i]);
    Mat refined = mha(seq, seq, op.wq, op.wk, op.wv, op.wo, op.heads);
    for (size_t j = 0; j < slots.size(); ++j)
      r.objects[slots[j].first][slots[j].second] = refined[j];
  }
  return r;
}

inline std::vector<double> softmax_vec(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - mx);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline std::vector<double> layer_norm_row(const std::vector<double>& x,
                                          const std::vector<double>& scale,
                                          const std::vector<double>& shift,
                                          double eps = 1e-5) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - mean) / std::sqrt(var + eps) * scale[i] + shift[i];
  return out;
}

inline Mat mlp_gelu(const Mat& x, const Mat& w1, const std::vector<double>& b1,
                    const Mat& w2, const std::vector<double>& b2) {
  size_t hidden = w1[0].size(), d = w2[0].size();
  Mat out = zeros(x.size(), d);
  for (size_t r = 0; r < x.size(); ++r) {
    std::vector<double> h(hidden);
    for (size_t o = 0; o < hidden; ++o) {
      double s = b1[o];
      for (size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * w1[i][o];
      h[o] = gelu(s);
    }
    for (size_t o = 0; o < d; ++o) {
      double s = b2[o];
      for (size_t i = 0; i < hidden; ++i) s += h[i] * w2[i][o];
      out[r][o] = s;
    }
  }
  return out;
}

struct TrajParams {
  Mat wq, wk, wv;
  Mat hat_wq, hat_wk, hat_wv;
  Mat wo;
  int heads = 1;
  bool causal = false;
};

/// Two-stage trajectory attention for one query row: stage 1 pools the
/// query against each reference frame's S context tokens per head; stage 2
/// attends over the pooled tokens, querying from the home frame's pooled
/// token. Logits use <q,k>/sqrt(d_h).
inline std::vector<double> trajectory(const std::vector<double>& query,
                                      int home, const Mat& context, int s,
                                      const TrajParams& p) {
  int t_count = static_cast<int>(context.size()) / s;
  size_t d = query.size();
  int dh = static_cast<int>(d) / p.heads;
  Mat k = matmul(context, p.wk), v = matmul(context, p.wv);
  Mat q = matmul({query}, p.wq);
  int start = p.causal ? home : 0;
  int refs = t_count - start;
  Mat pooled = zeros(refs, d);  // one row per reference frame
  for (int j = 0; j < refs; ++j) {
    int f = start + j;
    for (int h = 0; h < p.heads; ++h) {
      int off = h * dh;
      std::vector<double> logit(static_cast<size_t>(s));
      for (int r = 0; r < s; ++r) {
        double sum = 0.0;
        for (int c = 0; c < dh; ++c)
          sum += q[0][off + c] * k[f * s + r][off + c];
        logit[r] = sum / std::sqrt(static_cast<double>(dh));
      }
      auto w = softmax_vec(logit);
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < dh; ++c)
          pooled[j][off + c] += w[r] * v[f * s + r][off + c];
    }
  }
  Mat qhat = matmul({pooled[home - start]}, p.hat_wq);
  Mat khat = matmul(pooled, p.hat_wk), vhat = matmul(pooled, p.hat_wv);
  std::vector<double> cat(d, 0.0);
  for (int h = 0; h < p.heads; ++h) {
    int off = h * dh;
    std::vector<double> logit(static_cast<size_t>(refs));
    for (int j = 0; j < refs; ++j) {
      double sum = 0.0;
      for (int c = 0; c < dh; ++c) sum += qhat[0][off + c] * khat[j][off + c];
      logit[j] = sum / std::sqrt(static_cast<double>(dh));
    }
    auto w = softmax_vec(logit);
    for (int j = 0; j < refs; ++j)
      for (int c = 0; c < dh; ++c) cat[off + c] += w[j] * vhat[j][off + c];
  }
  return matmul({cat}, p.wo)[0];
}

/// Bilinear sample of one box over a frame's token field, then the
/// MLP+max-pool head; matches the documented sampling convention.
inline std::vector<double> pooled_region(
    const Mat& frame_tokens, int s_h, int s_w, double w_p, double h_p,
    double x1, double y1, double x2, double y2, int g, const Mat& w1,
    const std::vector<double>& b1, const Mat& w2,
    const std::vector<double>& b2) {
  size_t d = frame_tokens[0].size();
  double tx1 = x1 / w_p, tx2 = x2 / w_p, ty1 = y1 / h_p, ty2 = y2 / h_p;
  if (tx2 - tx1 < 1e-3) {
    double c = 0.5 * (tx1 + tx2);
    tx1 = c - 5e-4;
    tx2 = c + 5e-4;
  }
  if (ty2 - ty1 < 1e-3) {
    double c = 0.5 * (ty1 + ty2);
    ty1 = c - 5e-4;
    ty2 = c + 5e-4;
  }
  std::vector<double> best(d, -1e300);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      double u = tx1 + (j + 0.5) * (tx2 - tx1) / g - 0.5;
      double v = ty1 + (i + 0.5) * (ty2 - ty1) / g - 0.5;
      u = std::min(std::max(u, 0.0), static_cast<double>(s_w - 1));
      v = std::min(std::max(v, 0.0), static_cast<double>(s_h - 1));
      int c0 = std::min(static_cast<int>(std::floor(u)), s_w - 1);
      int r0 = std::min(static_cast<int>(std::floor(v)), s_h - 1);
      int c1 = std::min(c0 + 1, s_w - 1), r1 = std::min(r0 + 1, s_h - 1);
      double fx = u - c0, fy = v - r0;
      std::vector<double> cell(d);
      for (size_t ch = 0; ch < d; ++ch)
        cell[ch] = (1 - fy) * ((1 - fx) * frame_tokens[r0 * s_w + c0][ch] +
                               fx * frame_tokens[r0 * s_w + c1][ch]) +
                   fy * ((1 - fx) * frame_tokens[r1 * s_w + c0][ch] +
                         fx * frame_tokens[r1 * s_w + c1][ch]);
      std::vector<double> hid(d);
      for (size_t o = 0; o < d; ++o) {
        double s = b1[o];
        for (size_t in = 0; in < d; ++in) s += cell[in] * w1[in][o];
        hid[o] = gelu(s);
      }
      for (size_t o = 0; o < d; ++o) {
        double s = b2[o];
        for (size_t in = 0; in < d; ++in) s += hid[in] * w2[in][o];
        best[o] = std::max(best[o], s);
      }
    }
  return best;
}

}  // namespace oracle
