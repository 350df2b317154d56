#pragma once

#include <string>
#include <vector>

#include "inavit/record.hpp"
#include "inavit/tensor.hpp"

namespace inavit {

struct TokenizerConfig {
  int frames = 8;  // T_in
  int height = 32;
  int width = 32;
  int channels = 3;
  int tubelet_t = 2;
  int tubelet_h = 8;
  int tubelet_w = 8;
  int dim = 32;  // d

  int t() const { return frames / tubelet_t; }
  int s_h() const { return height / tubelet_h; }
  int s_w() const { return width / tubelet_w; }
  int s() const { return s_h() * s_w(); }
  int cuboid_len() const { return tubelet_t * tubelet_h * tubelet_w * channels; }

  void validate() const {
    require(frames > 0 && height > 0 && width > 0 && channels > 0 &&
                tubelet_t > 0 && tubelet_h > 0 && tubelet_w > 0 && dim > 0,
            "tokenizer: all extents must be positive");
    require(frames % tubelet_t == 0,
            "tokenizer: frame count not divisible by tubelet depth");
    require(height % tubelet_h == 0,
            "tokenizer: frame height not divisible by tubelet height");
    require(width % tubelet_w == 0,
            "tokenizer: frame width not divisible by tubelet width");
  }
};

/// Token field handle plus its grid geometry. Row (t*S + s) of `tokens` is
/// the token at temporal position t and spatial cell s (row-major cells).
template <typename Real>
struct TokenGrid {
  Tensor<Real> tokens;  // (T*S) x d
  Tensor<Real> cls;     // 1 x d once appended
  bool has_cls = false;
  int t = 0, s_h = 0, s_w = 0;

  int s() const { return s_h * s_w; }
  int token_count() const { return t * s() + (has_cls ? 1 : 0); }
};

template <typename Real>
struct PositionalEmbeddings {
  Tensor<Real> spatial;   // S x d
  Tensor<Real> temporal;  // T x d
};

template <typename Real>
inline Real clip_at(const Tensor<Real>& clip, int f, int y, int x, int c) {
  int h = clip.shape[1], w = clip.shape[2], ch = clip.shape[3];
  return clip.data[((static_cast<size_t>(f) * h + y) * w + x) * ch + c];
}

/// Rearranges a clip (T_in x H x W x C) into one row per 3-D cuboid, flatten
/// order (time, row, col, channel). Pure data movement; no learned weights.
template <typename Real>
Tensor<Real> cuboid_matrix(const Tensor<Real>& clip, const TokenizerConfig& cfg) {
  cfg.validate();
  require(clip.shape ==
              (std::vector<int>{cfg.frames, cfg.height, cfg.width, cfg.channels}),
          "cuboid_matrix: clip shape " + shape_str(clip.shape) +
              " does not match config");
  Tensor<Real> m(cfg.t() * cfg.s(), cfg.cuboid_len());
  for (int t = 0; t < cfg.t(); ++t)
    for (int r = 0; r < cfg.s_h(); ++r)
      for (int c = 0; c < cfg.s_w(); ++c) {
        Real* row = m.row_ptr((t * cfg.s_h() + r) * cfg.s_w() + c);
        int i = 0;
        for (int dt = 0; dt < cfg.tubelet_t; ++dt)
          for (int dy = 0; dy < cfg.tubelet_h; ++dy)
            for (int dx = 0; dx < cfg.tubelet_w; ++dx)
              for (int ch = 0; ch < cfg.channels; ++ch)
                row[i++] = clip_at(clip, t * cfg.tubelet_t + dt,
                                   r * cfg.tubelet_h + dy,
                                   c * cfg.tubelet_w + dx, ch);
      }
  return m;
}

/// Inverse of cuboid_matrix's data movement (identity permutation check).
template <typename Real>
Tensor<Real> unpatchify(const Tensor<Real>& m, const TokenizerConfig& cfg) {
  cfg.validate();
  require(m.rows() == cfg.t() * cfg.s() && m.cols() == cfg.cuboid_len(),
          "unpatchify: matrix does not match config");
  Tensor<Real> clip(
      std::vector<int>{cfg.frames, cfg.height, cfg.width, cfg.channels});
  for (int t = 0; t < cfg.t(); ++t)
    for (int r = 0; r < cfg.s_h(); ++r)
      for (int c = 0; c < cfg.s_w(); ++c) {
        const Real* row = m.row_ptr((t * cfg.s_h() + r) * cfg.s_w() + c);
        int i = 0;
        for (int dt = 0; dt < cfg.tubelet_t; ++dt)
          for (int dy = 0; dy < cfg.tubelet_h; ++dy)
            for (int dx = 0; dx < cfg.tubelet_w; ++dx)
              for (int ch = 0; ch < cfg.channels; ++ch) {
                int f = t * cfg.tubelet_t + dt;
                int y = r * cfg.tubelet_h + dy;
                int x = c * cfg.tubelet_w + dx;
                clip.data[((static_cast<size_t>(f) * cfg.height + y) *
                               cfg.width +
                           x) *
                              cfg.channels +
                          ch] = row[i++];
              }
      }
  return clip;
}

/// Project an already-rearranged cuboid matrix (a record handle) through the
/// learned projection. Lets callers cache the cuboid matrix across steps.
template <typename Real>
TokenGrid<Real> patchify_from_matrix(ComputationRecord<Real>& rec,
                                     const Tensor<Real>& m,
                                     const TokenizerConfig& cfg,
                                     const Tensor<Real>& projection) {
  cfg.validate();
  require(m.rows() == cfg.t() * cfg.s() && m.cols() == cfg.cuboid_len(),
          "patchify: cuboid matrix does not match config");
  require(projection.is2d() && projection.rows() == cfg.cuboid_len() &&
              projection.cols() == cfg.dim,
          "patchify: projection must be (tubelet volume) x d");
  TokenGrid<Real> g;
  g.tokens = rec.matmul(m, projection);
  g.t = cfg.t();
  g.s_h = cfg.s_h();
  g.s_w = cfg.s_w();
  return g;
}

template <typename Real>
TokenGrid<Real> patchify(ComputationRecord<Real>& rec, const Tensor<Real>& clip,
                         const TokenizerConfig& cfg,
                         const Tensor<Real>& projection) {
  return patchify_from_matrix(rec, rec.constant(cuboid_matrix(clip, cfg)), cfg,
                              projection);
}

/// x_st += e^s_s + e^t_t. The spatial table repeats across temporal
/// positions; the temporal table repeats across spatial cells.
template <typename Real>
TokenGrid<Real> add_positional(ComputationRecord<Real>& rec,
                               const TokenGrid<Real>& grid,
                               const PositionalEmbeddings<Real>& emb) {
  require(emb.spatial.is2d() && emb.spatial.rows() == grid.s() &&
              emb.spatial.cols() == grid.tokens.cols(),
          "add_positional: spatial table must be S x d");
  require(emb.temporal.is2d() && emb.temporal.rows() == grid.t &&
              emb.temporal.cols() == grid.tokens.cols(),
          "add_positional: temporal table must be T x d");
  TokenGrid<Real> out = grid;
  out.tokens = rec.add(
      rec.add(grid.tokens, rec.tile_rows(emb.spatial, grid.t)),
      rec.repeat_each_row(emb.temporal, grid.s()));
  return out;
}

/// Attach the classification token. It is kept out of the token field matrix
/// (downstream stages choose where to splice it in) and carries no
/// positional embedding.
template <typename Real>
TokenGrid<Real> append_cls(ComputationRecord<Real>& rec,
                           const TokenGrid<Real>& grid,
                           const Tensor<Real>& cls_param) {
  (void)rec;
  require(!grid.has_cls, "append_cls: cls token already appended");
  require(cls_param.is2d() && cls_param.rows() == 1 &&
              cls_param.cols() == grid.tokens.cols(),
          "append_cls: cls must be 1 x d");
  TokenGrid<Real> out = grid;
  out.cls = cls_param;
  out.has_cls = true;
  return out;
}

}  // namespace inavit
