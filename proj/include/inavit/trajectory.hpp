#pragma once

#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "inavit/attention.hpp"
#include "inavit/interaction.hpp"
#include "inavit/record.hpp"
#include "inavit/tokenizer.hpp"

namespace inavit {

/// Two-stage trajectory attention weights. Stage 1 pools each query against
/// one frame of context at a time (shared wq/wk/wv); stage 2 attends over
/// the per-frame pooled tokens with its own projections, querying from the
/// pooled token of the query's home frame. causal=true restricts reference
/// frames to home..T-1.
template <typename Real>
struct TcaParams {
  Tensor<Real> wq, wk, wv;              // stage 1, each d x d
  Tensor<Real> hat_wq, hat_wk, hat_wv;  // stage 2, each d x d
  Tensor<Real> wo;                      // output projection, d x d
  int heads = 1;
  bool causal = false;
};

template <typename Real>
void check_tca_params(const TcaParams<Real>& p, int d) {
  require(p.heads >= 1 && d % p.heads == 0,
          "trajectory: heads must divide width");
  for (const Tensor<Real>* w :
       {&p.wq, &p.wk, &p.wv, &p.hat_wq, &p.hat_wk, &p.hat_wv, &p.wo})
    require(w->rows() == d && w->cols() == d,
            "trajectory: projection must be " + std::to_string(d) + "x" +
                std::to_string(d) + ", got " + shape_str(w->shape));
}

/// A batch of query tokens sharing one home frame (rows of `tokens`).
template <typename Real>
struct TrajectoryGroup {
  Tensor<Real> tokens;  // m x d
  int home = 0;
};

template <typename Real>
struct TrajectoryAttend {
  std::vector<Tensor<Real>> refined;  // per group, m x d (rows preserved)
  // stage1_weights[g][j][h]: m x S pooling weights of reference frame
  // ref_start[g] + j under head h; filled only when collected.
  std::vector<std::vector<std::vector<Tensor<Real>>>> stage1_weights;
  std::vector<int> ref_start;
  std::vector<int> homes;  // per group, the query rows' home frame
};

template <typename Real>
TrajectoryAttend<Real> trajectory_attend_full(
    ComputationRecord<Real>& rec,
    const std::vector<TrajectoryGroup<Real>>& groups,
    const TokenGrid<Real>& grid, const TcaParams<Real>& p,
    bool collect_weights = false) {
  int t_count = grid.t, s = grid.s(), d = grid.tokens.cols();
  require(t_count > 0 && s > 0, "trajectory_attend: empty context");
  require(grid.tokens.rows() == t_count * s,
          "trajectory_attend: context rows != T*S");
  check_tca_params(p, d);
  int dh = d / p.heads;
  const Real quarter = static_cast<Real>(std::pow(static_cast<double>(dh), -0.25));

  TrajectoryAttend<Real> out;
  if (groups.empty()) return out;

  Tensor<Real> k_all = rec.matmul(grid.tokens, p.wk);
  Tensor<Real> v_all = rec.matmul(grid.tokens, p.wv);
  std::vector<std::vector<Tensor<Real>>> k_fh(static_cast<size_t>(t_count));
  std::vector<std::vector<Tensor<Real>>> v_fh(static_cast<size_t>(t_count));
  for (int f = 0; f < t_count; ++f) {
    std::vector<int> idx(static_cast<size_t>(s));
    std::iota(idx.begin(), idx.end(), f * s);
    Tensor<Real> kf = rec.gather_rows(k_all, idx);
    Tensor<Real> vf = rec.gather_rows(v_all, idx);
    for (int h = 0; h < p.heads; ++h) {
      k_fh[f].push_back(rec.slice_cols(kf, h * dh, (h + 1) * dh));
      v_fh[f].push_back(rec.slice_cols(vf, h * dh, (h + 1) * dh));
    }
  }

  for (const auto& g : groups) {
    require(g.home >= 0 && g.home < t_count,
            "trajectory_attend: home frame out of range");
    require(g.tokens.cols() == d, "trajectory_attend: query width mismatch");
    int start = p.causal ? g.home : 0;
    int refs = t_count - start;

    Tensor<Real> q = rec.matmul(g.tokens, p.wq);
    std::vector<Tensor<Real>> qh;
    for (int h = 0; h < p.heads; ++h)
      qh.push_back(rec.slice_cols(q, h * dh, (h + 1) * dh));

    std::vector<Tensor<Real>> pooled;  // per reference frame, m x d
    std::vector<std::vector<Tensor<Real>>> wmaps;
    for (int j = 0; j < refs; ++j) {
      int f = start + j;
      Tensor<Real> cat;
      std::vector<Tensor<Real>> per_head_w;
      for (int h = 0; h < p.heads; ++h) {
        auto a = attend_full(rec, qh[h], k_fh[f][h], v_fh[f][h]);
        cat = h == 0 ? a.out : rec.concat_cols(cat, a.out);
        if (collect_weights) per_head_w.push_back(a.weights);
      }
      pooled.push_back(cat);
      if (collect_weights) wmaps.push_back(std::move(per_head_w));
    }

    Tensor<Real> qhat = rec.matmul(pooled[g.home - start], p.hat_wq);
    std::vector<Tensor<Real>> khat, vhat;
    for (int j = 0; j < refs; ++j) {
      khat.push_back(rec.matmul(pooled[j], p.hat_wk));
      vhat.push_back(rec.matmul(pooled[j], p.hat_wv));
    }
    Tensor<Real> head_cat;
    for (int h = 0; h < p.heads; ++h) {
      Tensor<Real> qs =
          rec.scale(rec.slice_cols(qhat, h * dh, (h + 1) * dh), quarter);
      Tensor<Real> logits;
      for (int j = 0; j < refs; ++j) {
        Tensor<Real> ks =
            rec.scale(rec.slice_cols(khat[j], h * dh, (h + 1) * dh), quarter);
        Tensor<Real> col = rec.row_dot(qs, ks);
        logits = j == 0 ? col : rec.concat_cols(logits, col);
      }
      Tensor<Real> w = rec.row_softmax(logits);
      Tensor<Real> acc;
      for (int j = 0; j < refs; ++j) {
        Tensor<Real> term = rec.scale_rows(
            rec.slice_cols(w, j, j + 1),
            rec.slice_cols(vhat[j], h * dh, (h + 1) * dh));
        acc = j == 0 ? term : rec.add(acc, term);
      }
      head_cat = h == 0 ? acc : rec.concat_cols(head_cat, acc);
    }
    out.refined.push_back(rec.matmul(head_cat, p.wo));
    out.ref_start.push_back(start);
    out.homes.push_back(g.home);
    if (collect_weights) out.stage1_weights.push_back(std::move(wmaps));
  }
  return out;
}

/// One query token per entry; each carries its home frame index.
template <typename Real>
std::vector<Tensor<Real>> trajectory_attend(
    ComputationRecord<Real>& rec,
    const std::vector<std::pair<Tensor<Real>, int>>& queries,
    const TokenGrid<Real>& grid, const TcaParams<Real>& p) {
  std::vector<TrajectoryGroup<Real>> groups;
  for (const auto& [tok, home] : queries) groups.push_back({tok, home});
  return trajectory_attend_full(rec, groups, grid, p).refined;
}

/// Context infusion: every valid interaction token is refined by trajectory
/// attention against the video token grid; masked slots pass through
/// untouched. Queries sharing a home frame are batched.
template <typename Real>
InteractionTokens<Real> tca(ComputationRecord<Real>& rec,
                            const InteractionTokens<Real>& inter,
                            const TokenGrid<Real>& grid,
                            const TcaParams<Real>& p,
                            TrajectoryAttend<Real>* stage1 = nullptr) {
  InteractionTokens<Real> out = inter;
  std::vector<TrajectoryGroup<Real>> groups;
  std::vector<std::vector<int>> slots_per_group;
  for (int t = 0; t < inter.t; ++t) {
    std::vector<int> slots;
    std::vector<Tensor<Real>> rows;
    for (int k = 0; k < inter.k; ++k)
      if (inter.mask[t][k]) {
        slots.push_back(k);
        rows.push_back(inter.tokens[t][k]);
      }
    if (slots.empty()) continue;
    groups.push_back({stack_rows(rec, rows), t});
    slots_per_group.push_back(std::move(slots));
  }
  if (groups.empty()) return out;
  auto full = trajectory_attend_full(rec, groups, grid, p, stage1 != nullptr);
  if (stage1) *stage1 = full;
  const auto& refined = full.refined;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& slots = slots_per_group[gi];
    for (size_t r = 0; r < slots.size(); ++r)
      out.tokens[groups[gi].home][slots[r]] =
          slots.size() == 1
              ? refined[gi]
              : rec.gather_rows(refined[gi], {static_cast<int>(r)});
  }
  return out;
}

/// Pre-norm transformer block: grid tokens self-refined by trajectory
/// attention (one query group per frame), the cls token by plain attention
/// over cls + all grid tokens sharing the stage-1 projections; residual,
/// then a d -> 4d -> d GELU MLP with its own residual.
template <typename Real>
struct BlockParams {
  Tensor<Real> norm1_scale, norm1_shift;  // 1 x d
  TcaParams<Real> attn;
  Tensor<Real> norm2_scale, norm2_shift;  // 1 x d
  Tensor<Real> mlp_w1, mlp_b1;            // d x 4d, 1 x 4d
  Tensor<Real> mlp_w2, mlp_b2;            // 4d x d, 1 x d
};

template <typename Real>
void check_block_params(const BlockParams<Real>& b, int d) {
  check_tca_params(b.attn, d);
  for (const Tensor<Real>* v :
       {&b.norm1_scale, &b.norm1_shift, &b.norm2_scale, &b.norm2_shift,
        &b.mlp_b2})
    require(v->rows() == 1 && v->cols() == d, "block: per-channel vector must be 1x" +
                                                  std::to_string(d));
  require(b.mlp_w1.rows() == d && b.mlp_w1.cols() == 4 * d &&
              b.mlp_b1.rows() == 1 && b.mlp_b1.cols() == 4 * d &&
              b.mlp_w2.rows() == 4 * d && b.mlp_w2.cols() == d,
          "block: mlp must be d -> 4d -> d");
}

template <typename Real>
Tensor<Real> block_mlp(ComputationRecord<Real>& rec, const Tensor<Real>& x,
                       const BlockParams<Real>& b) {
  Tensor<Real> h =
      rec.gelu(rec.add_row_vec(rec.matmul(x, b.mlp_w1), b.mlp_b1));
  return rec.add_row_vec(rec.matmul(h, b.mlp_w2), b.mlp_b2);
}

template <typename Real>
TokenGrid<Real> backbone_block(ComputationRecord<Real>& rec,
                               const TokenGrid<Real>& grid,
                               const BlockParams<Real>& b,
                               Tensor<Real>* rides = nullptr,
                               TrajectoryAttend<Real>* stage1 = nullptr) {
  require(grid.has_cls, "backbone_block: cls token required");
  int d = grid.tokens.cols(), s = grid.s();
  check_block_params(b, d);
  const Real eps = static_cast<Real>(1e-5);

  Tensor<Real> nt = rec.layer_norm(grid.tokens, b.norm1_scale, b.norm1_shift, eps);
  Tensor<Real> nc = rec.layer_norm(grid.cls, b.norm1_scale, b.norm1_shift, eps);

  TokenGrid<Real> ctx;
  ctx.tokens = nt;
  ctx.t = grid.t;
  ctx.s_h = grid.s_h;
  ctx.s_w = grid.s_w;
  std::vector<TrajectoryGroup<Real>> groups;
  for (int t = 0; t < grid.t; ++t) {
    std::vector<int> idx(static_cast<size_t>(s));
    std::iota(idx.begin(), idx.end(), t * s);
    groups.push_back({rec.gather_rows(nt, idx), t});
  }
  auto traj = trajectory_attend_full(rec, groups, ctx, b.attn, stage1 != nullptr);
  if (stage1) *stage1 = traj;
  Tensor<Real> attn_tokens = stack_rows(rec, traj.refined);

  // cls (and any ride-along tokens) use plain attention over the whole
  // sequence, sharing the stage-1 projections.
  int n_rides = rides ? rides->rows() : 0;
  Tensor<Real> plain = nc;
  if (n_rides) {
    Tensor<Real> nr = rec.layer_norm(*rides, b.norm1_scale, b.norm1_shift, eps);
    plain = rec.concat_rows(nc, nr);
  }
  AttentionParams<Real> cls_params{b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo,
                                   b.attn.heads};
  Tensor<Real> plain_ref =
      multi_head_attend(rec, cls_params, plain, rec.concat_rows(plain, nt));
  Tensor<Real> cls_ref =
      n_rides ? rec.gather_rows(plain_ref, {0}) : plain_ref;

  Tensor<Real> x_tokens = rec.add(grid.tokens, attn_tokens);
  Tensor<Real> x_cls = rec.add(grid.cls, cls_ref);

  Tensor<Real> n2t = rec.layer_norm(x_tokens, b.norm2_scale, b.norm2_shift, eps);
  Tensor<Real> n2c = rec.layer_norm(x_cls, b.norm2_scale, b.norm2_shift, eps);

  if (n_rides) {
    std::vector<int> idx(static_cast<size_t>(n_rides));
    std::iota(idx.begin(), idx.end(), 1);
    Tensor<Real> x_r = rec.add(*rides, rec.gather_rows(plain_ref, idx));
    Tensor<Real> n2r = rec.layer_norm(x_r, b.norm2_scale, b.norm2_shift, eps);
    *rides = rec.add(x_r, block_mlp(rec, n2r, b));
  }

  TokenGrid<Real> out = grid;
  out.tokens = rec.add(x_tokens, block_mlp(rec, n2t, b));
  out.cls = rec.add(x_cls, block_mlp(rec, n2c, b));
  return out;
}

}  // namespace inavit
