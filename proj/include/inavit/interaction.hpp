#pragma once

#include <map>
#include <vector>

#include "inavit/attention.hpp"
#include "inavit/record.hpp"
#include "inavit/roi.hpp"
#include "inavit/tokenizer.hpp"

namespace inavit {

enum class InteractionVariant { SCA, SOT, UB };

inline const char* variant_name(InteractionVariant v) {
  switch (v) {
    case InteractionVariant::SCA: return "sca";
    case InteractionVariant::SOT: return "sot";
    case InteractionVariant::UB: return "ub";
  }
  return "?";
}

/// T x K interaction tokens; K = N+1 (hand first, then object slots) for
/// SCA/SOT and K = 1 for UB. Masked input slots stay masked and keep the
/// all-zero null token.
template <typename Real>
struct InteractionTokens {
  int t = 0, k = 0;
  std::vector<std::vector<Tensor<Real>>> tokens;  // [T][K], each 1 x d
  std::vector<std::vector<uint8_t>> mask;         // [T][K]
};

template <typename Real>
Tensor<Real> stack_rows(ComputationRecord<Real>& rec,
                        const std::vector<Tensor<Real>>& rows) {
  require(!rows.empty(), "stack_rows: nothing to stack");
  Tensor<Real> out = rows[0];
  for (size_t i = 1; i < rows.size(); ++i) out = rec.concat_rows(out, rows[i]);
  return out;
}

/// Spatial cross-attention, frame-local. Hand query attends over that
/// frame's valid objects; each valid object attends over the hand plus the
/// other valid objects. Hand refinement and object refinement carry separate
/// projections. A frame with no valid object passes its hand token through
/// unrefined (or errors in strict mode).
template <typename Real>
InteractionTokens<Real> sca(ComputationRecord<Real>& rec,
                            const RegionTokens<Real>& regions,
                            const AttentionParams<Real>& hand_params,
                            const AttentionParams<Real>& obj_params,
                            bool strict = false) {
  InteractionTokens<Real> out;
  out.t = regions.t;
  out.k = regions.n + 1;
  for (int t = 0; t < regions.t; ++t) {
    std::vector<Tensor<Real>> valid;
    for (int i = 0; i < regions.n; ++i)
      if (regions.mask[t][i]) valid.push_back(regions.objects[t][i]);
    out.tokens.emplace_back();
    out.mask.emplace_back();
    if (valid.empty()) {
      require(!strict, std::string("sca: no valid objects in frame ") +
                           std::to_string(t));
      out.tokens[t].push_back(regions.hand[t]);
    } else {
      out.tokens[t].push_back(multi_head_attend(
          rec, hand_params, regions.hand[t], stack_rows(rec, valid)));
    }
    out.mask[t].push_back(1);
    for (int i = 0; i < regions.n; ++i) {
      if (!regions.mask[t][i]) {
        out.tokens[t].push_back(regions.objects[t][i]);  // null token
        out.mask[t].push_back(0);
        continue;
      }
      std::vector<Tensor<Real>> keys{regions.hand[t]};
      for (int j = 0; j < regions.n; ++j)
        if (j != i && regions.mask[t][j]) keys.push_back(regions.objects[t][j]);
      out.tokens[t].push_back(multi_head_attend(
          rec, obj_params, regions.objects[t][i], stack_rows(rec, keys)));
      out.mask[t].push_back(1);
    }
  }
  return out;
}

/// Object-track attention over time. The hand sequence self-attends across
/// all temporal positions; each object track self-attends over the frames
/// where that track is valid. Tracks never mix.
template <typename Real>
InteractionTokens<Real> sot(ComputationRecord<Real>& rec,
                            const RegionTokens<Real>& regions,
                            const AttentionParams<Real>& hand_params,
                            const AttentionParams<Real>& obj_params) {
  InteractionTokens<Real> out;
  out.t = regions.t;
  out.k = regions.n + 1;
  out.tokens.assign(static_cast<size_t>(regions.t), {});
  out.mask.assign(static_cast<size_t>(regions.t), {});
  Tensor<Real> hand_seq = stack_rows(rec, regions.hand);
  Tensor<Real> hand_ref =
      multi_head_attend(rec, hand_params, hand_seq, hand_seq);
  for (int t = 0; t < regions.t; ++t) {
    out.tokens[t].resize(static_cast<size_t>(regions.n) + 1);
    out.mask[t].assign(static_cast<size_t>(regions.n) + 1, 0);
    out.tokens[t][0] = rec.gather_rows(hand_ref, {t});
    out.mask[t][0] = 1;
    for (int i = 0; i < regions.n; ++i) {
      out.tokens[t][i + 1] = regions.objects[t][i];  // null unless refined
      out.mask[t][i + 1] = regions.mask[t][i];
    }
  }
  std::map<int, std::vector<std::pair<int, int>>> by_track;  // track -> (t, slot)
  for (int t = 0; t < regions.t; ++t)
    for (int i = 0; i < regions.n; ++i)
      if (regions.mask[t][i]) by_track[regions.tracks[t][i]].push_back({t, i});
  for (const auto& [track, slots] : by_track) {
    std::vector<Tensor<Real>> seq;
    for (const auto& [t, i] : slots) seq.push_back(regions.objects[t][i]);
    Tensor<Real> stacked = stack_rows(rec, seq);
    Tensor<Real> refined = multi_head_attend(rec, obj_params, stacked, stacked);
    for (size_t j = 0; j < slots.size(); ++j)
      out.tokens[slots[j].first][slots[j].second + 1] =
          rec.gather_rows(refined, {static_cast<int>(j)});
  }
  return out;
}

/// Union-box tokens: pool the hand-with-nearest-object union region of each
/// temporal position, then self-attend the T pooled tokens over time.
template <typename Real>
InteractionTokens<Real> ub(ComputationRecord<Real>& rec,
                           const TokenGrid<Real>& grid,
                           const std::vector<BoundingBox>& union_boxes,
                           const RoiHeadParams<Real>& head,
                           const AttentionParams<Real>& params, double w_p,
                           double h_p) {
  require(static_cast<int>(union_boxes.size()) == grid.t,
          "ub: need one union box per temporal position");
  std::vector<Tensor<Real>> pooled;
  for (int t = 0; t < grid.t; ++t) {
    auto plan = std::make_shared<const RowMixPlan>(
        roi_align_plan(grid.s_h, grid.s_w, w_p, h_p, union_boxes[t], head.g,
                       t * grid.s()));
    pooled.push_back(region_token(rec, rec.row_mix(grid.tokens, plan), head));
  }
  Tensor<Real> seq = stack_rows(rec, pooled);
  Tensor<Real> refined = multi_head_attend(rec, params, seq, seq);
  InteractionTokens<Real> out;
  out.t = grid.t;
  out.k = 1;
  for (int t = 0; t < grid.t; ++t) {
    out.tokens.push_back({rec.gather_rows(refined, {t})});
    out.mask.push_back({1});
  }
  return out;
}

template <typename Real>
struct InteractionParams {
  AttentionParams<Real> sca_hand, sca_obj;
  AttentionParams<Real> sot_hand, sot_obj;
  AttentionParams<Real> ub_attn;
};

template <typename Real>
InteractionTokens<Real> model_interactions(
    ComputationRecord<Real>& rec, InteractionVariant variant,
    const RegionTokens<Real>& regions, const TokenGrid<Real>& grid,
    const BlockRegions& blocks, const RoiHeadParams<Real>& head,
    const InteractionParams<Real>& params, double w_p, double h_p,
    bool strict = false) {
  switch (variant) {
    case InteractionVariant::SCA:
      return sca(rec, regions, params.sca_hand, params.sca_obj, strict);
    case InteractionVariant::SOT:
      return sot(rec, regions, params.sot_hand, params.sot_obj);
    case InteractionVariant::UB:
      return ub(rec, grid, blocks.unions, head, params.ub_attn, w_p, h_p);
  }
  fail("unknown interaction variant");
}

}  // namespace inavit
