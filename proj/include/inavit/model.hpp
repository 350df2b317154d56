#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "inavit/attention.hpp"
#include "inavit/interaction.hpp"
#include "inavit/record.hpp"
#include "inavit/rng.hpp"
#include "inavit/roi.hpp"
#include "inavit/tokenizer.hpp"
#include "inavit/trajectory.hpp"

namespace inavit {

struct InAViTConfig {
  TokenizerConfig tok;
  int objects = 2;  // object region slots per temporal block (N)
  InteractionVariant variant = InteractionVariant::SCA;
  int heads = 4;
  int depth = 2;   // backbone blocks (L)
  int classes = 8;  // label count (C)
  bool causal = false;  // restrict trajectory references to t' >= t
  int gap = 4;          // anticipation gap in input frames
  int roi_grid = 2;     // pooling bins per box side

  // Ablation switches.
  bool use_ci = true;         // trajectory context infusion of interactions
  bool use_icv = true;        // fuse interactions into the video tokens
  bool backbone_only = false; // no region/interaction path at all
  bool hand_only = false;     // keep only the refined hand slot
  bool object_only = false;   // keep only the refined object slots

  void validate() const {
    tok.validate();
    require(classes >= 2, "config: need at least 2 classes");
    require(objects >= 1, "config: need at least 1 object slot");
    require(heads >= 1 && tok.dim % heads == 0,
            "config: heads must divide token width");
    require(depth >= 1, "config: need at least 1 backbone block");
    require(gap >= 0, "config: anticipation gap must be nonnegative");
    require(roi_grid >= 1, "config: pooling grid must be positive");
    require(!(hand_only && object_only),
            "config: hand_only and object_only are mutually exclusive");
    require(!(hand_only || object_only) ||
                (variant == InteractionVariant::SCA && !backbone_only),
            "config: hand/object filters apply to the spatial variant only");
  }
};

/// Canonical parameter names and shapes for a config. The set is exactly
/// determined by the config: inactive components contribute no entries.
inline std::vector<std::pair<std::string, std::vector<int>>> param_specs(
    const InAViTConfig& cfg) {
  cfg.validate();
  int d = cfg.tok.dim;
  std::vector<std::pair<std::string, std::vector<int>>> out;
  auto add = [&](std::string n, int r, int c) {
    out.push_back({std::move(n), {r, c}});
  };
  auto attn4 = [&](const std::string& p) {
    for (const char* s : {"_wq", "_wk", "_wv", "_wo"}) add(p + s, d, d);
  };
  add("patch_proj", cfg.tok.cuboid_len(), d);
  add("pos_spatial", cfg.tok.s(), d);
  add("pos_temporal", cfg.tok.t(), d);
  add("cls", 1, d);
  if (!cfg.backbone_only) {
    add("roi_w1", d, d);
    add("roi_b1", 1, d);
    add("roi_w2", d, d);
    add("roi_b2", 1, d);
    switch (cfg.variant) {
      case InteractionVariant::SCA:
        attn4("sca_hand");
        attn4("sca_obj");
        break;
      case InteractionVariant::SOT:
        attn4("sot_hand");
        attn4("sot_obj");
        break;
      case InteractionVariant::UB:
        attn4("ub");
        break;
    }
    if (cfg.use_ci)
      for (const char* s : {"_wq", "_wk", "_wv", "_hq", "_hk", "_hv", "_wo"})
        add(std::string("tca") + s, d, d);
    if (cfg.use_icv) attn4("icv");
  }
  for (int i = 0; i < cfg.depth; ++i) {
    std::string p = "block" + std::to_string(i);
    add(p + "_norm1_scale", 1, d);
    add(p + "_norm1_shift", 1, d);
    for (const char* s : {"_wq", "_wk", "_wv", "_hq", "_hk", "_hv", "_wo"})
      add(p + s, d, d);
    add(p + "_norm2_scale", 1, d);
    add(p + "_norm2_shift", 1, d);
    add(p + "_mlp_w1", d, 4 * d);
    add(p + "_mlp_b1", 1, 4 * d);
    add(p + "_mlp_w2", 4 * d, d);
    add(p + "_mlp_b2", 1, d);
  }
  add("final_norm_scale", 1, d);
  add("final_norm_shift", 1, d);
  add("classifier_w", d, cfg.classes);
  add("classifier_b", 1, cfg.classes);
  return out;
}

template <typename Real>
using ParamValues = std::map<std::string, Tensor<Real>>;

/// Seeded initialization. Every tensor draws from its own stream keyed by
/// (seed, name), so adding or removing components never shifts the values
/// of unrelated parameters.
template <typename Real>
ParamValues<Real> init_params(const InAViTConfig& cfg, uint64_t seed) {
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() &&
           s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  ParamValues<Real> out;
  for (const auto& [name, shape] : param_specs(cfg)) {
    Tensor<Real> t(shape[0], shape[1]);
    if (ends_with(name, "_scale")) {
      for (auto& v : t.data) v = Real(1);
    } else if (ends_with(name, "_shift") || ends_with(name, "_b1") ||
               ends_with(name, "_b2") || name == "classifier_b") {
      // zeros
    } else {
      Rng rng(mix_seed(seed, name));
      double bound = (name == "pos_spatial" || name == "pos_temporal" ||
                      name == "cls")
                         ? 0.02
                         : 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : t.data) v = static_cast<Real>(rng.uniform(-bound, bound));
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

template <typename Real>
void check_params(const ParamValues<Real>& values, const InAViTConfig& cfg) {
  auto specs = param_specs(cfg);
  std::map<std::string, std::vector<int>> want(
      std::make_move_iterator(specs.begin()),
      std::make_move_iterator(specs.end()));
  for (const auto& [name, v] : values) {
    auto it = want.find(name);
    require(it != want.end(), "params: unknown parameter " + name);
    require(v.shape == it->second,
            "params: shape mismatch for " + name + ": expected " +
                shape_str(it->second) + ", got " + shape_str(v.shape));
  }
  for (const auto& [name, shape] : want)
    require(values.count(name) != 0, "params: missing parameter " + name);
}

/// Parameter handles bound onto one record (as trainable leaves or
/// constants), addressed by canonical name.
template <typename Real>
struct BoundParams {
  std::map<std::string, Tensor<Real>> h;

  const Tensor<Real>& operator()(const std::string& name) const {
    auto it = h.find(name);
    require(it != h.end(), "params: " + name + " not bound");
    return it->second;
  }
};

template <typename Real>
BoundParams<Real> bind_params(ComputationRecord<Real>& rec,
                              const ParamValues<Real>& values,
                              const InAViTConfig& cfg, bool trainable) {
  check_params(values, cfg);
  BoundParams<Real> b;
  for (const auto& [name, v] : values)
    b.h.emplace(name, trainable ? rec.param(v, name) : rec.constant(v));
  return b;
}

template <typename Real>
AttentionParams<Real> attn_of(const BoundParams<Real>& p,
                              const std::string& prefix, int heads) {
  return {p(prefix + "_wq"), p(prefix + "_wk"), p(prefix + "_wv"),
          p(prefix + "_wo"), heads};
}

template <typename Real>
TcaParams<Real> tca_of(const BoundParams<Real>& p, const std::string& prefix,
                       int heads, bool causal) {
  return {p(prefix + "_wq"), p(prefix + "_wk"), p(prefix + "_wv"),
          p(prefix + "_hq"), p(prefix + "_hk"), p(prefix + "_hv"),
          p(prefix + "_wo"), heads, causal};
}

template <typename Real>
BlockParams<Real> block_of(const BoundParams<Real>& p, int i, int heads,
                           bool causal) {
  std::string b = "block" + std::to_string(i);
  return {p(b + "_norm1_scale"), p(b + "_norm1_shift"),
          tca_of(p, b, heads, causal),
          p(b + "_norm2_scale"), p(b + "_norm2_shift"),
          p(b + "_mlp_w1"), p(b + "_mlp_b1"),
          p(b + "_mlp_w2"), p(b + "_mlp_b2")};
}

/// Host-side per-episode input: the flattened cuboid matrix (ready for the
/// patch projection) plus per-block region geometry. Computed once per
/// episode and reused across training steps.
template <typename Real>
struct EpisodeInput {
  Tensor<Real> cuboids;  // (T*S) x cuboid_len
  BlockRegions blocks;   // unused when backbone_only
  int label = -1;
};

inline int find_hand_track(const std::vector<BoundingBox>& tracked) {
  for (const auto& b : tracked)
    if (b.kind == BoxKind::Hand) return b.track_id;
  fail("prepare_episode: no hand detection in episode");
}

template <typename Real>
EpisodeInput<Real> prepare_episode(const Tensor<Real>& clip,
                                   const std::vector<BoundingBox>& dets,
                                   const InAViTConfig& cfg, int label = -1) {
  cfg.validate();
  EpisodeInput<Real> e;
  e.cuboids = cuboid_matrix(clip, cfg.tok);
  e.label = label;
  if (!cfg.backbone_only) {
    auto tracked = associate_tracks(dets);
    int hand = find_hand_track(tracked);
    auto sel = select_regions(tracked, hand, cfg.tok.frames, cfg.objects);
    e.blocks = prepare_block_regions(sel, cfg.tok.tubelet_t);
  }
  return e;
}

/// Self-attention over the valid interaction tokens concatenated with the
/// video tokens; only the rows at the original video-token positions are
/// returned, so the output grid has exactly the input grid's shape.
template <typename Real>
TokenGrid<Real> icv(ComputationRecord<Real>& rec,
                    const InteractionTokens<Real>& inter,
                    const TokenGrid<Real>& grid,
                    const AttentionParams<Real>& p,
                    std::vector<Tensor<Real>>* weights = nullptr) {
  std::vector<Tensor<Real>> rows;
  for (int t = 0; t < inter.t; ++t)
    for (int k = 0; k < inter.k; ++k)
      if (inter.mask[t][k]) rows.push_back(inter.tokens[t][k]);
  int extra = static_cast<int>(rows.size());
  Tensor<Real> x_a = extra ? rec.concat_rows(stack_rows(rec, rows), grid.tokens)
                           : grid.tokens;
  auto full = multi_head_attend_full(rec, p, x_a, x_a);
  if (weights) *weights = full.head_weights;
  TokenGrid<Real> out = grid;
  if (extra) {
    std::vector<int> idx(static_cast<size_t>(grid.tokens.rows()));
    std::iota(idx.begin(), idx.end(), extra);
    out.tokens = rec.gather_rows(full.out, idx);
  } else {
    out.tokens = full.out;
  }
  return out;
}

/// Attention maps collected during a forward pass, for export.
template <typename Real>
struct ForwardTrace {
  TrajectoryAttend<Real> context_infusion;          // tca stage-1 maps
  std::vector<TrajectoryAttend<Real>> blocks;       // per backbone block
  std::vector<Tensor<Real>> fusion_weights;         // icv, per head
};

template <typename Real>
Tensor<Real> forward(ComputationRecord<Real>& rec, const EpisodeInput<Real>& ep,
                     const BoundParams<Real>& p, const InAViTConfig& cfg,
                     ForwardTrace<Real>* trace = nullptr) {
  cfg.validate();
  double w_p = cfg.tok.tubelet_w, h_p = cfg.tok.tubelet_h;

  rec.set_section("tokenizer");
  TokenGrid<Real> grid = patchify_from_matrix(rec, rec.constant(ep.cuboids),
                                              cfg.tok, p("patch_proj"));
  grid = add_positional(
      rec, grid,
      PositionalEmbeddings<Real>{p("pos_spatial"), p("pos_temporal")});

  std::optional<Tensor<Real>> rides;
  if (!cfg.backbone_only) {
    rec.set_section("region tokens");
    RoiHeadParams<Real> head{p("roi_w1"), p("roi_b1"), p("roi_w2"), p("roi_b2"),
                             cfg.roi_grid};
    auto regions = build_region_tokens(rec, grid, ep.blocks, head, w_p, h_p);

    rec.set_section("interaction");
    InteractionParams<Real> ip;
    switch (cfg.variant) {
      case InteractionVariant::SCA:
        ip.sca_hand = attn_of(p, "sca_hand", cfg.heads);
        ip.sca_obj = attn_of(p, "sca_obj", cfg.heads);
        break;
      case InteractionVariant::SOT:
        ip.sot_hand = attn_of(p, "sot_hand", cfg.heads);
        ip.sot_obj = attn_of(p, "sot_obj", cfg.heads);
        break;
      case InteractionVariant::UB:
        ip.ub_attn = attn_of(p, "ub", cfg.heads);
        break;
    }
    auto inter = model_interactions(rec, cfg.variant, regions, grid, ep.blocks,
                                    head, ip, w_p, h_p);
    if (cfg.hand_only || cfg.object_only)
      for (int t = 0; t < inter.t; ++t)
        for (int k = 0; k < inter.k; ++k)
          if (k == 0 ? cfg.object_only : cfg.hand_only) inter.mask[t][k] = 0;

    if (cfg.use_ci) {
      rec.set_section("context infusion");
      inter = tca(rec, inter, grid, tca_of(p, "tca", cfg.heads, cfg.causal),
                  trace ? &trace->context_infusion : nullptr);
    }
    if (cfg.use_icv) {
      rec.set_section("interaction fusion");
      grid = icv(rec, inter, grid, attn_of(p, "icv", cfg.heads),
                 trace ? &trace->fusion_weights : nullptr);
    } else {
      std::vector<Tensor<Real>> rows;
      for (int t = 0; t < inter.t; ++t)
        for (int k = 0; k < inter.k; ++k)
          if (inter.mask[t][k]) rows.push_back(inter.tokens[t][k]);
      if (!rows.empty()) rides = stack_rows(rec, rows);
    }
  }

  rec.set_section("backbone");
  grid = append_cls(rec, grid, p("cls"));
  if (trace) trace->blocks.resize(static_cast<size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i)
    grid = backbone_block(rec, grid, block_of(p, i, cfg.heads, cfg.causal),
                          rides ? &*rides : nullptr,
                          trace ? &trace->blocks[static_cast<size_t>(i)]
                                : nullptr);

  rec.set_section("classifier");
  Tensor<Real> normed = rec.layer_norm(grid.cls, p("final_norm_scale"),
                                       p("final_norm_shift"), Real(1e-5));
  return rec.add_row_vec(rec.matmul(normed, p("classifier_w")),
                         p("classifier_b"));
}

/// Convenience wrapper: raw clip + detections + parameter values to logits.
template <typename Real>
Tensor<Real> forward_values(const Tensor<Real>& clip,
                            const std::vector<BoundingBox>& dets,
                            const ParamValues<Real>& params,
                            const InAViTConfig& cfg) {
  ComputationRecord<Real> rec;
  auto ep = prepare_episode(clip, dets, cfg);
  auto bound = bind_params(rec, params, cfg, false);
  return forward(rec, ep, bound, cfg);
}

/// Indices of the k largest logits, descending; ties broken by ascending
/// index.
template <typename Real>
std::vector<int> predict_topk(const Tensor<Real>& logits, int k) {
  require(logits.is2d() && logits.rows() == 1,
          "predict_topk: logits must be a single row");
  int c = logits.cols();
  require(k >= 1 && k <= c, "predict_topk: k out of range");
  std::vector<int> idx(static_cast<size_t>(c));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (logits.at(0, a) != logits.at(0, b))
      return logits.at(0, a) > logits.at(0, b);
    return a < b;
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace inavit
