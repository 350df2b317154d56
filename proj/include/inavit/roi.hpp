#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <tuple>
#include <vector>

#include "inavit/attention.hpp"
#include "inavit/record.hpp"
#include "inavit/tensor.hpp"
#include "inavit/tokenizer.hpp"

namespace inavit {

enum class BoxKind : uint8_t { Hand, Object };

struct BoundingBox {
  int frame = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixel units, corners ordered
  BoxKind kind = BoxKind::Object;
  double score = 1.0;
  int track_id = -1;  // -1 = unassigned

  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const BoundingBox& a, const BoundingBox& b) {
  double dx = a.cx() - b.cx(), dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

inline BoundingBox clamp_box(BoundingBox b, double width, double height) {
  b.x1 = std::clamp(b.x1, 0.0, width);
  b.x2 = std::clamp(b.x2, 0.0, width);
  b.y1 = std::clamp(b.y1, 0.0, height);
  b.y2 = std::clamp(b.y2, 0.0, height);
  if (b.x2 < b.x1) std::swap(b.x1, b.x2);
  if (b.y2 < b.y1) std::swap(b.y1, b.y2);
  return b;
}

/// Greedy frame-to-previous-frame association by descending IoU. Detections
/// of different kinds never match. Unmatched detections open new tracks, ids
/// assigned in first-appearance order. Ties break on (previous track id,
/// detection order), so the result is deterministic.
inline std::vector<BoundingBox> associate_tracks(std::vector<BoundingBox> dets,
                                                 double iou_threshold = 0.1) {
  for (size_t i = 1; i < dets.size(); ++i)
    require(dets[i - 1].frame <= dets[i].frame,
            "associate_tracks: detections must be sorted by frame");
  for (BoundingBox& b : dets) b.track_id = -1;
  int next_track = 0;
  std::vector<size_t> prev;  // indices of the previous frame's detections
  size_t i = 0;
  while (i < dets.size()) {
    size_t j = i;
    while (j < dets.size() && dets[j].frame == dets[i].frame) ++j;
    std::vector<size_t> cur;
    for (size_t k = i; k < j; ++k) cur.push_back(k);
    if (!prev.empty() && dets[prev[0]].frame == dets[i].frame - 1) {
      // candidate pairs above threshold, best IoU first
      std::vector<std::tuple<double, int, size_t, size_t>> cand;
      for (size_t p : prev)
        for (size_t c : cur) {
          if (dets[p].kind != dets[c].kind) continue;
          double v = iou(dets[p], dets[c]);
          if (v > iou_threshold)
            cand.emplace_back(-v, dets[p].track_id, p, c);
        }
      std::sort(cand.begin(), cand.end());
      std::vector<uint8_t> prev_used(dets.size(), 0), cur_used(dets.size(), 0);
      for (const auto& [neg, tid, p, c] : cand) {
        if (prev_used[p] || cur_used[c]) continue;
        prev_used[p] = cur_used[c] = 1;
        dets[c].track_id = dets[p].track_id;
      }
    }
    for (size_t c : cur)
      if (dets[c].track_id < 0) dets[c].track_id = next_track++;
    prev = std::move(cur);
    i = j;
  }
  return dets;
}

/// Per pixel frame: the hand box plus the N tracked objects nearest to it,
/// ascending center distance; short frames padded with invalid slots.
struct SelectedRegions {
  int frames = 0, n = 0;
  std::vector<BoundingBox> hand;                   // [frames]
  std::vector<std::vector<BoundingBox>> objects;   // [frames][N]
  std::vector<std::vector<uint8_t>> mask;          // [frames][N]
  std::vector<std::vector<int>> tracks;            // [frames][N], -1 invalid
};

inline SelectedRegions select_regions(const std::vector<BoundingBox>& tracks,
                                      int hand_track, int frames, int n) {
  require(n >= 1, "select_regions: need at least one object slot");
  require(frames >= 1, "select_regions: need at least one frame");
  SelectedRegions out;
  out.frames = frames;
  out.n = n;
  out.hand.resize(static_cast<size_t>(frames));
  out.objects.assign(static_cast<size_t>(frames),
                     std::vector<BoundingBox>(static_cast<size_t>(n)));
  out.mask.assign(static_cast<size_t>(frames),
                  std::vector<uint8_t>(static_cast<size_t>(n), 0));
  out.tracks.assign(static_cast<size_t>(frames),
                    std::vector<int>(static_cast<size_t>(n), -1));
  std::vector<uint8_t> have_hand(static_cast<size_t>(frames), 0);
  std::vector<std::vector<const BoundingBox*>> objs(
      static_cast<size_t>(frames));
  for (const BoundingBox& b : tracks) {
    if (b.frame < 0 || b.frame >= frames) continue;
    if (b.kind == BoxKind::Hand && b.track_id == hand_track) {
      out.hand[b.frame] = b;
      have_hand[b.frame] = 1;
    } else if (b.kind == BoxKind::Object) {
      objs[b.frame].push_back(&b);
    }
  }
  BoundingBox last_hand;
  bool seen_hand = false;
  for (int f = 0; f < frames; ++f) {
    if (have_hand[f]) {
      last_hand = out.hand[f];
      seen_hand = true;
    } else {
      // reuse the most recent hand; a clip that never shows one gets a
      // full-frame box from the caller's geometry via synthdata, so this
      // fallback only needs a sane default
      require(seen_hand, "select_regions: no hand box before frame " +
                             std::to_string(f));
      out.hand[f] = last_hand;
      out.hand[f].frame = f;
    }
    std::vector<std::pair<double, const BoundingBox*>> order;
    for (const BoundingBox* b : objs[f])
      order.emplace_back(center_distance(out.hand[f], *b), b);
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return a.second->track_id < b.second->track_id;
              });
    for (int s = 0; s < n && s < static_cast<int>(order.size()); ++s) {
      out.objects[f][s] = *order[s].second;
      out.mask[f][s] = 1;
      out.tracks[f][s] = order[s].second->track_id;
    }
  }
  return out;
}

/// Bounding box of the hand and its nearest object (hand alone if none).
inline BoundingBox union_box(const BoundingBox& hand,
                             const std::vector<BoundingBox>& objects) {
  if (objects.empty()) return hand;
  const BoundingBox* best = &objects[0];
  double best_d = center_distance(hand, objects[0]);
  for (size_t i = 1; i < objects.size(); ++i) {
    double d = center_distance(hand, objects[i]);
    if (d < best_d) {
      best_d = d;
      best = &objects[i];
    }
  }
  BoundingBox u = hand;
  u.x1 = std::min(hand.x1, best->x1);
  u.y1 = std::min(hand.y1, best->y1);
  u.x2 = std::max(hand.x2, best->x2);
  u.y2 = std::max(hand.y2, best->y2);
  return u;
}

/// Bilinear sampling pattern for one box over one frame's token cells.
/// Pixel coords map to token-grid coords by dividing by the tubelet's
/// (width, height); cell centers sit at integer lattice points after the
/// -0.5 shift. Degenerate boxes are widened to 1e-3 token units. Output row
/// (i*g + j) is the sample at bin row i, bin col j. `row_offset` shifts the
/// source rows so the plan can address one frame inside a stacked (T*S) x d
/// token matrix.
inline RowMixPlan roi_align_plan(int s_h, int s_w, double w_p, double h_p,
                                 const BoundingBox& box, int g,
                                 int row_offset = 0) {
  require(g >= 1, "roi_align: pooling grid must be >= 1");
  require(s_h >= 1 && s_w >= 1 && w_p > 0 && h_p > 0,
          "roi_align: bad token grid geometry");
  double tx1 = box.x1 / w_p, tx2 = box.x2 / w_p;
  double ty1 = box.y1 / h_p, ty2 = box.y2 / h_p;
  if (tx2 - tx1 < 1e-3) {
    double cx = 0.5 * (tx1 + tx2);
    tx1 = cx - 5e-4;
    tx2 = cx + 5e-4;
  }
  if (ty2 - ty1 < 1e-3) {
    double cy = 0.5 * (ty1 + ty2);
    ty1 = cy - 5e-4;
    ty2 = cy + 5e-4;
  }
  double bw = (tx2 - tx1) / g, bh = (ty2 - ty1) / g;
  RowMixPlan plan;
  plan.terms.resize(static_cast<size_t>(g) * g);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      double u = std::clamp(tx1 + (j + 0.5) * bw - 0.5, 0.0,
                            static_cast<double>(s_w - 1));
      double v = std::clamp(ty1 + (i + 0.5) * bh - 0.5, 0.0,
                            static_cast<double>(s_h - 1));
      int c0 = std::min(static_cast<int>(std::floor(u)), s_w - 1);
      int r0 = std::min(static_cast<int>(std::floor(v)), s_h - 1);
      int c1 = std::min(c0 + 1, s_w - 1);
      int r1 = std::min(r0 + 1, s_h - 1);
      double fx = u - c0, fy = v - r0;
      auto& terms = plan.terms[static_cast<size_t>(i) * g + j];
      auto add = [&](int r, int c, double w) {
        if (w > 0.0) terms.emplace_back(row_offset + r * s_w + c, w);
      };
      add(r0, c0, (1.0 - fy) * (1.0 - fx));
      add(r0, c1, (1.0 - fy) * fx);
      add(r1, c0, fy * (1.0 - fx));
      add(r1, c1, fy * fx);
      require(!terms.empty(), "roi_align: empty bilinear stencil");
    }
  return plan;
}

/// One bilinear sample per bin center over a single frame's S_h x S_w token
/// field (rows in row-major cell order).
template <typename Real>
Tensor<Real> roi_align(ComputationRecord<Real>& rec,
                       const Tensor<Real>& frame_tokens, int s_h, int s_w,
                       double w_p, double h_p, const BoundingBox& box, int g) {
  require(frame_tokens.is2d() && frame_tokens.rows() == s_h * s_w,
          "roi_align: token field must be (S_h*S_w) x d");
  return rec.row_mix(frame_tokens,
                     std::make_shared<const RowMixPlan>(
                         roi_align_plan(s_h, s_w, w_p, h_p, box, g)));
}

template <typename Real>
struct RoiHeadParams {
  Tensor<Real> w1, b1, w2, b2;  // d->d, GELU between
  int g = 2;
};

template <typename Real>
void check_roi_head(const RoiHeadParams<Real>& head, int d) {
  require(head.g >= 1, "roi head: pooling grid must be >= 1");
  require(head.w1.is2d() && head.w1.rows() == d && head.w1.cols() == d &&
              head.w2.is2d() && head.w2.rows() == d && head.w2.cols() == d,
          "roi head: weights must be d x d");
  require(head.b1.is2d() && head.b1.rows() == 1 && head.b1.cols() == d &&
              head.b2.is2d() && head.b2.rows() == 1 && head.b2.cols() == d,
          "roi head: biases must be 1 x d");
}

/// Per-cell MLP then elementwise max over the g*g cells -> 1 x d.
template <typename Real>
Tensor<Real> region_token(ComputationRecord<Real>& rec,
                          const Tensor<Real>& crop,
                          const RoiHeadParams<Real>& head) {
  check_roi_head(head, crop.cols());
  Tensor<Real> h =
      rec.gelu(rec.add_row_vec(rec.matmul(crop, head.w1), head.b1));
  Tensor<Real> h2 = rec.add_row_vec(rec.matmul(h, head.w2), head.b2);
  return rec.max_over_rows(h2);
}

/// Per temporal position: block-averaged hand box, up to N block-averaged
/// object boxes (slots ordered by distance to the block hand box), and the
/// hand-with-nearest-object union box.
struct BlockRegions {
  int t = 0, n = 0;
  std::vector<BoundingBox> hand;                  // [T]
  std::vector<std::vector<BoundingBox>> objects;  // [T][N]
  std::vector<std::vector<uint8_t>> mask;         // [T][N]
  std::vector<std::vector<int>> tracks;           // [T][N]
  std::vector<BoundingBox> unions;                // [T]
};

/// Collapse per-pixel-frame selections to temporal-block granularity: pixel
/// frame f maps to block floor(f / t_p); boxes are averaged per track within
/// the block; if a block sees more than N distinct tracks, the N nearest to
/// the block hand box win.
inline BlockRegions prepare_block_regions(const SelectedRegions& sel,
                                          int tubelet_t) {
  require(tubelet_t >= 1 && sel.frames % tubelet_t == 0,
          "block regions: frame count not divisible by tubelet depth");
  BlockRegions out;
  out.t = sel.frames / tubelet_t;
  out.n = sel.n;
  out.hand.resize(static_cast<size_t>(out.t));
  out.objects.assign(static_cast<size_t>(out.t),
                     std::vector<BoundingBox>(static_cast<size_t>(sel.n)));
  out.mask.assign(static_cast<size_t>(out.t),
                  std::vector<uint8_t>(static_cast<size_t>(sel.n), 0));
  out.tracks.assign(static_cast<size_t>(out.t),
                    std::vector<int>(static_cast<size_t>(sel.n), -1));
  out.unions.resize(static_cast<size_t>(out.t));
  auto average = [](const std::vector<const BoundingBox*>& boxes) {
    BoundingBox m = *boxes[0];
    m.x1 = m.y1 = m.x2 = m.y2 = 0.0;
    for (const BoundingBox* b : boxes) {
      m.x1 += b->x1;
      m.y1 += b->y1;
      m.x2 += b->x2;
      m.y2 += b->y2;
    }
    double inv = 1.0 / static_cast<double>(boxes.size());
    m.x1 *= inv;
    m.y1 *= inv;
    m.x2 *= inv;
    m.y2 *= inv;
    return m;
  };
  for (int t = 0; t < out.t; ++t) {
    std::vector<const BoundingBox*> hands;
    std::map<int, std::vector<const BoundingBox*>> per_track;
    for (int df = 0; df < tubelet_t; ++df) {
      int f = t * tubelet_t + df;
      hands.push_back(&sel.hand[f]);
      for (int s = 0; s < sel.n; ++s)
        if (sel.mask[f][s]) per_track[sel.tracks[f][s]].push_back(&sel.objects[f][s]);
    }
    out.hand[t] = average(hands);
    out.hand[t].frame = t;
    std::vector<std::pair<double, BoundingBox>> cands;
    for (const auto& [tid, boxes] : per_track) {
      BoundingBox avg = average(boxes);
      avg.frame = t;
      avg.track_id = tid;
      cands.emplace_back(center_distance(out.hand[t], avg), avg);
    }
    std::sort(cands.begin(), cands.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return a.second.track_id < b.second.track_id;
              });
    std::vector<BoundingBox> valid;
    for (int s = 0; s < sel.n && s < static_cast<int>(cands.size()); ++s) {
      out.objects[t][s] = cands[s].second;
      out.mask[t][s] = 1;
      out.tracks[t][s] = cands[s].second.track_id;
      valid.push_back(cands[s].second);
    }
    out.unions[t] = union_box(out.hand[t], valid);
  }
  return out;
}

/// Region tokens as record handles: one 1 x d token per hand / valid object
/// slot, pooled from the (positional-embedded) token field. Invalid slots
/// hold a shared all-zero null token.
template <typename Real>
struct RegionTokens {
  int t = 0, n = 0;
  std::vector<Tensor<Real>> hand;                  // [T], 1 x d
  std::vector<std::vector<Tensor<Real>>> objects;  // [T][N], 1 x d
  std::vector<std::vector<uint8_t>> mask;          // [T][N]
  std::vector<std::vector<int>> tracks;            // [T][N]
};

template <typename Real>
RegionTokens<Real> build_region_tokens(ComputationRecord<Real>& rec,
                                       const TokenGrid<Real>& grid,
                                       const BlockRegions& blocks,
                                       const RoiHeadParams<Real>& head,
                                       double w_p, double h_p) {
  require(blocks.t == grid.t, "region tokens: block count mismatch");
  int d = grid.tokens.cols();
  check_roi_head(head, d);
  RegionTokens<Real> out;
  out.t = blocks.t;
  out.n = blocks.n;
  out.mask = blocks.mask;
  out.tracks = blocks.tracks;
  Tensor<Real> null_token = rec.constant(Tensor<Real>(1, d));
  int s = grid.s();
  auto pool = [&](const BoundingBox& box, int t) {
    auto plan = std::make_shared<const RowMixPlan>(roi_align_plan(
        grid.s_h, grid.s_w, w_p, h_p, box, head.g, t * s));
    return region_token(rec, rec.row_mix(grid.tokens, plan), head);
  };
  for (int t = 0; t < blocks.t; ++t) {
    out.hand.push_back(pool(blocks.hand[t], t));
    out.objects.emplace_back();
    for (int i = 0; i < blocks.n; ++i)
      out.objects[t].push_back(blocks.mask[t][i] ? pool(blocks.objects[t][i], t)
                                                 : null_token);
  }
  return out;
}

}  // namespace inavit
