#include <array>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "inavit/interaction.hpp"
#include "inavit/record.hpp"
#include "inavit/rng.hpp"
#include "oracle_util.hpp"
#include "test_util.hpp"

using inavit::AttentionParams;
using inavit::BlockRegions;
using inavit::BoundingBox;
using inavit::ComputationRecord;
using inavit::InteractionParams;
using inavit::InteractionTokens;
using inavit::InteractionVariant;
using inavit::RegionTokens;
using inavit::RoiHeadParams;
using inavit::Tensor;
using inavit::TokenGrid;
using testutil::rand_tensor;

namespace {

using Mats = std::array<Tensor<double>, 4>;  // wq, wk, wv, wo raw values

Mats rand_mats(inavit::Rng& rng, int d, double scale = 0.6) {
  return {rand_tensor(rng, d, d, -scale, scale),
          rand_tensor(rng, d, d, -scale, scale),
          rand_tensor(rng, d, d, -scale, scale),
          rand_tensor(rng, d, d, -scale, scale)};
}

AttentionParams<double> attn_const(ComputationRecord<double>& rec,
                                   const Mats& m, int heads) {
  return {rec.constant(m[0]), rec.constant(m[1]), rec.constant(m[2]),
          rec.constant(m[3]), heads};
}

oracle::MhaParams attn_oracle(const Mats& m, int heads) {
  return {oracle::to_mat(m[0]), oracle::to_mat(m[1]), oracle::to_mat(m[2]),
          oracle::to_mat(m[3]), heads};
}

// Raw region-token values; converted to record constants per test record.
struct RegionFixture {
  int t = 0, n = 0, d = 0;
  std::vector<Tensor<double>> hand;
  std::vector<std::vector<Tensor<double>>> objects;
  std::vector<std::vector<uint8_t>> mask;
  std::vector<std::vector<int>> tracks;
};

RegionFixture rand_regions(inavit::Rng& rng, int t, int n, int d,
                           std::vector<std::vector<uint8_t>> mask,
                           std::vector<std::vector<int>> tracks) {
  RegionFixture f;
  f.t = t;
  f.n = n;
  f.d = d;
  f.mask = std::move(mask);
  f.tracks = std::move(tracks);
  for (int ti = 0; ti < t; ++ti) {
    f.hand.push_back(rand_tensor(rng, 1, d));
    f.objects.emplace_back();
    for (int i = 0; i < n; ++i)
      f.objects[ti].push_back(f.mask[ti][i] ? rand_tensor(rng, 1, d)
                                            : Tensor<double>(1, d));
  }
  return f;
}

RegionTokens<double> to_tokens(ComputationRecord<double>& rec,
                               const RegionFixture& f) {
  RegionTokens<double> r;
  r.t = f.t;
  r.n = f.n;
  r.mask = f.mask;
  r.tracks = f.tracks;
  Tensor<double> null_token = rec.constant(Tensor<double>(1, f.d));
  for (int t = 0; t < f.t; ++t) {
    r.hand.push_back(rec.constant(f.hand[t]));
    r.objects.emplace_back();
    for (int i = 0; i < f.n; ++i)
      r.objects[t].push_back(f.mask[t][i] ? rec.constant(f.objects[t][i])
                                          : null_token);
  }
  return r;
}

oracle::Mat hand_mat(const RegionFixture& f) {
  oracle::Mat m;
  for (const auto& h : f.hand) m.push_back(oracle::to_mat(h)[0]);
  return m;
}

std::vector<oracle::Mat> object_mats(const RegionFixture& f) {
  std::vector<oracle::Mat> out;
  for (int t = 0; t < f.t; ++t) {
    oracle::Mat m = oracle::zeros(f.n, f.d);
    for (int i = 0; i < f.n; ++i)
      if (f.mask[t][i]) m[i] = oracle::to_mat(f.objects[t][i])[0];
    out.push_back(m);
  }
  return out;
}

void expect_token_near(const Tensor<double>& tok, const std::vector<double>& want,
                       double tol, const std::string& what) {
  ASSERT_EQ(tok.rows(), 1) << what;
  ASSERT_EQ(tok.cols(), static_cast<int>(want.size())) << what;
  for (size_t j = 0; j < want.size(); ++j)
    EXPECT_NEAR(tok.at(0, static_cast<int>(j)), want[j], tol)
        << what << " col " << j;
}

}  // namespace

// With a single valid object the hand's attention weight is 1 regardless of
// the logit, so the refined hand is exactly obj * Wv * Wo; the object's only
// key is the hand, giving hand * Wv * Wo under the object projections.
TEST(Sca, SingleObjectReducesToValueProjection) {
  inavit::Rng rng(11);
  int d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 1, 1, d, {{1}}, {{0}});

  ComputationRecord<double> rec;
  auto regions = to_tokens(rec, f);
  auto out = inavit::sca(rec, regions, attn_const(rec, hm, 1),
                         attn_const(rec, om, 1));
  ASSERT_EQ(out.t, 1);
  ASSERT_EQ(out.k, 2);

  auto vo_h = oracle::matmul(oracle::matmul(oracle::to_mat(f.objects[0][0]),
                                            oracle::to_mat(hm[2])),
                             oracle::to_mat(hm[3]));
  auto vo_o = oracle::matmul(
      oracle::matmul(oracle::to_mat(f.hand[0]), oracle::to_mat(om[2])),
      oracle::to_mat(om[3]));
  expect_token_near(out.tokens[0][0], vo_h[0], 1e-12, "hand");
  expect_token_near(out.tokens[0][1], vo_o[0], 1e-12, "object");
}

TEST(Sca, MatchesLoopOracle) {
  inavit::Rng rng(12);
  int t = 3, n = 3, d = 4, heads = 2;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, t, n, d,
                        {{1, 1, 1}, {1, 0, 1}, {0, 1, 0}},
                        {{0, 1, 2}, {0, -1, 2}, {-1, 1, -1}});

  ComputationRecord<double> rec;
  auto out = inavit::sca(rec, to_tokens(rec, f), attn_const(rec, hm, heads),
                         attn_const(rec, om, heads));
  auto want = oracle::sca(hand_mat(f), object_mats(f), f.mask,
                          attn_oracle(hm, heads), attn_oracle(om, heads));
  for (int ti = 0; ti < t; ++ti) {
    expect_token_near(out.tokens[ti][0], want.hand[ti], 1e-9,
                      "hand t=" + std::to_string(ti));
    for (int i = 0; i < n; ++i) {
      EXPECT_EQ(out.mask[ti][i + 1], f.mask[ti][i]);
      expect_token_near(out.tokens[ti][i + 1], want.objects[ti][i], 1e-9,
                        "obj t=" + std::to_string(ti) + " i=" +
                            std::to_string(i));
    }
  }
}

// Reordering the object slots of a frame must not change any refined value;
// each object's output follows its slot.
TEST(Sca, SlotPermutationInvariance) {
  inavit::Rng rng(13);
  int d = 4, heads = 2;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 1, 3, d, {{1, 1, 1}}, {{0, 1, 2}});

  RegionFixture g = f;  // slots rotated left by one
  for (int i = 0; i < 3; ++i) {
    g.objects[0][i] = f.objects[0][(i + 1) % 3];
    g.mask[0][i] = f.mask[0][(i + 1) % 3];
    g.tracks[0][i] = f.tracks[0][(i + 1) % 3];
  }

  ComputationRecord<double> ra, rb;
  auto oa = inavit::sca(ra, to_tokens(ra, f), attn_const(ra, hm, heads),
                        attn_const(ra, om, heads));
  auto ob = inavit::sca(rb, to_tokens(rb, g), attn_const(rb, hm, heads),
                        attn_const(rb, om, heads));
  for (int j = 0; j < d; ++j)
    EXPECT_NEAR(oa.tokens[0][0].at(0, j), ob.tokens[0][0].at(0, j), 1e-12)
        << "hand col " << j;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < d; ++j)
      EXPECT_NEAR(oa.tokens[0][(i + 1) % 3 + 1].at(0, j),
                  ob.tokens[0][i + 1].at(0, j), 1e-12)
          << "obj " << i << " col " << j;
}

TEST(Sca, EmptyFramePassesHandThrough) {
  inavit::Rng rng(14);
  int d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 2, 2, d, {{1, 1}, {0, 0}}, {{0, 1}, {-1, -1}});

  ComputationRecord<double> rec;
  auto out = inavit::sca(rec, to_tokens(rec, f), attn_const(rec, hm, 2),
                         attn_const(rec, om, 2));
  for (int j = 0; j < d; ++j) {
    EXPECT_EQ(out.tokens[1][0].at(0, j), f.hand[1].at(0, j));
    EXPECT_EQ(out.tokens[1][1].at(0, j), 0.0);
    EXPECT_EQ(out.tokens[1][2].at(0, j), 0.0);
  }
  EXPECT_EQ(out.mask[1][0], 1);
  EXPECT_EQ(out.mask[1][1], 0);
  EXPECT_EQ(out.mask[1][2], 0);
}

TEST(Sca, StrictModeRejectsEmptyFrame) {
  inavit::Rng rng(15);
  int d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 2, 1, d, {{1}, {0}}, {{3}, {-1}});
  ComputationRecord<double> rec;
  auto regions = to_tokens(rec, f);
  try {
    inavit::sca(rec, regions, attn_const(rec, hm, 1), attn_const(rec, om, 1),
                /*strict=*/true);
    FAIL() << "expected error";
  } catch (const inavit::Error& e) {
    EXPECT_NE(std::string(e.what()).find("no valid objects in frame 1"),
              std::string::npos)
        << e.what();
  }
}

// Frames are independent in the spatial stage: changing frame 2's objects
// leaves frames 0 and 1 bit-identical.
TEST(Sca, FrameLocality) {
  inavit::Rng rng(16);
  int t = 3, n = 2, d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, t, n, d, {{1, 1}, {1, 1}, {1, 1}},
                        {{0, 1}, {0, 1}, {0, 1}});
  RegionFixture g = f;
  inavit::Rng rng2(99);
  g.objects[2][0] = rand_tensor(rng2, 1, d);
  g.objects[2][1] = rand_tensor(rng2, 1, d);

  ComputationRecord<double> ra, rb;
  auto oa = inavit::sca(ra, to_tokens(ra, f), attn_const(ra, hm, 2),
                        attn_const(ra, om, 2));
  auto ob = inavit::sca(rb, to_tokens(rb, g), attn_const(rb, hm, 2),
                        attn_const(rb, om, 2));
  for (int ti = 0; ti < 2; ++ti)
    for (int k = 0; k < n + 1; ++k)
      for (int j = 0; j < d; ++j)
        EXPECT_EQ(oa.tokens[ti][k].at(0, j), ob.tokens[ti][k].at(0, j))
            << "t=" << ti << " k=" << k << " j=" << j;
  bool frame2_same = true;
  for (int j = 0; j < d; ++j)
    if (oa.tokens[2][1].at(0, j) != ob.tokens[2][1].at(0, j))
      frame2_same = false;
  EXPECT_FALSE(frame2_same);
}

// A single temporal position self-attends over itself alone, so both hand
// and object reduce to value+output projections.
TEST(Sot, SingleFrameReducesToValueProjection) {
  inavit::Rng rng(21);
  int d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 1, 1, d, {{1}}, {{4}});

  ComputationRecord<double> rec;
  auto out = inavit::sot(rec, to_tokens(rec, f), attn_const(rec, hm, 1),
                         attn_const(rec, om, 1));
  auto vo_h = oracle::matmul(
      oracle::matmul(oracle::to_mat(f.hand[0]), oracle::to_mat(hm[2])),
      oracle::to_mat(hm[3]));
  auto vo_o = oracle::matmul(oracle::matmul(oracle::to_mat(f.objects[0][0]),
                                            oracle::to_mat(om[2])),
                             oracle::to_mat(om[3]));
  expect_token_near(out.tokens[0][0], vo_h[0], 1e-12, "hand");
  expect_token_near(out.tokens[0][1], vo_o[0], 1e-12, "object");
}

// A hand that never moves attends uniformly over identical keys, so every
// temporal position refines to the same value projection.
TEST(Sot, ConstantHandIsTemporallyUniform) {
  inavit::Rng rng(22);
  int d = 4, t = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, t, 1, d,
                        {{1}, {1}, {1}, {1}}, {{0}, {0}, {0}, {0}});
  Tensor<double> h = rand_tensor(rng, 1, d);
  for (int ti = 0; ti < t; ++ti) f.hand[ti] = h;

  ComputationRecord<double> rec;
  auto out = inavit::sot(rec, to_tokens(rec, f), attn_const(rec, hm, 2),
                         attn_const(rec, om, 2));
  auto vo = oracle::matmul(
      oracle::matmul(oracle::to_mat(h), oracle::to_mat(hm[2])),
      oracle::to_mat(hm[3]));
  for (int ti = 0; ti < t; ++ti)
    expect_token_near(out.tokens[ti][0], vo[0], 1e-12,
                      "hand t=" + std::to_string(ti));
}

TEST(Sot, MatchesLoopOracle) {
  inavit::Rng rng(23);
  int t = 3, n = 2, d = 4, heads = 2;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  // Track 5 appears in frames 0 and 2 (slot changes); track 7 in 1 and 2.
  auto f = rand_regions(rng, t, n, d, {{1, 0}, {0, 1}, {1, 1}},
                        {{5, -1}, {-1, 7}, {7, 5}});

  ComputationRecord<double> rec;
  auto out = inavit::sot(rec, to_tokens(rec, f), attn_const(rec, hm, heads),
                         attn_const(rec, om, heads));
  auto want = oracle::sot(hand_mat(f), object_mats(f), f.mask, f.tracks,
                          attn_oracle(hm, heads), attn_oracle(om, heads));
  for (int ti = 0; ti < t; ++ti) {
    expect_token_near(out.tokens[ti][0], want.hand[ti], 1e-9,
                      "hand t=" + std::to_string(ti));
    for (int i = 0; i < n; ++i) {
      EXPECT_EQ(out.mask[ti][i + 1], f.mask[ti][i]);
      expect_token_near(out.tokens[ti][i + 1], want.objects[ti][i], 1e-9,
                        "obj t=" + std::to_string(ti) + " i=" +
                            std::to_string(i));
    }
  }
}

// Tracks never exchange information: perturbing one track's tokens leaves
// the other track's refined values bit-identical.
TEST(Sot, TracksAreIsolated) {
  inavit::Rng rng(24);
  int t = 3, n = 2, d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, t, n, d, {{1, 1}, {1, 1}, {1, 1}},
                        {{5, 7}, {5, 7}, {5, 7}});
  RegionFixture g = f;
  inavit::Rng rng2(55);
  for (int ti = 0; ti < t; ++ti) g.objects[ti][1] = rand_tensor(rng2, 1, d);

  ComputationRecord<double> ra, rb;
  auto oa = inavit::sot(ra, to_tokens(ra, f), attn_const(ra, hm, 2),
                        attn_const(ra, om, 2));
  auto ob = inavit::sot(rb, to_tokens(rb, g), attn_const(rb, hm, 2),
                        attn_const(rb, om, 2));
  for (int ti = 0; ti < t; ++ti)
    for (int j = 0; j < d; ++j) {
      EXPECT_EQ(oa.tokens[ti][0].at(0, j), ob.tokens[ti][0].at(0, j));
      EXPECT_EQ(oa.tokens[ti][1].at(0, j), ob.tokens[ti][1].at(0, j));
    }
  bool other_same = true;
  for (int j = 0; j < d; ++j)
    if (oa.tokens[0][2].at(0, j) != ob.tokens[0][2].at(0, j))
      other_same = false;
  EXPECT_FALSE(other_same);
}

namespace {

struct UbFixture {
  int t, s_h, s_w, d;
  double w_p, h_p;
  Tensor<double> grid_tokens;  // (t * s_h * s_w) x d raw values
  std::vector<BoundingBox> unions;
  Tensor<double> w1, b1, w2, b2;
  Mats attn;
};

UbFixture rand_ub(inavit::Rng& rng, int t) {
  UbFixture f{t, 2, 2, 4, 8.0, 8.0, {}, {}, {}, {}, {}, {}, {}};
  f.grid_tokens = rand_tensor(rng, t * 4, 4);
  for (int ti = 0; ti < t; ++ti) {
    BoundingBox b;
    b.frame = ti;
    b.x1 = rng.uniform(0.0, 6.0);
    b.y1 = rng.uniform(0.0, 6.0);
    b.x2 = b.x1 + rng.uniform(2.0, 9.0);
    b.y2 = b.y1 + rng.uniform(2.0, 9.0);
    f.unions.push_back(b);
  }
  f.w1 = rand_tensor(rng, 4, 4);
  f.b1 = rand_tensor(rng, 1, 4);
  f.w2 = rand_tensor(rng, 4, 4);
  f.b2 = rand_tensor(rng, 1, 4);
  f.attn = rand_mats(rng, 4);
  return f;
}

std::vector<double> vec_of(const Tensor<double>& row) {
  std::vector<double> v(static_cast<size_t>(row.cols()));
  for (int j = 0; j < row.cols(); ++j) v[static_cast<size_t>(j)] = row.at(0, j);
  return v;
}

oracle::Mat ub_oracle(const UbFixture& f, int heads) {
  auto all = oracle::to_mat(f.grid_tokens);
  oracle::Mat pooled;
  for (int t = 0; t < f.t; ++t) {
    oracle::Mat frame(all.begin() + t * f.s_h * f.s_w,
                      all.begin() + (t + 1) * f.s_h * f.s_w);
    pooled.push_back(oracle::pooled_region(
        frame, f.s_h, f.s_w, f.w_p, f.h_p, f.unions[t].x1, f.unions[t].y1,
        f.unions[t].x2, f.unions[t].y2, 2, oracle::to_mat(f.w1), vec_of(f.b1),
        oracle::to_mat(f.w2), vec_of(f.b2)));
  }
  auto p = attn_oracle(f.attn, heads);
  return oracle::mha(pooled, pooled, p.wq, p.wk, p.wv, p.wo, p.heads);
}

InteractionTokens<double> run_ub(ComputationRecord<double>& rec,
                                 const UbFixture& f, int heads) {
  TokenGrid<double> grid;
  grid.tokens = rec.constant(f.grid_tokens);
  grid.t = f.t;
  grid.s_h = f.s_h;
  grid.s_w = f.s_w;
  RoiHeadParams<double> head{rec.constant(f.w1), rec.constant(f.b1),
                             rec.constant(f.w2), rec.constant(f.b2), 2};
  return inavit::ub(rec, grid, f.unions, head, attn_const(rec, f.attn, heads),
                    f.w_p, f.h_p);
}

}  // namespace

TEST(Ub, SingleFrameMatchesPooledProjection) {
  inavit::Rng rng(31);
  auto f = rand_ub(rng, 1);
  ComputationRecord<double> rec;
  auto out = run_ub(rec, f, 1);
  ASSERT_EQ(out.t, 1);
  ASSERT_EQ(out.k, 1);
  auto want = ub_oracle(f, 1);
  expect_token_near(out.tokens[0][0], want[0], 1e-9, "pooled");
}

TEST(Ub, MatchesLoopOracle) {
  inavit::Rng rng(32);
  auto f = rand_ub(rng, 3);
  ComputationRecord<double> rec;
  auto out = run_ub(rec, f, 2);
  auto want = ub_oracle(f, 2);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(out.mask[t][0], 1);
    expect_token_near(out.tokens[t][0], want[t], 1e-9,
                      "t=" + std::to_string(t));
  }
}

TEST(Ub, RejectsWrongBoxCount) {
  inavit::Rng rng(33);
  auto f = rand_ub(rng, 2);
  f.unions.pop_back();
  ComputationRecord<double> rec;
  EXPECT_THROW(run_ub(rec, f, 1), inavit::Error);
}

TEST(Dispatch, VariantNamesAndSlotCounts) {
  EXPECT_STREQ(inavit::variant_name(InteractionVariant::SCA), "sca");
  EXPECT_STREQ(inavit::variant_name(InteractionVariant::SOT), "sot");
  EXPECT_STREQ(inavit::variant_name(InteractionVariant::UB), "ub");

  inavit::Rng rng(41);
  int d = 4;
  auto f = rand_regions(rng, 2, 2, d, {{1, 1}, {1, 0}}, {{0, 1}, {0, -1}});
  auto ubf = rand_ub(rng, 2);

  InteractionParams<double> params;
  BlockRegions blocks;
  blocks.t = 2;
  blocks.n = 2;
  blocks.unions = ubf.unions;

  for (auto variant : {InteractionVariant::SCA, InteractionVariant::SOT,
                       InteractionVariant::UB}) {
    ComputationRecord<double> rec;
    auto regions = to_tokens(rec, f);
    TokenGrid<double> grid;
    grid.tokens = rec.constant(ubf.grid_tokens);
    grid.t = ubf.t;
    grid.s_h = ubf.s_h;
    grid.s_w = ubf.s_w;
    RoiHeadParams<double> head{rec.constant(ubf.w1), rec.constant(ubf.b1),
                               rec.constant(ubf.w2), rec.constant(ubf.b2), 2};
    Mats m = rand_mats(rng, d);
    params.sca_hand = attn_const(rec, m, 2);
    params.sca_obj = attn_const(rec, rand_mats(rng, d), 2);
    params.sot_hand = attn_const(rec, rand_mats(rng, d), 2);
    params.sot_obj = attn_const(rec, rand_mats(rng, d), 2);
    params.ub_attn = attn_const(rec, ubf.attn, 2);
    auto out = inavit::model_interactions(rec, variant, regions, grid, blocks,
                                          head, params, ubf.w_p, ubf.h_p);
    EXPECT_EQ(out.t, 2);
    EXPECT_EQ(out.k, variant == InteractionVariant::UB ? 1 : 3);
    EXPECT_EQ(out.mask[0][0], 1);
  }
}

// All object slots masked: the temporal stage still refines the hand, and
// the object slots stay null and masked.
TEST(Dispatch, TemporalStageWithNoObjects) {
  inavit::Rng rng(42);
  int d = 4;
  Mats hm = rand_mats(rng, d), om = rand_mats(rng, d);
  auto f = rand_regions(rng, 2, 2, d, {{0, 0}, {0, 0}},
                        {{-1, -1}, {-1, -1}});
  ComputationRecord<double> rec;
  auto out = inavit::sot(rec, to_tokens(rec, f), attn_const(rec, hm, 2),
                         attn_const(rec, om, 2));
  auto want = oracle::mha(hand_mat(f), hand_mat(f), oracle::to_mat(hm[0]),
                          oracle::to_mat(hm[1]), oracle::to_mat(hm[2]),
                          oracle::to_mat(hm[3]), 2);
  for (int t = 0; t < 2; ++t) {
    expect_token_near(out.tokens[t][0], want[t], 1e-12,
                      "hand t=" + std::to_string(t));
    for (int i = 1; i <= 2; ++i) {
      EXPECT_EQ(out.mask[t][i], 0);
      for (int j = 0; j < d; ++j) EXPECT_EQ(out.tokens[t][i].at(0, j), 0.0);
    }
  }
}

namespace {

Tensor<double> stack_interaction(ComputationRecord<double>& rec,
                                 const InteractionTokens<double>& it) {
  std::vector<Tensor<double>> rows;
  for (const auto& frame : it.tokens)
    for (const auto& tok : frame) rows.push_back(tok);
  return inavit::stack_rows(rec, rows);
}

RegionTokens<double> regions_from_handles(ComputationRecord<double>& rec,
                                          testutil::Handles& h, int t, int n,
                                          int d,
                                          std::vector<std::vector<uint8_t>> mask,
                                          std::vector<std::vector<int>> tracks) {
  RegionTokens<double> r;
  r.t = t;
  r.n = n;
  r.mask = std::move(mask);
  r.tracks = std::move(tracks);
  Tensor<double> null_token = rec.constant(Tensor<double>(1, d));
  for (int ti = 0; ti < t; ++ti) {
    r.hand.push_back(h.at("h" + std::to_string(ti)));
    r.objects.emplace_back();
    for (int i = 0; i < n; ++i)
      r.objects[ti].push_back(
          r.mask[ti][i]
              ? h.at("o" + std::to_string(ti) + "_" + std::to_string(i))
              : null_token);
  }
  return r;
}

AttentionParams<double> attn_from_handles(testutil::Handles& h,
                                          const std::string& prefix,
                                          int heads) {
  return {h.at(prefix + "q"), h.at(prefix + "k"), h.at(prefix + "v"),
          h.at(prefix + "o"), heads};
}

void add_attn_params(inavit::Rng& rng, inavit::ParamMap& theta,
                     const std::string& prefix, int d) {
  for (const char* s : {"q", "k", "v", "o"})
    theta[prefix + s] = rand_tensor(rng, d, d, -0.5, 0.5);
}

}  // namespace

TEST(InteractionGrad, SpatialStage) {
  inavit::Rng rng(51);
  int t = 2, n = 2, d = 4;
  std::vector<std::vector<uint8_t>> mask{{1, 1}, {1, 0}};
  std::vector<std::vector<int>> tracks{{0, 1}, {0, -1}};
  inavit::ParamMap theta;
  for (int ti = 0; ti < t; ++ti) {
    theta["h" + std::to_string(ti)] = rand_tensor(rng, 1, d);
    for (int i = 0; i < n; ++i)
      if (mask[ti][i])
        theta["o" + std::to_string(ti) + "_" + std::to_string(i)] =
            rand_tensor(rng, 1, d);
  }
  add_attn_params(rng, theta, "hand_w", d);
  add_attn_params(rng, theta, "obj_w", d);

  testutil::check_grads(theta, [&](ComputationRecord<double>& rec,
                                   testutil::Handles& h) {
    auto regions = regions_from_handles(rec, h, t, n, d, mask, tracks);
    auto out = inavit::sca(rec, regions, attn_from_handles(h, "hand_w", 2),
                           attn_from_handles(h, "obj_w", 2));
    return testutil::weighted_sum(rec, stack_interaction(rec, out));
  });
}

TEST(InteractionGrad, TemporalStage) {
  inavit::Rng rng(52);
  int t = 3, n = 2, d = 4;
  std::vector<std::vector<uint8_t>> mask{{1, 1}, {1, 0}, {1, 1}};
  std::vector<std::vector<int>> tracks{{5, 7}, {5, -1}, {7, 5}};
  inavit::ParamMap theta;
  for (int ti = 0; ti < t; ++ti) {
    theta["h" + std::to_string(ti)] = rand_tensor(rng, 1, d);
    for (int i = 0; i < n; ++i)
      if (mask[ti][i])
        theta["o" + std::to_string(ti) + "_" + std::to_string(i)] =
            rand_tensor(rng, 1, d);
  }
  add_attn_params(rng, theta, "hand_w", d);
  add_attn_params(rng, theta, "obj_w", d);

  testutil::check_grads(theta, [&](ComputationRecord<double>& rec,
                                   testutil::Handles& h) {
    auto regions = regions_from_handles(rec, h, t, n, d, mask, tracks);
    auto out = inavit::sot(rec, regions, attn_from_handles(h, "hand_w", 2),
                           attn_from_handles(h, "obj_w", 2));
    return testutil::weighted_sum(rec, stack_interaction(rec, out));
  });
}

TEST(InteractionGrad, PooledUnionStage) {
  inavit::Rng rng(53);
  auto f = rand_ub(rng, 3);
  inavit::ParamMap theta;
  theta["grid"] = f.grid_tokens;
  theta["w1"] = f.w1;
  theta["b1"] = f.b1;
  theta["w2"] = f.w2;
  theta["b2"] = f.b2;
  theta["wq"] = f.attn[0];
  theta["wk"] = f.attn[1];
  theta["wv"] = f.attn[2];
  theta["wo"] = f.attn[3];

  testutil::check_grads(theta, [&](ComputationRecord<double>& rec,
                                   testutil::Handles& h) {
    TokenGrid<double> grid;
    grid.tokens = h.at("grid");
    grid.t = f.t;
    grid.s_h = f.s_h;
    grid.s_w = f.s_w;
    RoiHeadParams<double> head{h.at("w1"), h.at("b1"), h.at("w2"), h.at("b2"),
                               2};
    AttentionParams<double> p{h.at("wq"), h.at("wk"), h.at("wv"), h.at("wo"),
                              2};
    auto out = inavit::ub(rec, grid, f.unions, head, p, f.w_p, f.h_p);
    return testutil::weighted_sum(rec, stack_interaction(rec, out));
  });
}
