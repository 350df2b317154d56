#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "inavit/checkpoint.hpp"
#include "inavit/fdcheck.hpp"
#include "inavit/metrics.hpp"
#include "inavit/model.hpp"
#include "inavit/optimizer.hpp"
#include "inavit/synthdata.hpp"
#include "json.hpp"

namespace inavit {

inline InteractionVariant variant_from_name(const std::string& s) {
  if (s == "sca") return InteractionVariant::SCA;
  if (s == "sot") return InteractionVariant::SOT;
  if (s == "ub") return InteractionVariant::UB;
  fail("unknown interaction variant '" + s + "' (want sca, sot, or ub)");
}

inline void to_json(nlohmann::json& j, const TokenizerConfig& c) {
  j = {{"frames", c.frames},       {"height", c.height},
       {"width", c.width},         {"channels", c.channels},
       {"tubelet_t", c.tubelet_t}, {"tubelet_h", c.tubelet_h},
       {"tubelet_w", c.tubelet_w}, {"dim", c.dim}};
}

inline void from_json(const nlohmann::json& j, TokenizerConfig& c) {
  TokenizerConfig d;
  c.frames = j.value("frames", d.frames);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.channels = j.value("channels", d.channels);
  c.tubelet_t = j.value("tubelet_t", d.tubelet_t);
  c.tubelet_h = j.value("tubelet_h", d.tubelet_h);
  c.tubelet_w = j.value("tubelet_w", d.tubelet_w);
  c.dim = j.value("dim", d.dim);
}

inline void to_json(nlohmann::json& j, const InAViTConfig& c) {
  j = {{"tokenizer", c.tok},
       {"objects", c.objects},
       {"variant", variant_name(c.variant)},
       {"heads", c.heads},
       {"depth", c.depth},
       {"classes", c.classes},
       {"causal", c.causal},
       {"gap", c.gap},
       {"roi_grid", c.roi_grid},
       {"use_ci", c.use_ci},
       {"use_icv", c.use_icv},
       {"backbone_only", c.backbone_only},
       {"hand_only", c.hand_only},
       {"object_only", c.object_only}};
}

inline void from_json(const nlohmann::json& j, InAViTConfig& c) {
  InAViTConfig d;
  if (j.contains("tokenizer")) j.at("tokenizer").get_to(c.tok);
  c.objects = j.value("objects", d.objects);
  c.variant = variant_from_name(j.value("variant", std::string("sca")));
  c.heads = j.value("heads", d.heads);
  c.depth = j.value("depth", d.depth);
  c.classes = j.value("classes", d.classes);
  c.causal = j.value("causal", d.causal);
  c.gap = j.value("gap", d.gap);
  c.roi_grid = j.value("roi_grid", d.roi_grid);
  c.use_ci = j.value("use_ci", d.use_ci);
  c.use_icv = j.value("use_icv", d.use_icv);
  c.backbone_only = j.value("backbone_only", d.backbone_only);
  c.hand_only = j.value("hand_only", d.hand_only);
  c.object_only = j.value("object_only", d.object_only);
}

struct RunConfig {
  InAViTConfig model;
  double lr = 1e-4;
  double weight_decay = 0.0;
  int steps = 2000;
  int batch = 8;
  int eval_every = 500;  // 0 disables periodic eval
  std::string dataset;
  std::string out_dir = "run_out";
  uint64_t seed = 0;

  void validate() const {
    model.validate();
    require(lr > 0, "run: lr must be positive");
    require(weight_decay >= 0, "run: weight decay must be nonnegative");
    require(steps >= 0, "run: steps must be nonnegative");
    require(batch >= 1, "run: batch must be positive");
    require(eval_every >= 0, "run: eval_every must be nonnegative");
    require(!dataset.empty(), "run: dataset directory required");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = {{"model", r.model},     {"lr", r.lr},
       {"weight_decay", r.weight_decay}, {"steps", r.steps},
       {"batch", r.batch},     {"eval_every", r.eval_every},
       {"dataset", r.dataset}, {"out_dir", r.out_dir},
       {"seed", r.seed}};
}

inline void from_json(const nlohmann::json& j, RunConfig& r) {
  RunConfig d;
  if (j.contains("model")) j.at("model").get_to(r.model);
  r.lr = j.value("lr", d.lr);
  r.weight_decay = j.value("weight_decay", d.weight_decay);
  r.steps = j.value("steps", d.steps);
  r.batch = j.value("batch", d.batch);
  r.eval_every = j.value("eval_every", d.eval_every);
  r.dataset = j.value("dataset", d.dataset);
  r.out_dir = j.value("out_dir", d.out_dir);
  r.seed = j.value("seed", d.seed);
}

/// Stable hash of a JSON value (nlohmann objects serialize key-sorted).
inline uint64_t json_hash(const nlohmann::json& j) { return fnv1a64(j.dump()); }

inline uint64_t model_config_hash(const InAViTConfig& cfg) {
  return json_hash(nlohmann::json(cfg));
}

inline uint64_t dataset_hash(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  require(in.good(), "cannot open manifest.json in " + dir);
  std::string all(std::istreambuf_iterator<char>(in), {});
  return fnv1a64(all);
}

/// Episodes converted once to model inputs (cuboid matrices + block
/// regions); reused across every training step and evaluation.
struct PreparedData {
  std::vector<EpisodeInput<double>> train, eval;
  uint64_t dataset_hash = 0;
};

inline void check_dataset_matches(const SynthConfig& data,
                                  const InAViTConfig& model) {
  require(data.height == model.tok.height && data.width == model.tok.width,
          "dataset/model mismatch: frame size");
  require(data.frames == model.tok.frames,
          "dataset/model mismatch: observed frame count");
  require(data.types == model.classes,
          "dataset/model mismatch: class count");
}

inline PreparedData prepare_data(const LoadedDataset& ds,
                                 const InAViTConfig& model,
                                 const std::string& dir) {
  check_dataset_matches(ds.cfg, model);
  PreparedData out;
  out.dataset_hash = dataset_hash(dir);
  for (const LoadedEpisode& ep : ds.episodes) {
    auto& side = ep.train ? out.train : out.eval;
    side.push_back(prepare_episode(ep.clip, ep.boxes, model, ep.label));
  }
  return out;
}

template <typename Real>
MetricsReport evaluate_params(const InAViTConfig& cfg,
                              const ParamValues<Real>& params,
                              const std::vector<EpisodeInput<Real>>& episodes) {
  require(!episodes.empty(), "evaluate: no episodes in split");
  auto start = std::chrono::steady_clock::now();
  int k = std::min(5, cfg.classes);
  std::vector<std::vector<int>> topk;
  std::vector<int> labels;
  std::map<int, std::pair<int, int>> per_class;
  int hits = 0;
  double loss = 0;
  for (const auto& ep : episodes) {
    ComputationRecord<Real> rec;
    auto bound = bind_params(rec, params, cfg, false);
    auto logits = forward(rec, ep, bound, cfg);
    loss += rec.cross_entropy(logits, ep.label).at(0, 0);
    auto top = predict_topk(logits, k);
    if (top[0] == ep.label) hits++;
    topk.push_back(top);
    labels.push_back(ep.label);
    auto& [h, t] = per_class[ep.label];
    t++;
    for (int p : top)
      if (p == ep.label) {
        h++;
        break;
      }
  }
  MetricsReport m;
  m.samples = static_cast<int>(episodes.size());
  m.top1 = static_cast<double>(hits) / m.samples;
  m.mean_top5 = mean_top5_recall(topk, labels);
  m.loss = loss / m.samples;
  for (const auto& [c, ht] : per_class)
    m.per_class_recall[c] =
        static_cast<double>(ht.first) / static_cast<double>(ht.second);
  m.config_hash = model_config_hash(cfg);
  m.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  m.validate();
  return m;
}

/// Checks the stored model-config hash before evaluating.
inline MetricsReport evaluate_checkpoint(
    const Checkpoint& ck, const InAViTConfig& cfg,
    const std::vector<EpisodeInput<double>>& episodes) {
  require(ck.config.contains("model"),
          "checkpoint carries no model configuration");
  uint64_t stored = json_hash(ck.config.at("model"));
  require(stored == model_config_hash(cfg),
          "config hash mismatch: checkpoint " + std::to_string(stored) +
              " vs requested " + std::to_string(model_config_hash(cfg)));
  check_params(ck.params, cfg);
  return evaluate_params(cfg, ck.params, episodes);
}

struct TrainResult {
  ParamValues<double> params;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::string checkpoint_path;
  std::string log_path;
  double wall_clock_s = 0;
};

/// Deterministic single-writer loop: epoch-shuffled batches, AdamW updates,
/// one JSONL line per step, periodic eval, final checkpoint.
inline TrainResult train(const RunConfig& run, const LoadedDataset& ds,
                         const PreparedData& data) {
  run.validate();
  require(!data.train.empty(), "train: dataset has no training episodes");
  auto started = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  fs::create_directories(run.out_dir);

  TrainResult result;
  result.log_path = (fs::path(run.out_dir) / "train_log.jsonl").string();
  std::ofstream log(result.log_path);
  require(log.good(), "cannot open training log: " + result.log_path);

  ParamValues<double> params = init_params<double>(run.model, run.seed);
  OptimizerState<double> opt;
  opt.lr = run.lr;
  opt.weight_decay = run.weight_decay;

  Rng batch_rng(mix_seed(run.seed, "batches"));
  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first draw
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<size_t>(
                      batch_rng.uniform_int(0, static_cast<int>(i) - 1))]);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int s = 0; s < run.steps; ++s) {
    ComputationRecord<double> rec;
    Tensor<double> loss;
    try {
      auto bound = bind_params(rec, params, run.model, true);
      Tensor<double> total;
      for (int b = 0; b < run.batch; ++b) {
        const auto& ep = data.train[static_cast<size_t>(next_index())];
        auto one =
            rec.cross_entropy(forward(rec, ep, bound, run.model), ep.label);
        total = b == 0 ? one : rec.add(total, one);
      }
      loss = rec.scale(total, 1.0 / run.batch);
    } catch (const std::exception& e) {
      if (std::string(e.what()).find("non-finite") == std::string::npos)
        throw;  // a real configuration error, not divergence
      fail("training diverged at step " + std::to_string(s) + ": " + e.what());
    }
    double value = loss.at(0, 0);
    if (!std::isfinite(value))
      fail("training diverged at step " + std::to_string(s) +
           ": loss is not finite");
    auto grads = rec.gradients(loss);
    adamw_step(params, grads, opt);
    log << nlohmann::json{{"step", s}, {"loss", value}, {"lr", opt.lr}}.dump()
        << "\n";
    result.final_loss = value;
    if (run.eval_every > 0 && (s + 1) % run.eval_every == 0 &&
        !data.eval.empty()) {
      MetricsReport m = evaluate_params(run.model, params, data.eval);
      log << nlohmann::json{{"step", s},
                            {"eval_top1", m.top1},
                            {"eval_mean_top5_recall", m.mean_top5}}
                 .dump()
          << "\n";
    }
  }
  require(log.good(), "failed writing training log");

  result.checkpoint_path = (fs::path(run.out_dir) / "checkpoint.bin").string();
  nlohmann::json config;
  config["run"] = run;
  config["model"] = run.model;
  config["dataset_hash"] = data.dataset_hash;
  save_checkpoint(result.checkpoint_path, config, params);
  result.params = std::move(params);
  result.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return result;
}

inline TrainResult train(const RunConfig& run) {
  LoadedDataset ds = load_dataset(run.dataset);
  PreparedData data = prepare_data(ds, run.model, run.dataset);
  return train(run, ds, data);
}

// ---------------------------------------------------------------------------
// Gradient-check suite: reverse-mode vs central differences per block.

struct GradcheckRow {
  std::string block;
  double max_rel_err = 0;
  double seconds = 0;
};

inline const std::vector<std::string>& gradcheck_blocks() {
  static const std::vector<std::string> names{
      "numerics", "roi_head", "sca",      "sot",       "ub",
      "tca",      "icv",      "backbone", "classifier"};
  return names;
}

namespace detail {

inline Tensor<double> gc_rand(Rng& rng, int r, int c) {
  Tensor<double> t(r, c);
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// Deterministic full-rank reduction to a scalar so FD probes see every
/// output coordinate with a distinct weight.
inline Tensor<double> gc_pin(ComputationRecord<double>& rec,
                             const Tensor<double>& x) {
  Tensor<double> w(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j)
      w.at(i, j) = 0.25 + 0.071 * ((i * 31 + j * 17) % 13);
  return rec.sum_all(rec.mul(x, rec.constant(w)));
}

using GcGraph =
    std::function<Tensor<double>(ComputationRecord<double>&, ParamMap&)>;

inline double gc_run(const ParamMap& theta, const GcGraph& build,
                     const std::function<void(ParamMap&)>& corrupt) {
  ComputationRecord<double> rec;
  ParamMap handles;
  for (const auto& [name, value] : theta)
    handles.emplace(name, rec.param(value, name));
  auto grads = rec.gradients(build(rec, handles));
  if (corrupt) corrupt(grads);
  auto objective = [&](const ParamMap& p) {
    ComputationRecord<double> r2;
    ParamMap h2;
    for (const auto& [name, value] : p) h2.emplace(name, r2.param(value, name));
    return build(r2, h2).at(0, 0);
  };
  auto fd = finite_difference_gradient(objective, theta, 1e-5);
  return compare_gradients(grads, fd).max_rel_err;
}

inline void gc_attn_params(Rng& rng, int d, const std::string& prefix,
                           ParamMap& theta) {
  for (const char* s : {"_wq", "_wk", "_wv", "_wo"})
    theta.emplace(prefix + s, gc_rand(rng, d, d));
}

inline AttentionParams<double> gc_attn_of(ParamMap& h,
                                          const std::string& prefix,
                                          int heads) {
  return {h.at(prefix + "_wq"), h.at(prefix + "_wk"), h.at(prefix + "_wv"),
          h.at(prefix + "_wo"), heads};
}

/// Region tokens for T frames and N object slots out of one stacked
/// parameter, with one masked hole so null-token paths stay exercised.
inline RegionTokens<double> gc_regions(ComputationRecord<double>& rec,
                                       const Tensor<double>& stacked, int t,
                                       int n) {
  RegionTokens<double> r;
  r.t = t;
  r.n = n;
  for (int f = 0; f < t; ++f) {
    r.hand.push_back(rec.gather_rows(stacked, {f * (n + 1)}));
    r.objects.emplace_back();
    r.mask.emplace_back();
    r.tracks.emplace_back();
    for (int i = 0; i < n; ++i) {
      bool valid = !(f == t - 1 && i == n - 1);
      r.objects[f].push_back(
          rec.gather_rows(stacked, {f * (n + 1) + 1 + i}));
      r.mask[f].push_back(valid ? 1 : 0);
      r.tracks[f].push_back(valid ? i : -1);
    }
  }
  return r;
}

inline Tensor<double> gc_stack_interaction(ComputationRecord<double>& rec,
                                           const InteractionTokens<double>& it) {
  std::vector<Tensor<double>> rows;
  for (int t = 0; t < it.t; ++t)
    for (int k = 0; k < it.k; ++k)
      if (it.mask[t][k]) rows.push_back(it.tokens[t][k]);
  return stack_rows(rec, rows);
}

}  // namespace detail

/// Runs one named block's gradient comparison at tiny dims (d=8, T=3, S=4,
/// N=2). The optional hook mutates the analytic gradients before comparison
/// (negative-control fixture for tests).
inline GradcheckRow run_gradcheck_block(
    const std::string& name,
    const std::function<void(ParamMap&)>& corrupt = {}, uint64_t seed = 2024) {
  using detail::gc_attn_of;
  using detail::gc_pin;
  using detail::gc_rand;
  constexpr int d = 8, t = 3, s = 4, n = 2, heads = 2;
  auto started = std::chrono::steady_clock::now();
  Rng rng(mix_seed(seed, name));
  ParamMap theta;
  detail::GcGraph build;

  if (name == "numerics") {
    theta.emplace("x", gc_rand(rng, s, d));
    theta.emplace("w", gc_rand(rng, d, d));
    theta.emplace("scale", gc_rand(rng, 1, d));
    theta.emplace("shift", gc_rand(rng, 1, d));
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      auto y = rec.gelu(rec.matmul(h.at("x"), h.at("w")));
      y = rec.layer_norm(y, h.at("scale"), h.at("shift"), 1e-5);
      return gc_pin(rec, rec.row_softmax(y));
    };
  } else if (name == "roi_head") {
    theta.emplace("tokens", gc_rand(rng, s, d));
    theta.emplace("w1", gc_rand(rng, d, d));
    theta.emplace("b1", gc_rand(rng, 1, d));
    theta.emplace("w2", gc_rand(rng, d, d));
    theta.emplace("b2", gc_rand(rng, 1, d));
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      RoiHeadParams<double> head{h.at("w1"), h.at("b1"), h.at("w2"),
                                 h.at("b2"), 2};
      BoundingBox b;
      b.x1 = 2.1;
      b.y1 = 1.3;
      b.x2 = 13.0;
      b.y2 = 11.0;
      auto plan = std::make_shared<const RowMixPlan>(
          roi_align_plan(2, 2, 8.0, 8.0, b, head.g));
      return gc_pin(rec,
                    region_token(rec, rec.row_mix(h.at("tokens"), plan), head));
    };
  } else if (name == "sca" || name == "sot") {
    theta.emplace("regions", gc_rand(rng, t * (n + 1), d));
    detail::gc_attn_params(rng, d, "hand", theta);
    detail::gc_attn_params(rng, d, "obj", theta);
    bool spatial = name == "sca";
    build = [spatial](ComputationRecord<double>& rec, ParamMap& h) {
      auto regions = detail::gc_regions(rec, h.at("regions"), t, n);
      auto out = spatial ? sca(rec, regions, gc_attn_of(h, "hand", heads),
                               gc_attn_of(h, "obj", heads))
                         : sot(rec, regions, gc_attn_of(h, "hand", heads),
                               gc_attn_of(h, "obj", heads));
      return gc_pin(rec, detail::gc_stack_interaction(rec, out));
    };
  } else if (name == "ub") {
    theta.emplace("tokens", gc_rand(rng, t * s, d));
    theta.emplace("w1", gc_rand(rng, d, d));
    theta.emplace("b1", gc_rand(rng, 1, d));
    theta.emplace("w2", gc_rand(rng, d, d));
    theta.emplace("b2", gc_rand(rng, 1, d));
    detail::gc_attn_params(rng, d, "u", theta);
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      TokenGrid<double> grid;
      grid.tokens = h.at("tokens");
      grid.t = t;
      grid.s_h = 2;
      grid.s_w = 2;
      RoiHeadParams<double> head{h.at("w1"), h.at("b1"), h.at("w2"),
                                 h.at("b2"), 2};
      std::vector<BoundingBox> unions(t);
      for (int f = 0; f < t; ++f) {
        unions[f].x1 = 1.0 + f;
        unions[f].y1 = 2.0;
        unions[f].x2 = 12.0;
        unions[f].y2 = 13.0 - f;
      }
      auto out = ub(rec, grid, unions, head, gc_attn_of(h, "u", heads), 8.0,
                    8.0);
      return gc_pin(rec, detail::gc_stack_interaction(rec, out));
    };
  } else if (name == "tca") {
    theta.emplace("inter", gc_rand(rng, t * (n + 1), d));
    theta.emplace("grid", gc_rand(rng, t * s, d));
    for (const char* p : {"wq", "wk", "wv", "hq", "hk", "hv", "wo"})
      theta.emplace(p, gc_rand(rng, d, d));
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      TokenGrid<double> grid;
      grid.tokens = h.at("grid");
      grid.t = t;
      grid.s_h = 2;
      grid.s_w = 2;
      InteractionTokens<double> it;
      it.t = t;
      it.k = n + 1;
      for (int f = 0; f < t; ++f) {
        it.tokens.emplace_back();
        it.mask.emplace_back();
        for (int k = 0; k < n + 1; ++k) {
          it.tokens[f].push_back(
              rec.gather_rows(h.at("inter"), {f * (n + 1) + k}));
          it.mask[f].push_back(k == 2 && f == 1 ? 0 : 1);
        }
      }
      TcaParams<double> p{h.at("wq"), h.at("wk"), h.at("wv"), h.at("hq"),
                          h.at("hk"), h.at("hv"), h.at("wo"), heads, false};
      auto out = tca(rec, it, grid, p);
      return gc_pin(rec, detail::gc_stack_interaction(rec, out));
    };
  } else if (name == "icv") {
    theta.emplace("inter", gc_rand(rng, t * (n + 1), d));
    theta.emplace("grid", gc_rand(rng, t * s, d));
    detail::gc_attn_params(rng, d, "f", theta);
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      TokenGrid<double> grid;
      grid.tokens = h.at("grid");
      grid.t = t;
      grid.s_h = 2;
      grid.s_w = 2;
      InteractionTokens<double> it;
      it.t = t;
      it.k = n + 1;
      for (int f = 0; f < t; ++f) {
        it.tokens.emplace_back();
        it.mask.emplace_back();
        for (int k = 0; k < n + 1; ++k) {
          it.tokens[f].push_back(
              rec.gather_rows(h.at("inter"), {f * (n + 1) + k}));
          it.mask[f].push_back(k == 0 && f == 2 ? 0 : 1);
        }
      }
      auto out = icv(rec, it, grid, gc_attn_of(h, "f", heads));
      return gc_pin(rec, out.tokens);
    };
  } else if (name == "backbone") {
    theta.emplace("grid", gc_rand(rng, t * s, d));
    theta.emplace("cls", gc_rand(rng, 1, d));
    theta.emplace("n1s", gc_rand(rng, 1, d));
    theta.emplace("n1b", gc_rand(rng, 1, d));
    for (const char* p : {"wq", "wk", "wv", "hq", "hk", "hv", "wo"})
      theta.emplace(p, gc_rand(rng, d, d));
    theta.emplace("n2s", gc_rand(rng, 1, d));
    theta.emplace("n2b", gc_rand(rng, 1, d));
    theta.emplace("m1", gc_rand(rng, d, 4 * d));
    theta.emplace("mb1", gc_rand(rng, 1, 4 * d));
    theta.emplace("m2", gc_rand(rng, 4 * d, d));
    theta.emplace("mb2", gc_rand(rng, 1, d));
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      TokenGrid<double> grid;
      grid.tokens = h.at("grid");
      grid.t = t;
      grid.s_h = 2;
      grid.s_w = 2;
      grid.cls = h.at("cls");
      grid.has_cls = true;
      BlockParams<double> b{
          h.at("n1s"), h.at("n1b"),
          TcaParams<double>{h.at("wq"), h.at("wk"), h.at("wv"), h.at("hq"),
                            h.at("hk"), h.at("hv"), h.at("wo"), heads, false},
          h.at("n2s"), h.at("n2b"), h.at("m1"), h.at("mb1"), h.at("m2"),
          h.at("mb2")};
      auto out = backbone_block(rec, grid, b);
      return gc_pin(rec, rec.concat_rows(out.cls, out.tokens));
    };
  } else if (name == "classifier") {
    theta.emplace("cls", gc_rand(rng, 1, d));
    theta.emplace("scale", gc_rand(rng, 1, d));
    theta.emplace("shift", gc_rand(rng, 1, d));
    theta.emplace("w", gc_rand(rng, d, 5));
    theta.emplace("b", gc_rand(rng, 1, 5));
    build = [](ComputationRecord<double>& rec, ParamMap& h) {
      auto normed =
          rec.layer_norm(h.at("cls"), h.at("scale"), h.at("shift"), 1e-5);
      auto logits = rec.add_row_vec(rec.matmul(normed, h.at("w")), h.at("b"));
      return rec.cross_entropy(logits, 3);
    };
  } else {
    fail("unknown gradcheck block '" + name + "'");
  }

  GradcheckRow row;
  row.block = name;
  row.max_rel_err = detail::gc_run(theta, build, corrupt);
  row.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return row;
}

/// scope "full" runs every block; otherwise the named block alone.
inline std::vector<GradcheckRow> gradcheck_suite(const std::string& scope,
                                                 uint64_t seed = 2024) {
  std::vector<GradcheckRow> rows;
  if (scope == "full") {
    for (const std::string& b : gradcheck_blocks())
      rows.push_back(run_gradcheck_block(b, {}, seed));
  } else {
    rows.push_back(run_gradcheck_block(scope, {}, seed));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation runner.

struct AblationRow {
  std::string name;
  InAViTConfig model;
};

/// The default table: the spatial variant with each fusion stage toggled,
/// the temporal and union variants bare and full, the no-region baseline,
/// and the hand-only / object-only filters.
inline std::vector<AblationRow> default_ablation(InAViTConfig base) {
  auto with = [&](const char* name, InteractionVariant v, bool ci, bool icv) {
    InAViTConfig m = base;
    m.variant = v;
    m.use_ci = ci;
    m.use_icv = icv;
    m.backbone_only = false;
    m.hand_only = m.object_only = false;
    return AblationRow{name, m};
  };
  std::vector<AblationRow> rows;
  rows.push_back(with("sca", InteractionVariant::SCA, false, false));
  rows.push_back(with("sca+ci", InteractionVariant::SCA, true, false));
  rows.push_back(with("sca+icv", InteractionVariant::SCA, false, true));
  rows.push_back(with("sca+ci+icv", InteractionVariant::SCA, true, true));
  rows.push_back(with("sot", InteractionVariant::SOT, false, false));
  rows.push_back(with("sot+ci+icv", InteractionVariant::SOT, true, true));
  rows.push_back(with("ub", InteractionVariant::UB, false, false));
  rows.push_back(with("ub+ci+icv", InteractionVariant::UB, true, true));
  InAViTConfig bb = base;
  bb.backbone_only = true;
  bb.hand_only = bb.object_only = false;
  rows.push_back({"backbone_only", bb});
  AblationRow hand = with("sca+ci+icv_hand_only", InteractionVariant::SCA,
                          true, true);
  hand.model.hand_only = true;
  rows.push_back(hand);
  AblationRow obj = with("sca+ci+icv_object_only", InteractionVariant::SCA,
                         true, true);
  obj.model.object_only = true;
  rows.push_back(obj);
  return rows;
}

inline const char* kAblationCsvHeader =
    "name,variant,ci,icv,objects,seed,steps,dataset_hash,top1,"
    "mean_top5_recall,final_loss,wall_clock_s";

struct AblationCell {
  std::string name;
  uint64_t seed = 0;
  MetricsReport eval;
  double final_loss = 0;
  double wall_clock_s = 0;
};

struct AblationResult {
  std::string csv;
  std::vector<AblationCell> cells;
};

/// Trains and evaluates every row for every seed on one shared dataset;
/// returns the CSV (also written to out_dir/ablation.csv).
inline AblationResult ablate(const std::vector<AblationRow>& rows,
                             const RunConfig& base,
                             const std::vector<uint64_t>& seeds) {
  require(!rows.empty() && !seeds.empty(), "ablate: nothing to run");
  LoadedDataset ds = load_dataset(base.dataset);
  AblationResult out;
  out.csv = std::string(kAblationCsvHeader) + "\n";
  char line[512];
  for (const AblationRow& row : rows) {
    PreparedData data = prepare_data(ds, row.model, base.dataset);
    for (uint64_t seed : seeds) {
      RunConfig run = base;
      run.model = row.model;
      run.seed = seed;
      run.eval_every = 0;
      run.out_dir = (std::filesystem::path(base.out_dir) /
                     ("ablate_" + row.name + "_s" + std::to_string(seed)))
                        .string();
      TrainResult tr = train(run, ds, data);
      MetricsReport m = evaluate_params(run.model, tr.params, data.eval);
      std::snprintf(line, sizeof(line),
                    "%s,%s,%d,%d,%d,%llu,%d,%016llx,%.6f,%.6f,%.6f,%.3f\n",
                    row.name.c_str(), variant_name(row.model.variant),
                    row.model.backbone_only ? 0 : (row.model.use_ci ? 1 : 0),
                    row.model.backbone_only ? 0 : (row.model.use_icv ? 1 : 0),
                    row.model.objects,
                    static_cast<unsigned long long>(seed), run.steps,
                    static_cast<unsigned long long>(data.dataset_hash),
                    m.top1, m.mean_top5, tr.final_loss, tr.wall_clock_s);
      out.csv += line;
      out.cells.push_back({row.name, seed, m, tr.final_loss, tr.wall_clock_s});
    }
  }
  std::filesystem::create_directories(base.out_dir);
  std::ofstream f(std::filesystem::path(base.out_dir) / "ablation.csv");
  require(f.good(), "cannot write ablation.csv");
  f << out.csv;
  require(f.good(), "failed writing ablation.csv");
  return out;
}

// ---------------------------------------------------------------------------
// Attention export.

namespace detail {

inline nlohmann::json stage1_to_json(const TrajectoryAttend<double>& tr) {
  nlohmann::json groups = nlohmann::json::array();
  for (size_t g = 0; g < tr.stage1_weights.size(); ++g) {
    nlohmann::json refs = nlohmann::json::array();
    for (size_t j = 0; j < tr.stage1_weights[g].size(); ++j) {
      nlohmann::json heads = nlohmann::json::array();
      for (const Tensor<double>& w : tr.stage1_weights[g][j]) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < w.rows(); ++r) {
          nlohmann::json row = nlohmann::json::array();
          for (int c = 0; c < w.cols(); ++c) row.push_back(w.at(r, c));
          rows.push_back(std::move(row));
        }
        heads.push_back(std::move(rows));
      }
      refs.push_back({{"t_prime", tr.ref_start[g] + static_cast<int>(j)},
                      {"heads", std::move(heads)}});
    }
    groups.push_back({{"t", tr.homes[g]}, {"refs", std::move(refs)}});
  }
  return groups;
}

}  // namespace detail

/// Stage-1 trajectory weight maps for every backbone block (and the context
/// infusion stage when enabled) plus the fusion attention rows. Weights are
/// (t, t', s)-indexed: group home frame, reference frame, spatial position.
inline nlohmann::json export_attention(const InAViTConfig& cfg,
                                       const ParamValues<double>& params,
                                       const EpisodeInput<double>& ep) {
  ComputationRecord<double> rec;
  auto bound = bind_params(rec, params, cfg, false);
  ForwardTrace<double> trace;
  auto logits = forward(rec, ep, bound, cfg, &trace);

  nlohmann::json out;
  out["spatial_positions"] = cfg.tok.s();
  out["frames"] = cfg.tok.t();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& blk : trace.blocks)
    blocks.push_back({{"groups", detail::stage1_to_json(blk)}});
  out["blocks"] = std::move(blocks);
  if (!cfg.backbone_only && cfg.use_ci)
    out["context_infusion"] = {
        {"groups", detail::stage1_to_json(trace.context_infusion)}};
  if (!cfg.backbone_only && cfg.use_icv) {
    nlohmann::json heads = nlohmann::json::array();
    for (const Tensor<double>& w : trace.fusion_weights) {
      nlohmann::json rows = nlohmann::json::array();
      for (int r = 0; r < w.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < w.cols(); ++c) row.push_back(w.at(r, c));
        rows.push_back(std::move(row));
      }
      heads.push_back(std::move(rows));
    }
    out["fusion"] = {
        {"extra_rows",
         trace.fusion_weights.empty()
             ? 0
             : trace.fusion_weights[0].rows() - cfg.tok.t() * cfg.tok.s()},
        {"heads", std::move(heads)}};
  }
  nlohmann::json lg = nlohmann::json::array();
  for (int c = 0; c < logits.cols(); ++c) lg.push_back(logits.at(0, c));
  out["logits"] = std::move(lg);
  return out;
}

}  // namespace inavit
