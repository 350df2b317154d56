#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "inavit/boxes_io.hpp"
#include "inavit/rng.hpp"
#include "inavit/roi.hpp"
#include "inavit/tensor.hpp"
#include "json.hpp"

namespace inavit {

struct SynthConfig {
  int height = 32, width = 32;
  int frames = 8;        // observed frames
  int gap = 4;           // anticipation gap, frames
  int types = 8;         // object type count (= class count)
  int distractors = 3;   // objects besides the target
  int glyph = 6;         // glyph side, px
  double speed = 1.25;   // hand px/frame
  double jitter = 0.5;   // box corner noise sigma, px
  double noise = 0.05;   // background noise sigma
  uint64_t seed = 0;     // dataset base seed

  void validate() const {
    require(height > 0 && width > 0 && frames > 0, "synth: empty geometry");
    require(types >= 2, "synth: need at least 2 object types");
    require(gap >= 1, "synth: gap must be at least 1 frame");
    require(distractors >= 0, "synth: distractor count must be nonnegative");
    require(glyph >= 1, "synth: glyph must be at least 1 px");
    require(glyph <= height && glyph <= width,
            "synth: infeasible config, glyph larger than frame");
    require(speed > 0, "synth: speed must be positive");
    require(jitter >= 0 && noise >= 0, "synth: sigmas must be nonnegative");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"height", c.height},       {"width", c.width},
       {"frames", c.frames},       {"gap", c.gap},
       {"types", c.types},         {"distractors", c.distractors},
       {"glyph", c.glyph},         {"speed", c.speed},
       {"jitter", c.jitter},       {"noise", c.noise},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("frames").get_to(c.frames);
  j.at("gap").get_to(c.gap);
  j.at("types").get_to(c.types);
  j.at("distractors").get_to(c.distractors);
  j.at("glyph").get_to(c.glyph);
  j.at("speed").get_to(c.speed);
  j.at("jitter").get_to(c.jitter);
  j.at("noise").get_to(c.noise);
  c.seed = j.value("seed", uint64_t{0});
}

/// One moving square: center position, per-frame velocity, color type
/// (-1 = hand).
struct Glyph {
  double x = 0, y = 0, vx = 0, vy = 0;
  int type = -1;
};

/// Scene at one instant: the hand plus every object, in track order.
struct SimState {
  Glyph hand;
  std::vector<Glyph> objects;
};

namespace detail {

inline bool glyphs_touch(const Glyph& a, const Glyph& b, double g) {
  return std::abs(a.x - b.x) < g && std::abs(a.y - b.y) < g;
}

/// Advance with reflection off the walls so the full glyph stays in frame.
inline void bounce(Glyph& o, const SynthConfig& cfg) {
  double m = 0.5 * cfg.glyph;
  o.x += o.vx;
  o.y += o.vy;
  if (o.x < m) { o.x = 2 * m - o.x; o.vx = -o.vx; }
  if (o.x > cfg.width - m) { o.x = 2 * (cfg.width - m) - o.x; o.vx = -o.vx; }
  if (o.y < m) { o.y = 2 * m - o.y; o.vy = -o.vy; }
  if (o.y > cfg.height - m) { o.y = 2 * (cfg.height - m) - o.y; o.vy = -o.vy; }
}

/// One deterministic step: the hand flies straight, objects drift and
/// bounce. The generator guarantees the hand path stays in frame during the
/// observed window; afterwards it may exit, which simply ends all contact.
inline void step(SimState& s, const SynthConfig& cfg) {
  s.hand.x += s.hand.vx;
  s.hand.y += s.hand.vy;
  for (Glyph& o : s.objects) bounce(o, cfg);
}

struct Rgb {
  double r, g, b;
};

/// Fixed palette: evenly spaced hues, full saturation. The hand is white.
inline Rgb palette(int type, int types) {
  double h = 6.0 * static_cast<double>(type) / static_cast<double>(types);
  int i = static_cast<int>(h) % 6;
  double f = h - std::floor(h);
  double v = 0.95, s = 0.85;
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace detail

/// Forward-simulates from the end of the observed window and returns the
/// type of the first object whose box intersects the hand box. Contact must
/// happen within 4x the anticipation gap.
inline int label_of(const SynthConfig& cfg, SimState s) {
  cfg.validate();
  require(!s.objects.empty(), "label_of: no objects to contact");
  for (int k = 0; k <= 4 * cfg.gap; ++k) {
    for (const Glyph& o : s.objects)
      if (detail::glyphs_touch(s.hand, o, cfg.glyph)) return o.type;
    detail::step(s, cfg);
  }
  fail("degenerate episode: no contact within " + std::to_string(4 * cfg.gap) +
       " frames of the observed window");
}

/// One anticipation episode: the observed clip, ground-truth boxes with
/// track ids, the per-track object types, and the label the hand will touch
/// after the gap. The gap frames themselves are never rendered.
struct Episode {
  Tensor<double> clip;             // frames x H x W x 3, float32-quantized
  std::vector<BoundingBox> boxes;  // hand + objects, frames ascending
  std::vector<int> types;          // object track id -> type
  SimState end_state;              // scene at the last observed frame
  int label = -1;
  int gap = 0;
  uint64_t seed = 0;
};

inline Episode generate_episode(const SynthConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed ^ seed, "episode"));
  double g = cfg.glyph, m = 0.5 * g;
  double lo_x = m, hi_x = cfg.width - m, lo_y = m, hi_y = cfg.height - m;
  require(lo_x <= hi_x && lo_y <= hi_y,
          "synth: infeasible config, glyph larger than frame");
  int k = cfg.distractors + 1;

  std::vector<int> types(static_cast<size_t>(k));
  for (int& t : types) t = rng.uniform_int(0, cfg.types - 1);
  int target = rng.uniform_int(0, k - 1);

  // Place drifting objects and aim the hand at the target's future position
  // so that the first contact of the whole episode is the hand touching the
  // target exactly `gap` frames after the observed window. Reject and resample
  // until the simulated horizon confirms that: no contact during the window,
  // distractors kept clear of the hand's path (1.5 glyph margin), target
  // untouched until the contact frame.
  int horizon = cfg.frames - 1 + cfg.gap;
  SimState sim;
  bool placed = false;
  for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
    SimState cand;
    cand.objects.assign(static_cast<size_t>(k), Glyph{});
    for (int o = 0; o < k; ++o) {
      Glyph& ob = cand.objects[static_cast<size_t>(o)];
      ob.type = types[static_cast<size_t>(o)];
      ob.x = rng.uniform(lo_x, hi_x);
      ob.y = rng.uniform(lo_y, hi_y);
      double sp = cfg.speed * rng.uniform(0.2, 0.6);
      double oang = rng.uniform(0.0, 6.283185307179586);
      ob.vx = sp * std::cos(oang);
      ob.vy = sp * std::sin(oang);
    }
    Glyph tg = cand.objects[static_cast<size_t>(target)];
    for (int f = 0; f < horizon; ++f) detail::bounce(tg, cfg);

    double ang = rng.uniform(0.0, 6.283185307179586);
    double c = std::cos(ang), sn = std::sin(ang);
    // Chebyshev contact threshold g along direction (c, sn): first touch at
    // `gap` steps past the window needs hand-to-target distance
    // speed*(gap-1/2) + g/max(|c|,|sn|) at the last observed frame.
    double dist = cfg.speed * (cfg.gap - 0.5) +
                  g / std::max(std::abs(c), std::abs(sn));
    Glyph hand;
    hand.vx = cfg.speed * c;
    hand.vy = cfg.speed * sn;
    double end_x = tg.x - dist * c, end_y = tg.y - dist * sn;
    hand.x = end_x - hand.vx * (cfg.frames - 1);
    hand.y = end_y - hand.vy * (cfg.frames - 1);
    if (hand.x < lo_x || hand.x > hi_x || hand.y < lo_y || hand.y > hi_y)
      continue;
    if (end_x < lo_x || end_x > hi_x || end_y < lo_y || end_y > hi_y)
      continue;
    cand.hand = hand;

    SimState probe = cand;
    bool ok = true;
    for (int f = 0; f <= horizon && ok; ++f) {
      if (f > 0) detail::step(probe, cfg);
      for (int o = 0; o < k && ok; ++o) {
        const Glyph& ob = probe.objects[static_cast<size_t>(o)];
        bool touch = detail::glyphs_touch(probe.hand, ob, g);
        if (o == target) {
          ok = touch == (f == horizon);
        } else {
          ok = !detail::glyphs_touch(probe.hand, ob, 1.5 * g);
        }
      }
    }
    if (!ok) continue;
    sim = cand;
    placed = true;
  }
  require(placed, "degenerate episode: no feasible geometry for seed " +
                      std::to_string(seed));

  Episode ep;
  ep.gap = cfg.gap;
  ep.seed = seed;
  ep.types = types;
  ep.clip = Tensor<double>(std::vector<int>{cfg.frames, cfg.height, cfg.width, 3});

  auto paint = [&](int f, const Glyph& o, detail::Rgb c) {
    double x1 = o.x - m, y1 = o.y - m, x2 = o.x + m, y2 = o.y + m;
    int px1 = std::max(0, static_cast<int>(std::ceil(x1 - 0.5)));
    int px2 = std::min(cfg.width - 1, static_cast<int>(std::floor(x2 - 0.5)));
    int py1 = std::max(0, static_cast<int>(std::ceil(y1 - 0.5)));
    int py2 = std::min(cfg.height - 1, static_cast<int>(std::floor(y2 - 0.5)));
    for (int y = py1; y <= py2; ++y)
      for (int x = px1; x <= px2; ++x) {
        size_t base =
            ((static_cast<size_t>(f) * cfg.height + y) * cfg.width + x) * 3;
        ep.clip.data[base] = c.r;
        ep.clip.data[base + 1] = c.g;
        ep.clip.data[base + 2] = c.b;
      }
  };
  auto true_box = [&](int f, const Glyph& o, BoxKind kind, int track) {
    BoundingBox b;
    b.frame = f;
    b.x1 = o.x - m;
    b.y1 = o.y - m;
    b.x2 = o.x + m;
    b.y2 = o.y + m;
    b.kind = kind;
    b.track_id = track;
    return b;
  };

  for (auto& v : ep.clip.data)
    v = std::clamp(0.1 + cfg.noise * rng.gaussian(), 0.0, 1.0);
  SimState cur = sim;
  for (int f = 0; f < cfg.frames; ++f) {
    if (f > 0) detail::step(cur, cfg);
    for (int o = 0; o < k; ++o) {
      const Glyph& gl = cur.objects[static_cast<size_t>(o)];
      require(!detail::glyphs_touch(cur.hand, gl, g),
              "degenerate episode: contact inside the observed window");
      paint(f, gl, detail::palette(gl.type, cfg.types));
      ep.boxes.push_back(true_box(f, gl, BoxKind::Object, o));
    }
    paint(f, cur.hand, {1.0, 1.0, 1.0});
    ep.boxes.push_back(true_box(f, cur.hand, BoxKind::Hand, k));
  }

  for (BoundingBox& b : ep.boxes) {
    if (cfg.jitter > 0) {
      b.x1 += cfg.jitter * rng.gaussian();
      b.y1 += cfg.jitter * rng.gaussian();
      b.x2 += cfg.jitter * rng.gaussian();
      b.y2 += cfg.jitter * rng.gaussian();
    }
    b.x1 = std::clamp(b.x1, 0.0, cfg.width - 0.5);
    b.y1 = std::clamp(b.y1, 0.0, cfg.height - 0.5);
    b.x2 = std::clamp(b.x2, b.x1 + 0.5, static_cast<double>(cfg.width));
    b.y2 = std::clamp(b.y2, b.y1 + 0.5, static_cast<double>(cfg.height));
  }

  // storage is 32-bit; quantize now so memory and disk agree bit for bit
  for (auto& v : ep.clip.data) v = static_cast<double>(static_cast<float>(v));
  ep.end_state = cur;
  ep.label = label_of(cfg, cur);
  return ep;
}

/// Collects n episodes walking seeds upward from `seed`, skipping seeds
/// whose episode degenerates (no timely contact or unplaceable geometry).
inline std::vector<Episode> generate_dataset(const SynthConfig& cfg, int n,
                                             uint64_t seed) {
  require(n >= 1, "generate_dataset: need at least one episode");
  std::vector<Episode> out;
  uint64_t last = seed + 1000 * static_cast<uint64_t>(n) + 1000;
  for (uint64_t s = seed; static_cast<int>(out.size()) < n; ++s) {
    require(s < last, "generate_dataset: too many degenerate seeds in a row");
    try {
      out.push_back(generate_episode(cfg, s));
    } catch (const Error& e) {
      if (std::string(e.what()).find("degenerate episode") == std::string::npos)
        throw;
    }
  }
  return out;
}

inline bool is_train_seed(uint64_t seed) { return seed % 2 == 0; }

namespace detail {

inline std::string episode_stem(uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "episode_%06llu",
                static_cast<unsigned long long>(seed));
  return buf;
}

}  // namespace detail

/// Directory layout: manifest.json plus one raw little-endian float32
/// tensor and one box JSONL file per episode.
inline void write_dataset(const std::string& dir, const SynthConfig& cfg,
                          const std::vector<Episode>& episodes) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = cfg;
  auto& list = manifest["episodes"] = nlohmann::json::array();
  for (const Episode& ep : episodes) {
    std::string stem = detail::episode_stem(ep.seed);
    std::string clip_name = stem + ".f32", boxes_name = stem + ".boxes.jsonl";
    std::ofstream out(fs::path(dir) / clip_name, std::ios::binary);
    require(out.good(), "cannot write clip file " + clip_name);
    std::vector<float> payload(ep.clip.data.begin(), ep.clip.data.end());
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    require(out.good(), "failed writing clip file " + clip_name);
    write_boxes_jsonl((fs::path(dir) / boxes_name).string(), ep.boxes);
    list.push_back({{"seed", ep.seed},
                    {"label", ep.label},
                    {"types", ep.types},
                    {"split", is_train_seed(ep.seed) ? "train" : "eval"},
                    {"clip", clip_name},
                    {"boxes", boxes_name}});
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  require(mf.good(), "cannot write manifest.json");
  mf << manifest.dump(2) << "\n";
  require(mf.good(), "failed writing manifest.json");
}

struct LoadedEpisode {
  Tensor<double> clip;
  std::vector<BoundingBox> boxes;
  int label = -1;
  uint64_t seed = 0;
  bool train = false;
};

struct LoadedDataset {
  SynthConfig cfg;
  std::vector<LoadedEpisode> episodes;
};

inline LoadedDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  require(mf.good(), "cannot open manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad manifest.json: ") + e.what());
  }
  require(manifest.value("format_version", 0) == 1,
          "unsupported dataset format version");
  LoadedDataset ds;
  ds.cfg = manifest.at("config").get<SynthConfig>();
  size_t count = static_cast<size_t>(ds.cfg.frames) * ds.cfg.height *
                 ds.cfg.width * 3;
  for (const auto& entry : manifest.at("episodes")) {
    LoadedEpisode ep;
    ep.seed = entry.at("seed").get<uint64_t>();
    ep.label = entry.at("label").get<int>();
    ep.train = entry.at("split").get<std::string>() == "train";
    std::ifstream in(fs::path(dir) / entry.at("clip").get<std::string>(),
                     std::ios::binary);
    require(in.good(), "cannot open clip file for seed " +
                           std::to_string(ep.seed));
    std::vector<float> payload(count);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    require(in.gcount() ==
                static_cast<std::streamsize>(count * sizeof(float)),
            "truncated clip file for seed " + std::to_string(ep.seed));
    ep.clip = Tensor<double>(
        std::vector<int>{ds.cfg.frames, ds.cfg.height, ds.cfg.width, 3});
    std::copy(payload.begin(), payload.end(), ep.clip.data.begin());
    ep.boxes =
        read_boxes_jsonl((fs::path(dir) / entry.at("boxes").get<std::string>())
                             .string());
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace inavit
