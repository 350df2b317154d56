#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "inavit/roi.hpp"
#include "json.hpp"

namespace inavit {

/// JSON lines, one detection per line:
/// {"frame":0,"kind":"hand","x1":..,"y1":..,"x2":..,"y2":..,"score":..,
///  "track_id":..}  (track_id omitted while unassigned)
inline void write_boxes_jsonl(const std::string& path,
                              const std::vector<BoundingBox>& boxes) {
  std::ofstream out(path);
  require(out.good(), "cannot open box file for writing: " + path);
  for (const BoundingBox& b : boxes) {
    nlohmann::json j{{"frame", b.frame},
                     {"kind", b.kind == BoxKind::Hand ? "hand" : "object"},
                     {"x1", b.x1},
                     {"y1", b.y1},
                     {"x2", b.x2},
                     {"y2", b.y2},
                     {"score", b.score}};
    if (b.track_id >= 0) j["track_id"] = b.track_id;
    out << j.dump() << "\n";
  }
  require(out.good(), "failed writing box file: " + path);
}

inline std::vector<BoundingBox> read_boxes_jsonl(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open box file: " + path);
  std::vector<BoundingBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("bad JSON at " + path + ":" + std::to_string(line_no) + ": " +
           e.what());
    }
    BoundingBox b;
    b.frame = j.at("frame").get<int>();
    std::string kind = j.at("kind").get<std::string>();
    require(kind == "hand" || kind == "object",
            "unknown box kind '" + kind + "' at " + path + ":" +
                std::to_string(line_no));
    b.kind = kind == "hand" ? BoxKind::Hand : BoxKind::Object;
    b.x1 = j.at("x1").get<double>();
    b.y1 = j.at("y1").get<double>();
    b.x2 = j.at("x2").get<double>();
    b.y2 = j.at("y2").get<double>();
    b.score = j.value("score", 1.0);
    b.track_id = j.value("track_id", -1);
    require(b.x1 <= b.x2 && b.y1 <= b.y2,
            "box corners out of order at " + path + ":" +
                std::to_string(line_no));
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace inavit
