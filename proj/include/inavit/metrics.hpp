#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "inavit/tensor.hpp"
#include "json.hpp"

namespace inavit {

/// Unweighted mean, over the classes present in `labels`, of the fraction
/// of each class's samples whose top-k list contains the true class.
inline double mean_top5_recall(const std::vector<std::vector<int>>& topk,
                               const std::vector<int>& labels) {
  require(!labels.empty(), "mean_top5_recall: empty input");
  require(topk.size() == labels.size(),
          "mean_top5_recall: prediction/label count mismatch");
  std::map<int, std::pair<int, int>> per_class;  // label -> {hits, total}
  for (size_t i = 0; i < labels.size(); ++i) {
    require(!topk[i].empty(), "mean_top5_recall: empty prediction list");
    auto& [hits, total] = per_class[labels[i]];
    total++;
    for (int p : topk[i])
      if (p == labels[i]) {
        hits++;
        break;
      }
  }
  double sum = 0;
  for (const auto& [label, ht] : per_class)
    sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return sum / static_cast<double>(per_class.size());
}

struct MetricsReport {
  double top1 = 0;
  double mean_top5 = 0;
  double loss = 0;
  std::map<int, double> per_class_recall;  // top-k recall per present class
  int samples = 0;
  double wall_clock_s = 0;
  uint64_t config_hash = 0;

  void validate() const {
    require(top1 >= 0 && top1 <= 1 && mean_top5 >= 0 && mean_top5 <= 1,
            "metrics: rates must lie in [0,1]");
    for (const auto& [c, r] : per_class_recall)
      require(r >= 0 && r <= 1, "metrics: rates must lie in [0,1]");
  }
};

inline void to_json(nlohmann::json& j, const MetricsReport& m) {
  nlohmann::json table = nlohmann::json::object();
  for (const auto& [c, r] : m.per_class_recall) table[std::to_string(c)] = r;
  j = {{"top1", m.top1},
       {"mean_top5_recall", m.mean_top5},
       {"loss", m.loss},
       {"per_class_recall", table},
       {"samples", m.samples},
       {"wall_clock_s", m.wall_clock_s},
       {"config_hash", m.config_hash}};
}

}  // namespace inavit
