#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/metrics/faithfulness.hpp"

namespace aim::metrics {

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& v) { return {mean(v), stddev(v), v.size()}; }

inline void to_json(nlohmann::json& j, const Summary& s) { j = {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

/// Per-instance values of each metric for one (dataset, explainer, K).
struct MetricReport {
  std::string dataset;
  std::string explainer;
  std::size_t k = 0;
  std::map<std::string, std::vector<double>> values;

  void add(const std::string& metric, std::vector<double> v) { values[metric] = std::move(v); }

  Summary summary(const std::string& metric) const {
    const auto it = values.find(metric);
    if (it == values.end()) throw std::out_of_range("no metric " + metric);
    return summarize(it->second);
  }
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [name, v] : r.values) m[name] = summarize(v);
  j = {{"dataset", r.dataset}, {"explainer", r.explainer}, {"k", r.k}, {"metrics", m}};
}

/// Mean and std over seeds of each metric's per-run mean.
inline std::map<std::string, Summary> aggregate_runs(const std::vector<MetricReport>& runs) {
  std::map<std::string, std::vector<double>> per_metric;
  for (const auto& r : runs) {
    for (const auto& [name, v] : r.values) per_metric[name].push_back(mean(v));
  }
  std::map<std::string, Summary> out;
  for (const auto& [name, v] : per_metric) out[name] = summarize(v);
  return out;
}

}  // namespace aim::metrics
