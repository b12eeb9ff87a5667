#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/blackbox/networks.hpp"
#include "aim/core/config.hpp"
#include "aim/data/dataset.hpp"

namespace aim::expcli {

/// Bad experiment file: unreadable, malformed, unknown keys, out-of-range values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad command line (flags, modes, K lists passed as flags).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> kAll = {"faithfulness",      "purity",       "brevity",
                                                "iou_stability",     "log_odds_pos", "log_odds_neg",
                                                "class_faithfulness", "pairwise_iou"};
  return kAll;
}

/// Metrics that read token strings; skipped for image and tabular features.
inline bool text_only_metric(const std::string& m) { return m == "purity" || m == "brevity" || m == "iou_stability"; }

struct MetricsConfig {
  std::vector<std::string> names = known_metrics();
  /// Noise-masking repetitions per instance.
  std::size_t repetitions = 10;
  std::size_t neighbors_per_channel = 10;
  std::size_t embed_dim = 64;
  /// dev | test
  std::string split = "test";
  /// 0 keeps the whole split.
  std::size_t max_instances = 0;
};

struct TuneConfig {
  std::vector<double> alphas = {0.1, 0.5, 1.0, 1.5, 1.8, 2.0};
  std::vector<double> betas = {1e-2, 1e-3, 1e-4};
  double subset = 0.2;
  std::size_t epochs = 3;
};

struct ExperimentConfig {
  data::DatasetConfig dataset;
  blackbox::BlackBoxConfig blackbox;
  core::TrainConfig aim;
  MetricsConfig metrics;
  TuneConfig tune;
  std::vector<std::size_t> k = {5, 10, 20};
  std::vector<std::uint64_t> seeds = {0};
  std::string output = "runs";
};

namespace detail {

template <std::size_t N>
void reject_unknown(const nlohmann::json& j, const std::array<const char*, N>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw ConfigError(where + ": unknown key '" + k + "'");
    }
  }
}

template <typename T>
void require_ascending(const std::vector<T>& v, const std::string& what) {
  if (v.empty()) throw ConfigError(what + " must not be empty");
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i - 1] < v[i])) throw ConfigError(what + " must be strictly ascending");
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const MetricsConfig& c) {
  j = {{"names", c.names},         {"repetitions", c.repetitions}, {"neighbors_per_channel", c.neighbors_per_channel},
       {"embed_dim", c.embed_dim}, {"split", c.split},             {"max_instances", c.max_instances}};
}

inline void from_json(const nlohmann::json& j, MetricsConfig& c) {
  detail::reject_unknown(j, std::array{"names", "repetitions", "neighbors_per_channel", "embed_dim", "split", "max_instances"},
                         "metrics");
  const MetricsConfig d;
  c.names = j.value("names", d.names);
  c.repetitions = j.value("repetitions", d.repetitions);
  c.neighbors_per_channel = j.value("neighbors_per_channel", d.neighbors_per_channel);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.split = j.value("split", d.split);
  c.max_instances = j.value("max_instances", d.max_instances);
  if (c.names.empty()) throw ConfigError("metrics.names must not be empty");
  for (const auto& n : c.names) {
    if (std::find(known_metrics().begin(), known_metrics().end(), n) == known_metrics().end()) {
      throw ConfigError("metrics.names: unknown metric '" + n + "'");
    }
  }
  if (c.repetitions < 1) throw ConfigError("metrics.repetitions must be >= 1");
  if (c.neighbors_per_channel < 1) throw ConfigError("metrics.neighbors_per_channel must be >= 1");
  if (c.embed_dim < 1) throw ConfigError("metrics.embed_dim must be >= 1");
  if (c.split != "dev" && c.split != "test") throw ConfigError("metrics.split must be dev|test");
}

inline void to_json(nlohmann::json& j, const TuneConfig& c) {
  j = {{"alphas", c.alphas}, {"betas", c.betas}, {"subset", c.subset}, {"epochs", c.epochs}};
}

inline void from_json(const nlohmann::json& j, TuneConfig& c) {
  detail::reject_unknown(j, std::array{"alphas", "betas", "subset", "epochs"}, "tune");
  const TuneConfig d;
  c.alphas = j.value("alphas", d.alphas);
  c.betas = j.value("betas", d.betas);
  c.subset = j.value("subset", d.subset);
  c.epochs = j.value("epochs", d.epochs);
  if (c.alphas.empty() || c.betas.empty()) throw ConfigError("tune grid must not be empty");
  for (double a : c.alphas) {
    if (!(a >= 0.0)) throw ConfigError("tune.alphas must be >= 0");
  }
  for (double b : c.betas) {
    if (!(b >= 0.0)) throw ConfigError("tune.betas must be >= 0");
  }
  if (!(c.subset > 0.0 && c.subset <= 1.0)) throw ConfigError("tune.subset must be in (0, 1]");
  if (c.epochs < 1) throw ConfigError("tune.epochs must be >= 1");
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json aim = c.aim;
  aim.erase("seed");
  j = {{"dataset", c.dataset}, {"blackbox", c.blackbox}, {"aim", aim},          {"metrics", c.metrics},
       {"tune", c.tune},       {"k", c.k},               {"seeds", c.seeds},    {"output", c.output}};
}

/// Strict parse: unknown keys anywhere are rejected. Explainer seeds come from the
/// top-level `seeds` list, so `aim.seed` is not accepted.
inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  detail::reject_unknown(j, std::array{"dataset", "blackbox", "aim", "metrics", "tune", "k", "seeds", "output"}, "config");
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<data::DatasetConfig>();
    if (j.contains("blackbox")) c.blackbox = j.at("blackbox").get<blackbox::BlackBoxConfig>();
    if (j.contains("aim")) {
      if (j.at("aim").contains("seed")) throw ConfigError("aim.seed is not allowed; use the top-level seeds list");
      c.aim = j.at("aim").get<core::TrainConfig>();
    }
    if (j.contains("metrics")) c.metrics = j.at("metrics").get<MetricsConfig>();
    if (j.contains("tune")) c.tune = j.at("tune").get<TuneConfig>();
    if (j.contains("k")) c.k = j.at("k").get<std::vector<std::size_t>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  detail::require_ascending(c.k, "k");
  if (c.k.front() < 1) throw ConfigError("k values must be >= 1");
  if (c.k.back() > c.dataset.d) throw ConfigError("k=" + std::to_string(c.k.back()) + " exceeds d=" + std::to_string(c.dataset.d));
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.output.empty()) throw ConfigError("output must not be empty");
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment(j);
}

/// Hash of everything that determines results; the output path is excluded.
inline std::string experiment_hash(const ExperimentConfig& c) {
  nlohmann::json j = c;
  j.erase("output");
  return to_hex(fnv1a(j.dump()));
}

/// Hash of the parts that determine the black box.
inline std::string blackbox_hash(const ExperimentConfig& c) {
  const nlohmann::json j = {{"dataset", c.dataset}, {"blackbox", c.blackbox}};
  return to_hex(fnv1a(j.dump()));
}

/// Parses "5,10,20"; the result must be strictly ascending.
inline std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("bad K list '" + s + "'");
    }
    out.push_back(std::stoul(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 1 || (i > 0 && out[i - 1] >= out[i])) throw UsageError("K list must be strictly ascending and >= 1");
  }
  return out;
}

}  // namespace aim::expcli
