#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace aim::core {

enum class Mode { kFull, kInferFromSelector, kSelectorOnly, kExplainerOnly };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::kFull: return "full";
    case Mode::kInferFromSelector: return "infer-from-selector";
    case Mode::kSelectorOnly: return "selector-only";
    case Mode::kExplainerOnly: return "explainer-only";
  }
  return "?";
}

inline Mode mode_from_string(std::string_view s) {
  if (s == "full") return Mode::kFull;
  if (s == "infer-from-selector") return Mode::kInferFromSelector;
  if (s == "selector-only") return Mode::kSelectorOnly;
  if (s == "explainer-only") return Mode::kExplainerOnly;
  throw std::invalid_argument("unknown mode: " + std::string(s));
}

/// Modes whose explanations are read from the selector probabilities instead of W.
inline bool ranks_by_selector(Mode m) { return m == Mode::kInferFromSelector || m == Mode::kSelectorOnly; }

/// Layer widths of the three networks.
struct NetworkConfig {
  std::size_t embed = 32;
  std::size_t explainer_hidden = 64;
  std::size_t selector_lstm = 32;
  std::size_t selector_hidden = 64;
  std::size_t approx_filters = 64;
  std::size_t approx_hidden = 64;
  double dropout = 0.2;
};

struct TrainConfig {
  double alpha = 1.0;
  double beta = 1e-3;
  double tau = 0.2;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  std::size_t samples = 1;
  std::uint64_t seed = 0;
  Mode mode = Mode::kFull;
  /// K used for the per-epoch dev faithfulness that picks the retained checkpoint.
  std::size_t dev_k = 10;
  /// zero | mean | noise
  std::string mask = "zero";
  /// Rank only real (non-padding) slots.
  bool exclude_invalid = true;
  NetworkConfig net;

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("aim.alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("aim.beta must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("aim.tau must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("aim.lr must be > 0");
    if (samples < 1) throw std::invalid_argument("aim.samples (M) must be >= 1");
    if (batch < 1) throw std::invalid_argument("aim.batch must be >= 1");
    if (dev_k < 1) throw std::invalid_argument("aim.dev_k must be >= 1");
    if (!(net.dropout >= 0.0 && net.dropout < 1.0)) throw std::invalid_argument("aim.dropout must be in [0, 1)");
    if (net.embed == 0 || net.explainer_hidden == 0 || net.selector_lstm == 0 || net.selector_hidden == 0 ||
        net.approx_filters == 0 || net.approx_hidden == 0) {
      throw std::invalid_argument("aim network widths must be >= 1");
    }
    if (mask != "zero" && mask != "mean" && mask != "noise") throw std::invalid_argument("aim.mask must be zero|mean|noise");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"tau", c.tau},
       {"lr", c.lr},
       {"batch", c.batch},
       {"epochs", c.epochs},
       {"samples", c.samples},
       {"seed", c.seed},
       {"mode", to_string(c.mode)},
       {"dev_k", c.dev_k},
       {"mask", c.mask},
       {"exclude_invalid", c.exclude_invalid},
       {"embed", c.net.embed},
       {"explainer_hidden", c.net.explainer_hidden},
       {"selector_lstm", c.net.selector_lstm},
       {"selector_hidden", c.net.selector_hidden},
       {"approx_filters", c.net.approx_filters},
       {"approx_hidden", c.net.approx_hidden},
       {"dropout", c.net.dropout}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::array<const char*, 19> kKeys = {
      "alpha", "beta",          "tau",   "lr",         "batch",            "epochs",        "samples",
      "seed",  "mode",          "dev_k", "mask",       "exclude_invalid",  "embed",         "explainer_hidden",
      "selector_lstm", "selector_hidden", "approx_filters", "approx_hidden", "dropout"};
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(kKeys.begin(), kKeys.end(), [&](const char* s) { return k == s; }) == kKeys.end()) {
      throw std::invalid_argument("aim: unknown key '" + k + "'");
    }
  }
  const TrainConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.tau = j.value("tau", d.tau);
  c.lr = j.value("lr", d.lr);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.samples = j.value("samples", d.samples);
  c.seed = j.value("seed", d.seed);
  c.mode = mode_from_string(j.value("mode", to_string(d.mode)));
  c.dev_k = j.value("dev_k", d.dev_k);
  c.mask = j.value("mask", d.mask);
  c.exclude_invalid = j.value("exclude_invalid", d.exclude_invalid);
  c.net.embed = j.value("embed", d.net.embed);
  c.net.explainer_hidden = j.value("explainer_hidden", d.net.explainer_hidden);
  c.net.selector_lstm = j.value("selector_lstm", d.net.selector_lstm);
  c.net.selector_hidden = j.value("selector_hidden", d.net.selector_hidden);
  c.net.approx_filters = j.value("approx_filters", d.net.approx_filters);
  c.net.approx_hidden = j.value("approx_hidden", d.net.approx_hidden);
  c.net.dropout = j.value("dropout", d.net.dropout);
  c.validate();
}

}  // namespace aim::core
