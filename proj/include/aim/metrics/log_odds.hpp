#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/metrics/faithfulness.hpp"

namespace aim::metrics {

inline constexpr double kProbClamp = 1e-6;

inline double log_odds(double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return std::log(p / (1.0 - p));
}

/// log-odds(before) - log-odds(after).
inline double delta_log_odds(double before, double after) { return log_odds(before) - log_odds(after); }

enum class LogOddsMode { kPositive, kNegative };

inline LogOddsMode log_odds_mode_from_string(const std::string& s) {
  if (s == "positive") return LogOddsMode::kPositive;
  if (s == "negative") return LogOddsMode::kNegative;
  throw std::invalid_argument("unknown log-odds mode: " + s);
}

/// Slots kept when measuring: positive removes S (keeps the rest); negative keeps only S.
inline std::vector<std::size_t> log_odds_keep(std::size_t d, const std::vector<std::size_t>& s, LogOddsMode mode) {
  if (mode == LogOddsMode::kNegative) return s;
  std::vector<char> in(d, 0);
  for (std::size_t i : s) {
    if (i >= d) throw std::out_of_range("explanation index out of range");
    in[i] = 1;
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d; ++i) {
    if (!in[i]) keep.push_back(i);
  }
  return keep;
}

/// Change in log-odds of the originally predicted class after masking, per instance.
/// With noise masking, the masked probability is averaged over repetitions.
inline std::vector<double> delta_log_odds(const BlackBox& bb, const std::vector<FeatureVector>& xs,
                                          const std::vector<std::vector<std::size_t>>& s, LogOddsMode mode,
                                          const MaskingContext& ctx = {}) {
  if (xs.size() != s.size()) throw std::invalid_argument("delta_log_odds: size mismatch");
  if (xs.empty()) return {};
  const Matrix full = bb.predict_proba(xs);
  const auto ym = blackbox::argmax_rows(full);
  Rng rng(ctx.seed);
  std::vector<FeatureVector> batch;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (auto& m : masked_copies(xs[i], log_odds_keep(xs[i].size(), s[i], mode), ctx, rng)) {
      batch.push_back(std::move(m));
      owner.push_back(i);
    }
  }
  const Matrix masked = bb.predict_proba(batch);
  std::vector<double> after(xs.size(), 0.0), count(xs.size(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    after[owner[k]] += masked(static_cast<Eigen::Index>(k), ym[owner[k]]);
    count[owner[k]] += 1.0;
  }
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = delta_log_odds(full(static_cast<Eigen::Index>(i), ym[i]), after[i] / count[i]);
  }
  return out;
}

}  // namespace aim::metrics
