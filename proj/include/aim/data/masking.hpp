#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aim/data/feature_space.hpp"

namespace aim::data {

enum class MaskStrategy { kZero, kMean, kNoise };

inline std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kZero: return "zero";
    case MaskStrategy::kMean: return "mean";
    case MaskStrategy::kNoise: return "noise";
  }
  return "?";
}

inline MaskStrategy mask_strategy_from_string(std::string_view s) {
  if (s == "zero") return MaskStrategy::kZero;
  if (s == "mean") return MaskStrategy::kMean;
  if (s == "noise") return MaskStrategy::kNoise;
  throw std::invalid_argument("unknown mask strategy: " + std::string(s));
}

/// Which slots survive masking and how the rest are removed.
struct MaskSpec {
  MaskStrategy strategy = MaskStrategy::kZero;
  std::vector<std::size_t> keep;
};

/// Per-slot means (d x slot_width), computed over the split used for evaluation.
struct FeatureStats {
  Matrix mean;
};

inline FeatureStats column_means(const std::vector<FeatureVector>& rows) {
  if (rows.empty()) throw std::invalid_argument("column_means: no rows");
  FeatureStats s;
  s.mean = Matrix::Zero(rows.front().values.rows(), rows.front().values.cols());
  for (const auto& r : rows) {
    if (r.values.rows() != s.mean.rows() || r.values.cols() != s.mean.cols()) {
      throw std::invalid_argument("column_means: ragged rows");
    }
    s.mean += r.values;
  }
  s.mean /= static_cast<double>(rows.size());
  return s;
}

inline constexpr double kNoiseBound = 1.0;

/// Keeps the slots in spec.keep and removes every other slot: text slots become the
/// sentinel; dense slots become 0, the per-slot mean, or uniform noise in [-1, 1].
inline FeatureVector mask_features(const FeatureVector& x, const MaskSpec& spec, const FeatureStats* stats = nullptr,
                                   Rng* rng = nullptr) {
  const std::size_t d = x.size();
  std::vector<char> kept(d, 0);
  for (std::size_t i : spec.keep) {
    if (i >= d) throw std::out_of_range("mask_features: kept index " + std::to_string(i) + " >= d");
    kept[i] = 1;
  }
  FeatureVector out = x;
  if (x.is_text()) {
    if (spec.strategy != MaskStrategy::kZero) throw std::invalid_argument("text features only support zero masking");
    for (std::size_t i = 0; i < d; ++i) {
      if (!kept[i]) out.tokens[i] = kSentinel;
    }
    return out;
  }
  if (spec.strategy == MaskStrategy::kMean) {
    if (stats == nullptr) throw std::invalid_argument("mean masking requires feature statistics");
    if (stats->mean.rows() != x.values.rows() || stats->mean.cols() != x.values.cols()) {
      throw std::invalid_argument("mean masking: statistics shape mismatch");
    }
  }
  if (spec.strategy == MaskStrategy::kNoise && rng == nullptr) throw std::invalid_argument("noise masking requires an rng");
  for (std::size_t i = 0; i < d; ++i) {
    if (kept[i]) continue;
    const auto r = static_cast<Eigen::Index>(i);
    switch (spec.strategy) {
      case MaskStrategy::kZero: out.values.row(r).setZero(); break;
      case MaskStrategy::kMean: out.values.row(r) = stats->mean.row(r); break;
      case MaskStrategy::kNoise:
        for (Eigen::Index c = 0; c < out.values.cols(); ++c) out.values(r, c) = kNoiseBound * (2.0 * open_unit(*rng) - 1.0);
        break;
    }
  }
  return out;
}

/// Complement of a kept set within [0, d).
inline std::vector<std::size_t> complement(const std::vector<std::size_t>& keep, std::size_t d) {
  std::vector<char> in(d, 0);
  for (auto i : keep) {
    if (i < d) in[i] = 1;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d; ++i) {
    if (!in[i]) out.push_back(i);
  }
  return out;
}

}  // namespace aim::data
