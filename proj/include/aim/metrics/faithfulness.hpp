#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "aim/blackbox/blackbox.hpp"
#include "aim/data/masking.hpp"

namespace aim::metrics {

using blackbox::BlackBox;
using data::FeatureVector;
using data::MaskStrategy;

/// How removed features are realised when re-querying the black box.
struct MaskingContext {
  MaskStrategy strategy = MaskStrategy::kZero;
  const data::FeatureStats* stats = nullptr;
  /// Noise masking: independent draws per repetition, results averaged.
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
};

/// Masked copies of x keeping `keep`, one per repetition (noise) or a single copy.
inline std::vector<FeatureVector> masked_copies(const FeatureVector& x, const std::vector<std::size_t>& keep,
                                                const MaskingContext& ctx, Rng& rng) {
  const std::size_t reps = ctx.strategy == MaskStrategy::kNoise ? std::max<std::size_t>(1, ctx.repetitions) : 1;
  std::vector<FeatureVector> out;
  for (std::size_t r = 0; r < reps; ++r) out.push_back(data::mask_features(x, {ctx.strategy, keep}, ctx.stats, &rng));
  return out;
}

/// Per-instance 0/1 agreement (a fraction when noise repetitions are averaged)
/// between the label on the kept features and `reference`.
inline std::vector<double> agreement(const BlackBox& bb, const std::vector<FeatureVector>& xs,
                                     const std::vector<std::vector<std::size_t>>& kept, const std::vector<int>& reference,
                                     const MaskingContext& ctx = {}) {
  if (xs.size() != kept.size() || xs.size() != reference.size()) throw std::invalid_argument("agreement: size mismatch");
  Rng rng(ctx.seed);
  std::vector<FeatureVector> batch;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (auto& m : masked_copies(xs[i], kept[i], ctx, rng)) {
      batch.push_back(std::move(m));
      owner.push_back(i);
    }
  }
  std::vector<double> hits(xs.size(), 0.0), counts(xs.size(), 0.0);
  if (!batch.empty()) {
    const auto labels = blackbox::predict_labels(bb, batch);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      hits[owner[k]] += labels[k] == reference[owner[k]] ? 1.0 : 0.0;
      counts[owner[k]] += 1.0;
    }
  }
  for (std::size_t i = 0; i < xs.size(); ++i) hits[i] = counts[i] > 0 ? hits[i] / counts[i] : 0.0;
  return hits;
}

/// 1 iff the black box predicts the same label on the kept features as on the full input.
inline std::vector<double> faithfulness(const BlackBox& bb, const std::vector<FeatureVector>& xs,
                                        const std::vector<std::vector<std::size_t>>& kept, const MaskingContext& ctx = {}) {
  for (const auto& s : kept) {
    if (s.empty()) throw std::invalid_argument("faithfulness needs a nonempty kept set");
  }
  return agreement(bb, xs, kept, blackbox::predict_labels(bb, xs), ctx);
}

inline double faithfulness(const BlackBox& bb, const FeatureVector& x, const std::vector<std::size_t>& kept,
                           const MaskingContext& ctx = {}) {
  return faithfulness(bb, std::vector<FeatureVector>{x}, {kept}, ctx).front();
}

/// 1 iff the black box predicts class j on the kept features (explanations for class j).
inline std::vector<double> class_specific_faithfulness(const BlackBox& bb, const std::vector<FeatureVector>& xs,
                                                       const std::vector<std::vector<std::size_t>>& kept, int j,
                                                       const MaskingContext& ctx = {}) {
  if (j < 0 || j >= bb.num_classes()) throw std::out_of_range("class index out of range");
  return agreement(bb, xs, kept, std::vector<int>(xs.size(), j), ctx);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace aim::metrics
