#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/data/feature_space.hpp"
#include "aim/nn/ops.hpp"

namespace aim::blackbox {

using data::FeatureSpace;
using data::FeatureVector;
using data::Modality;

/// Frozen classifier contract. Implementations are read-only after construction.
class BlackBox {
 public:
  virtual ~BlackBox() = default;

  virtual int num_classes() const = 0;
  virtual Modality modality() const = 0;
  virtual std::size_t expected_d() const = 0;
  virtual std::uint64_t space_hash() const = 0;
  virtual std::string arch() const = 0;
  virtual std::uint64_t fingerprint() const = 0;
  virtual nlohmann::json to_json() const = 0;

  /// B x C class probabilities.
  Matrix predict_proba(const std::vector<FeatureVector>& xs) const {
    check_batch(xs);
    return proba_impl(xs, nullptr);
  }

  /// Relaxed query: slot i of row b is scaled by scales(b, i) (token embeddings for
  /// text, slot values otherwise) before the forward pass.
  Matrix predict_proba_relaxed(const std::vector<FeatureVector>& xs, const Matrix& scales) const {
    check_batch(xs);
    if (scales.rows() != static_cast<Eigen::Index>(xs.size()) || scales.cols() != static_cast<Eigen::Index>(expected_d())) {
      throw std::invalid_argument("relaxed query: scale matrix must be B x d");
    }
    return proba_impl(xs, &scales);
  }

  RowVector predict_proba(const FeatureVector& x) const { return predict_proba(std::vector<FeatureVector>{x}).row(0); }

 protected:
  virtual Matrix proba_impl(const std::vector<FeatureVector>& xs, const Matrix* scales) const = 0;

  void check_batch(const std::vector<FeatureVector>& xs) const {
    for (const auto& x : xs) {
      if (x.size() != expected_d()) {
        throw std::invalid_argument("black box expects d=" + std::to_string(expected_d()) + ", got " +
                                    std::to_string(x.size()));
      }
      if ((modality() == Modality::kText) != x.is_text()) throw std::invalid_argument("black box modality mismatch");
    }
  }
};

/// Index of the largest entry; ties go to the lowest index.
inline int argmax_row(const Eigen::Ref<const RowVector>& p) {
  int best = 0;
  for (Eigen::Index c = 1; c < p.size(); ++c) {
    if (p(c) > p(best)) best = static_cast<int>(c);
  }
  return best;
}

inline std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(p.row(i));
  return out;
}

inline int predict_label(const BlackBox& bb, const FeatureVector& x) { return argmax_row(bb.predict_proba(x)); }

inline std::vector<int> predict_labels(const BlackBox& bb, const std::vector<FeatureVector>& xs) {
  return argmax_rows(bb.predict_proba(xs));
}

inline void require_space(const BlackBox& bb, const FeatureSpace& space) {
  if (bb.space_hash() != space.hash()) {
    throw std::runtime_error("black box was trained on a different feature space (hash " + to_hex(bb.space_hash()) +
                             " vs " + to_hex(space.hash()) + ")");
  }
}

/// Planted key sets per class; label = class with the largest key overlap.
struct RuleSpec {
  std::vector<std::vector<int>> keys;
  double temperature = 1.0;
  /// Reject inputs that contain no key at all.
  bool require_key = false;
};

class RuleBlackBox final : public BlackBox {
 public:
  RuleBlackBox(RuleSpec spec, const FeatureSpace& space) : spec_(std::move(spec)), d_(space.d), hash_(space.hash()) {
    if (space.modality != Modality::kText) throw std::invalid_argument("rule black box needs a text space");
    if (spec_.keys.size() < 2) throw std::invalid_argument("rule black box needs >= 2 classes");
    if (!(spec_.temperature > 0.0)) throw std::invalid_argument("rule temperature must be > 0");
    std::set<int> seen;
    for (std::size_t c = 0; c < spec_.keys.size(); ++c) {
      if (spec_.keys[c].empty()) throw std::invalid_argument("rule key set is empty");
      for (int k : std::set<int>(spec_.keys[c].begin(), spec_.keys[c].end())) {
        if (k == data::kSentinel) throw std::invalid_argument("rule key cannot be the sentinel");
        if (!seen.insert(k).second) throw std::invalid_argument("rule key sets overlap (token id " + std::to_string(k) + ")");
      }
      for (int k : spec_.keys[c]) owner_[k] = static_cast<int>(c);
    }
  }

  int num_classes() const override { return static_cast<int>(spec_.keys.size()); }
  Modality modality() const override { return Modality::kText; }
  std::size_t expected_d() const override { return d_; }
  std::uint64_t space_hash() const override { return hash_; }
  std::string arch() const override { return "rule"; }
  const RuleSpec& spec() const { return spec_; }

  std::uint64_t fingerprint() const override {
    Fnv1a h;
    h.update("rule");
    for (const auto& ks : spec_.keys) {
      h.update_pod(static_cast<std::uint64_t>(ks.size()));
      for (int k : ks) h.update_pod(static_cast<std::int64_t>(k));
    }
    h.update_pod(spec_.temperature);
    h.update_pod(hash_);
    return h.digest();
  }

  nlohmann::json to_json() const override {
    return {{"arch", "rule"},       {"keys", spec_.keys},           {"temperature", spec_.temperature},
            {"require_key", spec_.require_key}, {"d", d_}, {"space_hash", to_hex(hash_)}};
  }

  /// (Soft) key counts per class, B x C.
  Matrix overlap(const std::vector<FeatureVector>& xs, const Matrix* scales) const {
    Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), num_classes());
    for (std::size_t b = 0; b < xs.size(); ++b) {
      for (std::size_t i = 0; i < d_; ++i) {
        const auto it = owner_.find(xs[b].tokens[i]);
        if (it == owner_.end()) continue;
        counts(static_cast<Eigen::Index>(b), it->second) +=
            scales ? (*scales)(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) : 1.0;
      }
    }
    return counts;
  }

 protected:
  Matrix proba_impl(const std::vector<FeatureVector>& xs, const Matrix* scales) const override {
    const Matrix counts = overlap(xs, scales);
    if (spec_.require_key) {
      for (Eigen::Index b = 0; b < counts.rows(); ++b) {
        if (counts.row(b).sum() == 0.0) throw std::invalid_argument("rule black box queried on an input with no key");
      }
    }
    return nn::softmax_rows(counts / spec_.temperature);
  }

 private:
  RuleSpec spec_;
  std::size_t d_;
  std::uint64_t hash_;
  std::unordered_map<int, int> owner_;
};

inline std::unique_ptr<BlackBox> make_rule_blackbox(RuleSpec spec, const FeatureSpace& space) {
  return std::make_unique<RuleBlackBox>(std::move(spec), space);
}

}  // namespace aim::blackbox
