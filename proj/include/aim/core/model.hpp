#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/blackbox/blackbox.hpp"
#include "aim/core/objective.hpp"

namespace aim::core {

/// Trained explainer, selector and approximator with the space they were built for.
class AimModel {
 public:
  AimModel(const FeatureSpace& space, int num_classes, const TrainConfig& cfg)
      : space_(space), classes_(num_classes), cfg_(cfg) {
    cfg_.validate();
    if (num_classes < 2) throw std::invalid_argument("need at least two classes");
    // Independent streams so the networks' initial weights do not depend on each other's sizes.
    Rng re(cfg.seed * 3 + 1), rs(cfg.seed * 3 + 2), rg(cfg.seed * 3 + 3);
    nets_.explainer = Explainer(space_, num_classes, cfg_.net, re);
    nets_.selector = Selector(space_, cfg_.net, rs);
    nets_.approximator = Approximator(space_, num_classes, cfg_.net, rg);
  }

  const FeatureSpace& space() const { return space_; }
  int num_classes() const { return classes_; }
  std::size_t d() const { return space_.d; }
  const TrainConfig& config() const { return cfg_; }
  Networks& networks() { return nets_; }
  const Networks& networks() const { return nets_; }
  std::uint64_t blackbox_fingerprint() const { return bb_fingerprint_; }
  void set_blackbox_fingerprint(std::uint64_t f) { bb_fingerprint_ = f; }

  /// Explanation matrices W_x (d x C), dropout off.
  std::vector<Matrix> weights(const std::vector<FeatureVector>& xs) const {
    std::vector<Matrix> out;
    for_chunks(xs, [&](const std::vector<FeatureVector>& chunk) {
      Graph g(false);
      const Matrix w = nets_.explainer(g, chunk).value();
      const std::size_t batch = chunk.size();
      for (std::size_t b = 0; b < batch; ++b) {
        Matrix wb(static_cast<Eigen::Index>(d()), classes_);
        for (std::size_t t = 0; t < d(); ++t) wb.row(static_cast<Eigen::Index>(t)) = w.row(static_cast<Eigen::Index>(t * batch + b));
        out.push_back(std::move(wb));
      }
    });
    return out;
  }

  Matrix weights(const FeatureVector& x) const { return weights(std::vector<FeatureVector>{x}).front(); }

  /// Selection probabilities pi_x, B x d.
  Matrix probs(const std::vector<FeatureVector>& xs) const {
    Matrix out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(d()));
    Eigen::Index row = 0;
    for_chunks(xs, [&](const std::vector<FeatureVector>& chunk) {
      Graph g(false);
      const Matrix p = nets_.selector(g, chunk, false, nullptr).value();
      out.middleRows(row, static_cast<Eigen::Index>(chunk.size())) = to_batch_major(p, chunk.size(), d());
      row += static_cast<Eigen::Index>(chunk.size());
    });
    return out;
  }

  RowVector probs(const FeatureVector& x) const { return probs(std::vector<FeatureVector>{x}).row(0); }

  /// Approximator distribution on z ⊙ x for a B x d mask.
  Matrix approximate(const std::vector<FeatureVector>& xs, const Matrix& masks) const {
    Graph g(false);
    Var logits = nets_.approximator(g, xs, g.constant(to_time_major(masks)));
    return nn::softmax_rows(logits.value());
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.update_pod(nets_.explainer.params.fingerprint());
    h.update_pod(nets_.selector.params.fingerprint());
    h.update_pod(nets_.approximator.params.fingerprint());
    return h.digest();
  }

  nlohmann::json to_json() const {
    return {{"format", "aim-explainer-v1"},
            {"config", cfg_},
            {"num_classes", classes_},
            {"space_hash", to_hex(space_.hash())},
            {"blackbox_hash", to_hex(bb_fingerprint_)},
            {"explainer", nets_.explainer.params.to_json()},
            {"selector", nets_.selector.params.to_json()},
            {"approximator", nets_.approximator.params.to_json()}};
  }

  static AimModel from_json(const nlohmann::json& j, const FeatureSpace& space) {
    if (j.at("format") != "aim-explainer-v1") throw std::runtime_error("not an explainer checkpoint");
    if (j.at("space_hash").get<std::string>() != to_hex(space.hash())) {
      throw std::runtime_error("explainer checkpoint does not match the feature space");
    }
    AimModel m(space, j.at("num_classes").get<int>(), j.at("config").get<TrainConfig>());
    m.nets_.explainer.params.load_json(j.at("explainer"));
    m.nets_.selector.params.load_json(j.at("selector"));
    m.nets_.approximator.params.load_json(j.at("approximator"));
    m.bb_fingerprint_ = std::stoull(j.at("blackbox_hash").get<std::string>(), nullptr, 16);
    return m;
  }

  /// Snapshot of all parameters (used to retain the best epoch).
  nlohmann::json snapshot() const { return to_json(); }
  void restore(const nlohmann::json& j) {
    nets_.explainer.params.load_json(j.at("explainer"));
    nets_.selector.params.load_json(j.at("selector"));
    nets_.approximator.params.load_json(j.at("approximator"));
  }

 private:
  template <typename Fn>
  void for_chunks(const std::vector<FeatureVector>& xs, Fn&& fn) const {
    constexpr std::size_t kChunk = 256;
    for (std::size_t s = 0; s < xs.size(); s += kChunk) {
      const std::size_t n = std::min(kChunk, xs.size() - s);
      fn(std::vector<FeatureVector>(xs.begin() + static_cast<std::ptrdiff_t>(s), xs.begin() + static_cast<std::ptrdiff_t>(s + n)));
    }
  }

  FeatureSpace space_;
  int classes_;
  TrainConfig cfg_;
  // Inference builds non-recording graphs that only read parameters.
  mutable Networks nets_;
  std::uint64_t bb_fingerprint_ = 0;
};

// ---------------------------------------------------------------------------
// Inference

struct Explanation {
  int target_class = 0;
  std::vector<std::size_t> indices;
  std::vector<double> weights;
  std::size_t k = 0;
  bool exclude_invalid = true;
  /// "W" (column of the explanation matrix) or "pi" (selector probabilities).
  std::string source = "W";
};

/// Top-K indices by score, descending; ties go to the lower index.
inline std::vector<std::size_t> rank_top_k(const Eigen::Ref<const RowVector>& scores, const std::vector<std::uint8_t>& valid,
                                           std::size_t k, bool exclude_invalid) {
  const auto d = static_cast<std::size_t>(scores.size());
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < d; ++i) {
    if (!exclude_invalid || valid.at(i)) cand.push_back(i);
  }
  if (k > cand.size()) {
    throw std::invalid_argument("K=" + std::to_string(k) + " exceeds the " + std::to_string(cand.size()) +
                                (exclude_invalid ? " valid slots" : " slots"));
  }
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  cand.resize(k);
  return cand;
}

inline Explanation explanation_from_scores(const RowVector& scores, const FeatureVector& x, std::size_t k, int target,
                                           bool exclude_invalid, std::string source) {
  Explanation e;
  e.target_class = target;
  e.k = k;
  e.exclude_invalid = exclude_invalid;
  e.source = std::move(source);
  e.indices = rank_top_k(scores, x.valid, k, exclude_invalid);
  for (std::size_t i : e.indices) e.weights.push_back(scores(static_cast<Eigen::Index>(i)));
  return e;
}

/// Ranks features by column j of W_x; j defaults to the black-box label on x.
inline Explanation explain_from_weights(const Matrix& W, const FeatureVector& x, std::size_t k, int target,
                                        bool exclude_invalid = true) {
  if (target < 0 || target >= W.cols()) throw std::out_of_range("target class out of range");
  return explanation_from_scores(W.col(target).transpose(), x, k, target, exclude_invalid, "W");
}

inline Explanation explain(const AimModel& model, const blackbox::BlackBox& bb, const FeatureVector& x, std::size_t k,
                           std::optional<int> target = std::nullopt, bool exclude_invalid = true) {
  const int j = target ? *target : blackbox::predict_label(bb, x);
  if (j < 0 || j >= model.num_classes()) throw std::out_of_range("target class out of range");
  return explain_from_weights(model.weights(x), x, k, j, exclude_invalid);
}

/// Ablation: rank by the selector probabilities pi_x instead of W.
inline Explanation infer_from_selector(const AimModel& model, const blackbox::BlackBox& bb, const FeatureVector& x,
                                       std::size_t k, bool exclude_invalid = true) {
  return explanation_from_scores(model.probs(x), x, k, blackbox::predict_label(bb, x), exclude_invalid, "pi");
}

/// Batch explanations for a target class per instance, using the ranking source of the model's mode.
inline std::vector<Explanation> explain_batch(const AimModel& model, const std::vector<FeatureVector>& xs,
                                              const std::vector<int>& targets, std::size_t k, bool exclude_invalid,
                                              bool use_selector) {
  std::vector<Explanation> out;
  if (use_selector) {
    const Matrix p = model.probs(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      out.push_back(explanation_from_scores(p.row(static_cast<Eigen::Index>(i)), xs[i], k, targets[i], exclude_invalid, "pi"));
    }
    return out;
  }
  const auto ws = model.weights(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(explain_from_weights(ws[i], xs[i], k, targets[i], exclude_invalid));
  return out;
}

}  // namespace aim::core
