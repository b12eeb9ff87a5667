#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/blackbox/blackbox.hpp"
#include "aim/core/networks.hpp"

namespace aim::core {

// ---------------------------------------------------------------------------
// Binary Concrete sampler

/// Relaxed mask with the Gumbel noises that produced it.
struct RelaxedMask {
  RowVector z;
  RowVector gumbel_zero;
  RowVector gumbel_one;
  double tau = 0.2;

  /// Recomputes z from stored noise for probabilities `pi`.
  RowVector regenerate(const RowVector& pi) const;
};

inline double gumbel(Rng& rng) { return -std::log(-std::log(open_unit(rng))); }

inline void check_probs(const Eigen::Ref<const Matrix>& pi) {
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    const double p = pi.data()[i];
    if (!(p >= Selector::kEps && p <= 1.0 - Selector::kEps)) {
      throw std::domain_error("selection probability outside [1e-6, 1-1e-6]: " + std::to_string(p));
    }
  }
}

inline RowVector concrete_values(const RowVector& pi, const RowVector& g1, const RowVector& g0, double tau) {
  Graph g(false);
  Var z = nn::concrete(g.constant(pi), g1, g0, tau);
  return z.value();
}

inline RowVector RelaxedMask::regenerate(const RowVector& pi) const {
  check_probs(pi);
  return concrete_values(pi, gumbel_one, gumbel_zero, tau);
}

inline RelaxedMask gumbel_sample(const RowVector& pi, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  check_probs(pi);
  RelaxedMask m;
  m.tau = tau;
  m.gumbel_zero.resize(pi.size());
  m.gumbel_one.resize(pi.size());
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    m.gumbel_zero(i) = gumbel(rng);
    m.gumbel_one(i) = gumbel(rng);
  }
  m.z = concrete_values(pi, m.gumbel_one, m.gumbel_zero, tau);
  return m;
}

// ---------------------------------------------------------------------------
// Numeric losses (reference forms of the graph objective below)

/// -log softmax(logits)[y] via log-sum-exp.
inline double cross_entropy(const RowVector& logits, int y) {
  if (!logits.allFinite()) throw std::domain_error("non-finite logits");
  if (y < 0 || y >= logits.size()) throw std::out_of_range("class index out of range");
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum()) - logits(y);
}

/// CE(y, softmax(W^T z)) for one instance; W is d x C, z has length d.
inline double loss_L1(const Matrix& W, const RowVector& z, int y) {
  if (W.rows() != z.size()) throw std::invalid_argument("loss_L1: W rows must equal len(z)");
  return cross_entropy(z * W, y);
}

/// -log q[y] for a probability vector q.
inline double loss_L2(int y, const RowVector& q) {
  if (y < 0 || y >= q.size()) throw std::out_of_range("class index out of range");
  if (q.minCoeff() < 0.0 || std::abs(q.sum() - 1.0) > 1e-6) throw std::invalid_argument("loss_L2: q is not a distribution");
  if (q(y) <= 0.0) throw std::domain_error("loss_L2: q[y] = 0");
  return -std::log(q(y));
}

/// Sum over rows (features) of the row Euclidean norms.
inline double group_norm_21(const Matrix& W) { return W.rowwise().norm().sum(); }

// ---------------------------------------------------------------------------
// Graph objective

struct Networks {
  Explainer explainer;
  Selector selector;
  Approximator approximator;
};

/// Gumbel noise for M relaxed samples over a (d*B) time-major batch.
struct Noise {
  std::vector<Matrix> one, zero;
};

inline Noise draw_noise(Eigen::Index rows, std::size_t samples, Rng& rng) {
  Noise n;
  for (std::size_t m = 0; m < samples; ++m) {
    Matrix g1(rows, 1), g0(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) {
      g0(i, 0) = gumbel(rng);
      g1(i, 0) = gumbel(rng);
    }
    n.one.push_back(std::move(g1));
    n.zero.push_back(std::move(g0));
  }
  return n;
}

/// Loss coefficients: total = w1 * L1 + alpha * L2 + beta * mean group norm.
struct LossWeights {
  double w1 = 1.0;
  double alpha = 1.0;
  double beta = 1e-3;
};

inline LossWeights weights_for(const TrainConfig& cfg) {
  if (cfg.mode == Mode::kSelectorOnly) return {0.0, cfg.alpha, 0.0};
  return {1.0, cfg.alpha, cfg.beta};
}

struct ObjectiveTerms {
  Var total;
  double l1 = 0.0, l2 = 0.0, norm = 0.0;
  /// Black-box labels on the relaxed inputs, one vector per sample.
  std::vector<std::vector<int>> relaxed_labels;
};

/// Joint objective on one batch. `ym` are black-box labels on the original inputs.
/// The black box is only queried for hard labels; no gradient reaches it.
inline ObjectiveTerms joint_objective(Graph& g, Networks& nets, const std::vector<FeatureVector>& xs,
                                      const std::vector<int>& ym, const blackbox::BlackBox& bb, const Noise& noise,
                                      double tau, const LossWeights& w, bool training, Rng* dropout_rng) {
  const std::size_t batch = xs.size(), d = xs.front().size();
  const auto rows = static_cast<Eigen::Index>(batch * d);
  const std::size_t samples = noise.one.size();
  if (samples == 0) throw std::invalid_argument("objective needs at least one relaxed sample");
  const Matrix valid = validity_column(xs);
  const bool need_w = w.w1 != 0.0 || w.beta != 0.0;
  ObjectiveTerms terms;
  Var weights{};
  if (need_w) weights = nets.explainer(g, xs);
  Var probs = nets.selector(g, xs, training, dropout_rng);
  std::vector<Var> parts;
  for (std::size_t m = 0; m < samples; ++m) {
    if (noise.one[m].rows() != rows) throw std::invalid_argument("noise shape does not match batch");
    Var z = nn::mask_mul(nn::concrete(probs, noise.one[m], noise.zero[m], tau), valid);
    const Matrix scales = to_batch_major(z.value(), batch, d);
    const auto relaxed = blackbox::argmax_rows(bb.predict_proba_relaxed(xs, scales));
    terms.relaxed_labels.push_back(relaxed);
    if (w.w1 != 0.0) {
      Var logits = nn::seq_sum(nn::scale_rows(weights, z), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(batch));
      Var l1 = nn::softmax_cross_entropy(logits, relaxed);
      terms.l1 += l1.scalar() / static_cast<double>(samples);
      parts.push_back(nn::affine(l1, w.w1 / static_cast<double>(samples)));
    }
    if (w.alpha != 0.0) {
      Var l2 = nn::softmax_cross_entropy(nets.approximator(g, xs, z), ym);
      terms.l2 += l2.scalar() / static_cast<double>(samples);
      parts.push_back(nn::affine(l2, w.alpha / static_cast<double>(samples)));
    }
  }
  if (w.beta != 0.0 || need_w) {
    Var norm = nn::affine(nn::row_norm_sum(weights), 1.0 / static_cast<double>(batch));
    terms.norm = norm.scalar();
    if (w.beta != 0.0) parts.push_back(nn::affine(norm, w.beta));
  }
  if (parts.empty()) {
    terms.total = g.constant(Matrix::Zero(1, 1));
    return terms;
  }
  Var total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = nn::add(total, parts[i]);
  terms.total = total;
  return terms;
}

/// Uniform perturbation: k ~ U{1..n} over the n candidate slots, then a uniform k-subset.
inline std::vector<std::size_t> uniform_subset(const std::vector<std::size_t>& candidates, Rng& rng) {
  if (candidates.empty()) return {};
  std::vector<std::size_t> pool = candidates;
  const auto k = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(pool.size())));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

/// B x d binary masks from uniform perturbations over each item's valid slots.
inline Matrix uniform_masks(const std::vector<FeatureVector>& xs, Rng& rng) {
  const std::size_t d = xs.front().size();
  Matrix masks = Matrix::Zero(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(d));
  for (std::size_t b = 0; b < xs.size(); ++b) {
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < d; ++i) {
      if (xs[b].valid[i]) cand.push_back(i);
    }
    for (std::size_t i : uniform_subset(cand, rng)) masks(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return masks;
}

/// Explainer-only objective: L1 on binary masks, no selector, approximator or norm term.
inline ObjectiveTerms explainer_only_objective(Graph& g, Explainer& explainer, const std::vector<FeatureVector>& xs,
                                               const blackbox::BlackBox& bb, const Matrix& masks) {
  const std::size_t batch = xs.size(), d = xs.front().size();
  ObjectiveTerms terms;
  const auto labels = blackbox::argmax_rows(bb.predict_proba_relaxed(xs, masks));
  terms.relaxed_labels.push_back(labels);
  Var weights = explainer(g, xs);
  Var logits = nn::seq_sum(nn::mask_mul(weights, Matrix(to_time_major(masks).replicate(1, weights.cols()))),
                           static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(batch));
  terms.total = nn::softmax_cross_entropy(logits, labels);
  terms.l1 = terms.total.scalar();
  terms.norm = weights.value().rowwise().norm().sum() / static_cast<double>(batch);
  return terms;
}

}  // namespace aim::core
