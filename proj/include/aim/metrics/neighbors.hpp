#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "aim/metrics/lexical.hpp"

// Neighbor sets for explanation stability: lexical overlap plus embedding cosine.

namespace aim::metrics {

/// Document embedder for the semantic neighbor channel.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual RowVector embed(const std::vector<std::string>& tokens) const = 0;
  virtual std::string name() const = 0;
};

/// Mean of per-token pseudo-random Gaussian vectors keyed by a hash of the token.
/// Documents sharing many tokens land close together; no pretrained vectors needed.
class HashedEmbedder final : public Embedder {
 public:
  explicit HashedEmbedder(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
    if (dim == 0) throw std::invalid_argument("embedding dim must be >= 1");
  }

  RowVector token_vector(const std::string& token) const {
    Rng rng(fnv1a(token) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
    std::normal_distribution<double> n(0.0, 1.0);
    RowVector v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = n(rng);
    return v;
  }

  RowVector embed(const std::vector<std::string>& tokens) const override {
    RowVector sum = RowVector::Zero(static_cast<Eigen::Index>(dim_));
    std::size_t n = 0;
    for (const auto& t : tokens) {
      if (is_sentinel(t)) continue;
      sum += token_vector(t);
      ++n;
    }
    return n == 0 ? sum : RowVector(sum / static_cast<double>(n));
  }

  std::string name() const override { return "hashed-" + std::to_string(dim_); }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Token-overlap ratio (Jaccard over token sets, sentinel dropped).
inline double lexical_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> x, y;
  for (const auto& t : a) {
    if (!is_sentinel(t)) x.push_back(t);
  }
  for (const auto& t : b) {
    if (!is_sentinel(t)) y.push_back(t);
  }
  if (x.empty() && y.empty()) return 0.0;
  return jaccard(x, y);
}

struct NeighborIndex {
  /// neighbors[a]: ids sharing a's predicted label, at most 2 * per_channel.
  std::vector<std::vector<std::size_t>> neighbors;
  /// Same-label candidates available to each anchor.
  std::vector<std::size_t> candidates;
  std::size_t per_channel = 10;
};

/// Candidates ranked by similarity, descending; ties go to the lower id.
inline std::vector<std::size_t> rank_by(const std::vector<double>& sim, const std::vector<std::size_t>& cand) {
  std::vector<std::size_t> out = cand;
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  return out;
}

/// Per anchor: the top `per_channel` lexical neighbors, then semantic neighbors in order,
/// skipping ones already taken, until 2 * per_channel or the candidates run out.
inline NeighborIndex build_neighbor_index(const std::vector<std::vector<std::string>>& docs, const std::vector<int>& labels,
                                          const Embedder& embedder, std::size_t per_channel = 10) {
  if (docs.size() != labels.size()) throw std::invalid_argument("neighbor index: docs and labels differ in size");
  const std::size_t n = docs.size();
  std::vector<RowVector> emb;
  emb.reserve(n);
  for (const auto& d : docs) emb.push_back(embedder.embed(d));
  NeighborIndex idx;
  idx.per_channel = per_channel;
  idx.neighbors.resize(n);
  idx.candidates.resize(n);
  std::vector<double> lex(n), sem(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || labels[j] != labels[a]) continue;
      cand.push_back(j);
      lex[j] = lexical_similarity(docs[a], docs[j]);
      sem[j] = cosine(emb[a], emb[j]);
    }
    idx.candidates[a] = cand.size();
    const auto by_lex = rank_by(lex, cand), by_sem = rank_by(sem, cand);
    auto& out = idx.neighbors[a];
    std::unordered_set<std::size_t> taken;
    for (std::size_t k = 0; k < by_lex.size() && out.size() < per_channel; ++k) {
      out.push_back(by_lex[k]);
      taken.insert(by_lex[k]);
    }
    for (std::size_t k = 0; k < by_sem.size() && out.size() < 2 * per_channel; ++k) {
      if (taken.insert(by_sem[k]).second) out.push_back(by_sem[k]);
    }
  }
  return idx;
}

}  // namespace aim::metrics
