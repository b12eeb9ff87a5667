#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/core/config.hpp"
#include "aim/data/feature_space.hpp"
#include "aim/nn/layers.hpp"

// The three networks. Every network reads a batch as a time-major slot sequence:
// row (t * B + b) is slot t of item b.

namespace aim::core {

using data::FeatureSpace;
using data::FeatureVector;
using nn::Graph;
using nn::ParameterSet;
using nn::Var;

/// Per-slot input representation. Text slots use a token embedding (sentinel -> zero
/// vector); dense slots use a linear projection of the slot values plus a learned
/// per-slot vector, so columns and patches keep their identity.
struct SlotEncoder {
  bool text = true;
  nn::Embedding embed;
  nn::Dense proj;
  std::size_t position = 0;
  Eigen::Index d = 0, dim = 0;

  static SlotEncoder create(ParameterSet& ps, const std::string& name, const FeatureSpace& space, Eigen::Index dim,
                            Rng& rng) {
    SlotEncoder e;
    e.text = space.modality == data::Modality::kText;
    e.d = static_cast<Eigen::Index>(space.d);
    e.dim = dim;
    if (e.text) {
      e.embed = nn::Embedding::create(ps, name + ".embed", static_cast<Eigen::Index>(space.vocab_size()), dim, rng);
    } else {
      e.proj = nn::Dense::create(ps, name + ".proj", static_cast<Eigen::Index>(space.slot_width), dim, rng);
      e.position = ps.add(name + ".position", nn::glorot(e.d, dim, rng));
    }
    return e;
  }

  Var operator()(Graph& g, ParameterSet& ps, const std::vector<FeatureVector>& xs) const {
    const auto batch = xs.size();
    for (const auto& x : xs) {
      if (static_cast<Eigen::Index>(x.size()) != d || x.is_text() != text) {
        throw std::invalid_argument("input does not match the explainer's feature space");
      }
    }
    if (text) {
      std::vector<int> ids(batch * static_cast<std::size_t>(d));
      for (std::size_t b = 0; b < batch; ++b) {
        for (Eigen::Index t = 0; t < d; ++t) ids[static_cast<std::size_t>(t) * batch + b] = xs[b].tokens[static_cast<std::size_t>(t)];
      }
      return embed(g, ps, std::move(ids));
    }
    const Eigen::Index w = xs.front().values.cols();
    Matrix values(d * static_cast<Eigen::Index>(batch), w);
    std::vector<int> slots(batch * static_cast<std::size_t>(d));
    for (std::size_t b = 0; b < batch; ++b) {
      for (Eigen::Index t = 0; t < d; ++t) {
        const Eigen::Index row = t * static_cast<Eigen::Index>(batch) + static_cast<Eigen::Index>(b);
        values.row(row) = xs[b].values.row(t);
        slots[static_cast<std::size_t>(row)] = static_cast<int>(t);
      }
    }
    Var pos = nn::gather_rows(g.param(ps, position), std::move(slots), -1);
    return nn::add(proj(g, ps, g.constant(std::move(values))), pos);
  }
};

/// Time-major validity column for a batch.
inline Matrix validity_column(const std::vector<FeatureVector>& xs) {
  const std::size_t batch = xs.size(), d = xs.empty() ? 0 : xs.front().size();
  Matrix v(static_cast<Eigen::Index>(batch * d), 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < d; ++t) v(static_cast<Eigen::Index>(t * batch + b), 0) = xs[b].valid[t] ? 1.0 : 0.0;
  }
  return v;
}

/// Converts a time-major (d*B) x 1 column to B x d.
inline Matrix to_batch_major(const Matrix& col, std::size_t batch, std::size_t d) {
  Matrix out(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < d; ++t) {
    for (std::size_t b = 0; b < batch; ++b) out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) = col(static_cast<Eigen::Index>(t * batch + b), 0);
  }
  return out;
}

inline Matrix to_time_major(const Matrix& m) {
  const Eigen::Index batch = m.rows(), d = m.cols();
  Matrix out(batch * d, 1);
  for (Eigen::Index t = 0; t < d; ++t) {
    for (Eigen::Index b = 0; b < batch; ++b) out(t * batch + b, 0) = m(b, t);
  }
  return out;
}

/// E: slot embeddings -> three dense layers -> ReLU, one row of C weights per slot.
struct Explainer {
  /// Initial output bias; keeps the final ReLU units alive early in training.
  static constexpr double kOutputBias = 0.1;
  ParameterSet params;
  SlotEncoder encoder;
  nn::Dense l1, l2, out;
  int classes = 2;

  Explainer() = default;
  Explainer(const FeatureSpace& space, int num_classes, const NetworkConfig& cfg, Rng& rng) : classes(num_classes) {
    const auto e = static_cast<Eigen::Index>(cfg.embed), h = static_cast<Eigen::Index>(cfg.explainer_hidden);
    encoder = SlotEncoder::create(params, "explainer", space, e, rng);
    l1 = nn::Dense::create(params, "explainer.l1", e, h, rng);
    l2 = nn::Dense::create(params, "explainer.l2", h, h, rng);
    out = nn::Dense::create(params, "explainer.out", h, num_classes, rng);
    params[out.bias].value.setConstant(kOutputBias);
  }

  /// (d*B) x C time-major weights.
  Var operator()(Graph& g, const std::vector<FeatureVector>& xs) {
    Var h = encoder(g, params, xs);
    h = nn::relu(l1(g, params, h));
    h = nn::relu(l2(g, params, h));
    return nn::relu(out(g, params, h));
  }
};

/// S: slot embeddings -> bidirectional LSTM -> three dense layers (dropout before each),
/// ReLU, ReLU, sigmoid; probabilities clamped to [eps, 1 - eps].
struct Selector {
  static constexpr double kEps = 1e-6;
  ParameterSet params;
  SlotEncoder encoder;
  nn::Lstm fwd, bwd;
  nn::Dense l1, l2, out;
  double dropout = 0.0;

  Selector() = default;
  Selector(const FeatureSpace& space, const NetworkConfig& cfg, Rng& rng) : dropout(cfg.dropout) {
    const auto e = static_cast<Eigen::Index>(cfg.embed), h = static_cast<Eigen::Index>(cfg.selector_lstm),
               k = static_cast<Eigen::Index>(cfg.selector_hidden);
    encoder = SlotEncoder::create(params, "selector", space, e, rng);
    fwd = nn::Lstm::create(params, "selector.lstm_fwd", e, h, rng);
    bwd = nn::Lstm::create(params, "selector.lstm_bwd", e, h, rng);
    l1 = nn::Dense::create(params, "selector.l1", 2 * h, k, rng);
    l2 = nn::Dense::create(params, "selector.l2", k, k, rng);
    out = nn::Dense::create(params, "selector.out", k, 1, rng);
  }

  /// (d*B) x 1 time-major probabilities.
  Var operator()(Graph& g, const std::vector<FeatureVector>& xs, bool training, Rng* rng) {
    const auto batch = static_cast<Eigen::Index>(xs.size());
    const auto steps = static_cast<Eigen::Index>(xs.empty() ? 0 : xs.front().size());
    Var x = encoder(g, params, xs);
    Var h = nn::concat_cols(fwd(g, params, x, steps, batch, false), bwd(g, params, x, steps, batch, true));
    h = nn::relu(l1(g, params, nn::dropout(h, dropout, training, rng)));
    h = nn::relu(l2(g, params, nn::dropout(h, dropout, training, rng)));
    Var p = nn::sigmoid(out(g, params, nn::dropout(h, dropout, training, rng)));
    return nn::clamp(p, kEps, 1.0 - kEps);
  }
};

/// G: own slot embeddings scaled by the relaxed mask -> conv (k=3) -> ReLU -> max over
/// slots -> dense -> ReLU -> dense; returns logits (softmax is applied by the loss).
struct Approximator {
  ParameterSet params;
  SlotEncoder encoder;
  nn::Conv1d conv;
  nn::Dense hidden, out;

  Approximator() = default;
  Approximator(const FeatureSpace& space, int num_classes, const NetworkConfig& cfg, Rng& rng) {
    const auto e = static_cast<Eigen::Index>(cfg.embed), f = static_cast<Eigen::Index>(cfg.approx_filters),
               h = static_cast<Eigen::Index>(cfg.approx_hidden);
    encoder = SlotEncoder::create(params, "approximator", space, e, rng);
    conv = nn::Conv1d::create(params, "approximator.conv", e, f, 3, rng);
    hidden = nn::Dense::create(params, "approximator.hidden", f, h, rng);
    out = nn::Dense::create(params, "approximator.out", h, num_classes, rng);
  }

  /// `mask` is the (d*B) x 1 time-major relaxed mask.
  Var operator()(Graph& g, const std::vector<FeatureVector>& xs, Var mask) {
    const auto batch = static_cast<Eigen::Index>(xs.size());
    const auto steps = static_cast<Eigen::Index>(xs.empty() ? 0 : xs.front().size());
    Var x = nn::scale_rows(encoder(g, params, xs), mask);
    Var c = nn::relu(conv(g, params, x, steps, batch));
    Var pooled = nn::seq_max(c, steps, batch);
    return out(g, params, nn::relu(hidden(g, params, pooled)));
  }
};

}  // namespace aim::core
