#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "aim/nn/ops.hpp"

namespace aim::nn {

enum class Activation { kNone, kRelu, kSigmoid, kTanh };

inline Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kNone: break;
  }
  return x;
}

/// Inverted dropout; identity when not training or rate == 0.
inline Var dropout(Var x, double rate, bool training, Rng* rng) {
  if (!training || rate <= 0.0 || rng == nullptr) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = open_unit(*rng) < keep ? 1.0 / keep : 0.0;
  return mask_mul(x, mask);
}

struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  Eigen::Index in = 0, out = 0;

  static Dense create(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
    Dense d;
    d.in = in;
    d.out = out;
    d.weight = ps.add(name + ".weight", glorot(in, out, rng));
    d.bias = ps.add(name + ".bias", Matrix::Zero(1, out));
    return d;
  }

  Var operator()(Graph& g, ParameterSet& ps, Var x) const {
    return add_bias(matmul(x, g.param(ps, weight)), g.param(ps, bias));
  }
};

/// Token embedding with a fixed zero row for the pad id 0.
struct Embedding {
  std::size_t table = 0;
  Eigen::Index vocab = 0, dim = 0;

  static Embedding create(ParameterSet& ps, const std::string& name, Eigen::Index vocab, Eigen::Index dim, Rng& rng) {
    Embedding e;
    e.vocab = vocab;
    e.dim = dim;
    Matrix init = glorot(vocab, dim, rng);
    init.row(0).setZero();
    e.table = ps.add(name + ".table", std::move(init));
    return e;
  }

  Var operator()(Graph& g, ParameterSet& ps, std::vector<int> ids) const {
    return gather_rows(g.param(ps, table), std::move(ids), 0);
  }
};

/// Unidirectional LSTM over a time-major sequence. Returns hidden states in the same layout.
struct Lstm {
  std::size_t w_input = 0, w_hidden = 0, bias = 0;
  Eigen::Index in = 0, hidden = 0;

  static Lstm create(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
    Lstm l;
    l.in = in;
    l.hidden = hidden;
    l.w_input = ps.add(name + ".w_input", glorot(in, 4 * hidden, rng));
    l.w_hidden = ps.add(name + ".w_hidden", glorot(hidden, 4 * hidden, rng));
    Matrix b = Matrix::Zero(1, 4 * hidden);
    b.middleCols(hidden, hidden).setOnes();  // forget-gate bias
    l.bias = ps.add(name + ".bias", std::move(b));
    return l;
  }

  Var operator()(Graph& g, ParameterSet& ps, Var x, Eigen::Index steps, Eigen::Index batch, bool reverse) const {
    Var wi = g.param(ps, w_input);
    Var wh = g.param(ps, w_hidden);
    Var b = g.param(ps, bias);
    // Input projection for all steps at once.
    Var proj = add_bias(matmul(x, wi), b);
    Var h = g.constant(Matrix::Zero(batch, hidden));
    Var c = g.constant(Matrix::Zero(batch, hidden));
    std::vector<Var> outputs(static_cast<std::size_t>(steps));
    for (Eigen::Index s = 0; s < steps; ++s) {
      const Eigen::Index t = reverse ? steps - 1 - s : s;
      Var gates = add(slice_rows(proj, t * batch, batch), matmul(h, wh));
      Var i = sigmoid(slice_cols(gates, 0, hidden));
      Var f = sigmoid(slice_cols(gates, hidden, hidden));
      Var cand = tanh(slice_cols(gates, 2 * hidden, hidden));
      Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
      c = add(cmul(f, c), cmul(i, cand));
      h = cmul(o, tanh(c));
      outputs[static_cast<std::size_t>(t)] = h;
    }
    return concat_rows(outputs);
  }
};

/// Unidirectional GRU over a time-major sequence.
struct Gru {
  std::size_t w_input = 0, w_hidden = 0, bias_input = 0, bias_hidden = 0;
  Eigen::Index in = 0, hidden = 0;

  static Gru create(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
    Gru r;
    r.in = in;
    r.hidden = hidden;
    r.w_input = ps.add(name + ".w_input", glorot(in, 3 * hidden, rng));
    r.w_hidden = ps.add(name + ".w_hidden", glorot(hidden, 3 * hidden, rng));
    r.bias_input = ps.add(name + ".bias_input", Matrix::Zero(1, 3 * hidden));
    r.bias_hidden = ps.add(name + ".bias_hidden", Matrix::Zero(1, 3 * hidden));
    return r;
  }

  Var operator()(Graph& g, ParameterSet& ps, Var x, Eigen::Index steps, Eigen::Index batch, bool reverse) const {
    Var wi = g.param(ps, w_input);
    Var wh = g.param(ps, w_hidden);
    Var bh = g.param(ps, bias_hidden);
    Var proj = add_bias(matmul(x, wi), g.param(ps, bias_input));
    Var h = g.constant(Matrix::Zero(batch, hidden));
    std::vector<Var> outputs(static_cast<std::size_t>(steps));
    for (Eigen::Index s = 0; s < steps; ++s) {
      const Eigen::Index t = reverse ? steps - 1 - s : s;
      Var xp = slice_rows(proj, t * batch, batch);
      Var hp = add_bias(matmul(h, wh), bh);
      Var r = sigmoid(add(slice_cols(xp, 0, hidden), slice_cols(hp, 0, hidden)));
      Var z = sigmoid(add(slice_cols(xp, hidden, hidden), slice_cols(hp, hidden, hidden)));
      Var n = tanh(add(slice_cols(xp, 2 * hidden, hidden), cmul(r, slice_cols(hp, 2 * hidden, hidden))));
      // h' = (1 - z) * n + z * h
      h = add(cmul(affine(z, -1.0, 1.0), n), cmul(z, h));
      outputs[static_cast<std::size_t>(t)] = h;
    }
    return concat_rows(outputs);
  }
};

/// 1-D convolution along time with odd kernel width and same padding.
struct Conv1d {
  Dense proj;
  int kernel = 3;

  static Conv1d create(ParameterSet& ps, const std::string& name, Eigen::Index in, Eigen::Index filters, int kernel,
                       Rng& rng) {
    Conv1d c;
    c.kernel = kernel;
    c.proj = Dense::create(ps, name, in * kernel, filters, rng);
    return c;
  }

  Var operator()(Graph& g, ParameterSet& ps, Var x, Eigen::Index steps, Eigen::Index batch) const {
    const int half = kernel / 2;
    Var stacked = shift_time(x, -half, steps, batch);
    for (int off = -half + 1; off <= half; ++off) stacked = concat_cols(stacked, shift_time(x, off, steps, batch));
    return proj(g, ps, stacked);
  }
};

}  // namespace aim::nn
