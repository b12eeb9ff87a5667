#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/nn/graph.hpp"

// Differentiable ops over Graph. Sequence tensors use a time-major flat layout:
// row (t * batch + b) holds step t of batch item b.

namespace aim::nn {

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}
inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require(a.cols() == b.rows(), "matmul");
  Graph& g = *a.graph;
  Matrix out = a.value() * b.value();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) g.accumulate(a, d * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * d);
  });
}

inline Var add(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix out = a.value() + b.value();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& d) {
    g.accumulate(a, d);
    g.accumulate(b, d);
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Matrix out = a.value() - b.value();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& d) {
    g.accumulate(a, d);
    g.accumulate(b, -d);
  });
}

/// a + bias, bias is 1 x cols broadcast over rows.
inline Var add_bias(Var a, Var bias) {
  detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias");
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return a.graph->record(std::move(out), {a, bias}, [a, bias](Graph& g, const Matrix& d) {
    g.accumulate(a, d);
    if (g.requires_grad(bias)) g.accumulate(bias, d.colwise().sum());
  });
}

inline Var cmul(Var a, Var b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) g.accumulate(a, d.cwiseProduct(g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, d.cwiseProduct(g.value(a)));
  });
}

/// scale * a + shift, elementwise.
inline Var affine(Var a, double scale, double shift = 0.0) {
  Matrix out = (a.value().array() * scale + shift).matrix();
  return a.graph->record(std::move(out), {a}, [a, scale](Graph& g, const Matrix& d) { g.accumulate(a, d * scale); });
}

inline Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Matrix& d) {
    const Matrix& x = g.value(a);
    g.accumulate(a, (x.array() > 0.0).select(d, 0.0).matrix());
  });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return detail::stable_sigmoid(x); });
  const Var y{a.graph, a.graph->next_id()};
  return a.graph->record(std::move(out), {a}, [a, y](Graph& g, const Matrix& d) {
    const Matrix& s = g.value(y);
    g.accumulate(a, d.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

inline Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  const Var y{a.graph, a.graph->next_id()};
  return a.graph->record(std::move(out), {a}, [a, y](Graph& g, const Matrix& d) {
    const Matrix& t = g.value(y);
    g.accumulate(a, d.cwiseProduct((1.0 - t.array().square()).matrix()));
  });
}

/// Elementwise clamp; gradient passes only where the input is inside [lo, hi].
inline Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.graph->record(std::move(out), {a}, [a, lo, hi](Graph& g, const Matrix& d) {
    const Matrix& x = g.value(a);
    g.accumulate(a, ((x.array() >= lo) && (x.array() <= hi)).select(d, 0.0).matrix());
  });
}

/// Multiply a by a constant (non-differentiable) matrix, e.g. a dropout mask.
inline Var mask_mul(Var a, const Matrix& mask) {
  detail::require(a.rows() == mask.rows() && a.cols() == mask.cols(), "mask_mul");
  Matrix out = a.value().cwiseProduct(mask);
  return a.graph->record(std::move(out), {a}, [a, mask](Graph& g, const Matrix& d) { g.accumulate(a, d.cwiseProduct(mask)); });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.rows(), "slice_rows");
  Matrix out = a.value().middleRows(start, count);
  return a.graph->record(std::move(out), {a}, [a, start, count](Graph& g, const Matrix& d) {
    g.accumulate_with(a, [&](Matrix& ga) { ga.middleRows(start, count) += d; });
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && start + count <= a.cols(), "slice_cols");
  Matrix out = a.value().middleCols(start, count);
  return a.graph->record(std::move(out), {a}, [a, start, count](Graph& g, const Matrix& d) {
    g.accumulate_with(a, [&](Matrix& ga) { ga.middleCols(start, count) += d; });
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Graph& gr = *parts.front().graph;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return gr.record_many(std::move(out), parts, [parts](Graph& g, const Matrix& d) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      const Eigen::Index n = g.value(p).rows();
      if (g.requires_grad(p)) g.accumulate(p, d.middleRows(r, n));
      r += n;
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  detail::require(a.rows() == b.rows(), "concat_cols");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  return a.graph->record(std::move(out), {a, b}, [a, b, ca](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) g.accumulate(a, d.leftCols(ca));
    if (g.requires_grad(b)) g.accumulate(b, d.rightCols(d.cols() - ca));
  });
}

/// Multiplies row i of a by s(i, 0).
inline Var scale_rows(Var a, Var s) {
  detail::require(s.cols() == 1 && s.rows() == a.rows(), "scale_rows");
  Matrix out = a.value().array().colwise() * s.value().col(0).array();
  return a.graph->record(std::move(out), {a, s}, [a, s](Graph& g, const Matrix& d) {
    if (g.requires_grad(a)) {
      Matrix ga = d.array().colwise() * g.value(s).col(0).array();
      g.accumulate(a, ga);
    }
    if (g.requires_grad(s)) g.accumulate(s, d.cwiseProduct(g.value(a)).rowwise().sum());
  });
}

/// Row gather from an embedding table. Ids equal to `pad_id` yield a zero row and no gradient.
inline Var gather_rows(Var table, std::vector<int> ids, int pad_id = 0) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= t.rows()) throw std::out_of_range("embedding id out of range");
    if (id == pad_id) {
      out.row(static_cast<Eigen::Index>(i)).setZero();
    } else {
      out.row(static_cast<Eigen::Index>(i)) = t.row(id);
    }
  }
  return table.graph->record(std::move(out), {table}, [table, ids = std::move(ids), pad_id](Graph& g, const Matrix& d) {
    g.accumulate_with(table, [&](Matrix& gt) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != pad_id) gt.row(ids[i]) += d.row(static_cast<Eigen::Index>(i));
      }
    });
  });
}

/// Time shift on a time-major sequence: out(t) = a(t + offset), zero outside [0, steps).
inline Var shift_time(Var a, int offset, Eigen::Index steps, Eigen::Index batch) {
  detail::require(a.rows() == steps * batch, "shift_time");
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Eigen::Index src = t + offset;
    if (src < 0 || src >= steps) continue;
    out.middleRows(t * batch, batch) = a.value().middleRows(src * batch, batch);
  }
  return a.graph->record(std::move(out), {a}, [a, offset, steps, batch](Graph& g, const Matrix& d) {
    g.accumulate_with(a, [&](Matrix& ga) {
      for (Eigen::Index t = 0; t < steps; ++t) {
        const Eigen::Index src = t + offset;
        if (src < 0 || src >= steps) continue;
        ga.middleRows(src * batch, batch) += d.middleRows(t * batch, batch);
      }
    });
  });
}

/// Sum over time: (steps*batch) x n -> batch x n.
inline Var seq_sum(Var a, Eigen::Index steps, Eigen::Index batch) {
  detail::require(a.rows() == steps * batch, "seq_sum");
  Matrix out = Matrix::Zero(batch, a.cols());
  for (Eigen::Index t = 0; t < steps; ++t) out += a.value().middleRows(t * batch, batch);
  return a.graph->record(std::move(out), {a}, [a, steps, batch](Graph& g, const Matrix& d) {
    g.accumulate_with(a, [&](Matrix& ga) {
      for (Eigen::Index t = 0; t < steps; ++t) ga.middleRows(t * batch, batch) += d;
    });
  });
}

/// Repeat a batch x n matrix across `steps` time steps.
inline Var seq_broadcast(Var a, Eigen::Index steps) {
  const Eigen::Index batch = a.rows();
  Matrix out(steps * batch, a.cols());
  for (Eigen::Index t = 0; t < steps; ++t) out.middleRows(t * batch, batch) = a.value();
  return a.graph->record(std::move(out), {a}, [a, steps, batch](Graph& g, const Matrix& d) {
    Matrix ga = Matrix::Zero(batch, d.cols());
    for (Eigen::Index t = 0; t < steps; ++t) ga += d.middleRows(t * batch, batch);
    g.accumulate(a, ga);
  });
}

/// Max over time per batch item and column; ties go to the earliest step.
inline Var seq_max(Var a, Eigen::Index steps, Eigen::Index batch) {
  detail::require(a.rows() == steps * batch && steps > 0, "seq_max");
  const Matrix& x = a.value();
  Matrix out = x.topRows(batch);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(batch * x.cols()), 0);
  for (Eigen::Index t = 1; t < steps; ++t) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double v = x(t * batch + b, c);
        if (v > out(b, c)) {
          out(b, c) = v;
          arg[static_cast<std::size_t>(b * x.cols() + c)] = t;
        }
      }
    }
  }
  return a.graph->record(std::move(out), {a}, [a, batch, arg = std::move(arg)](Graph& g, const Matrix& d) {
    g.accumulate_with(a, [&](Matrix& ga) {
      for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index c = 0; c < d.cols(); ++c) {
          ga(arg[static_cast<std::size_t>(b * d.cols() + c)] * batch + b, c) += d(b, c);
        }
      }
    });
  });
}

inline Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Matrix& d) {
    g.accumulate(a, Matrix::Constant(g.value(a).rows(), g.value(a).cols(), d(0, 0)));
  });
}

/// Sum of Euclidean norms of the rows; zero rows take the zero subgradient.
inline Var row_norm_sum(Var a) {
  const Matrix& x = a.value();
  ColVector norms = x.rowwise().norm();
  Matrix out(1, 1);
  out(0, 0) = norms.sum();
  return a.graph->record(std::move(out), {a}, [a, norms](Graph& g, const Matrix& d) {
    const Matrix& x = g.value(a);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (norms(i) > 0.0) ga.row(i) = x.row(i) / norms(i) * d(0, 0);
    }
    g.accumulate(a, ga);
  });
}

/// Row-wise softmax values (no graph).
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    RowVector e = (logits.row(i).array() - m).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

/// Mean over rows of -log softmax(logits)[label]. Throws on non-finite logits.
inline Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
  const Matrix& z = logits.value();
  detail::require(static_cast<std::size_t>(z.rows()) == labels.size() && z.rows() > 0, "softmax_cross_entropy");
  if (!z.allFinite()) throw std::domain_error("non-finite logits in cross-entropy");
  Matrix p = softmax_rows(z);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= z.cols()) throw std::out_of_range("label out of range");
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    loss += lse - z(i, y);
  }
  const double n = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  return logits.graph->record(std::move(out), {logits},
                              [logits, labels = std::move(labels), p = std::move(p), n](Graph& g, const Matrix& d) {
                                Matrix gz = p;
                                for (Eigen::Index i = 0; i < gz.rows(); ++i) gz(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
                                g.accumulate(logits, gz * (d(0, 0) / n));
                              });
}

/// Binary Concrete relaxation with explicit Gumbel noise:
/// z = exp((log p + g1)/tau) / (exp((log(1-p) + g0)/tau) + exp((log p + g1)/tau)).
/// Output is clamped to [eps, 1-eps] so it stays strictly inside (0, 1).
inline Var concrete(Var probs, Matrix gumbel_one, Matrix gumbel_zero, double tau, double eps = 1e-12) {
  const Matrix& p = probs.value();
  detail::require(gumbel_one.rows() == p.rows() && gumbel_one.cols() == p.cols() &&
                      gumbel_zero.rows() == p.rows() && gumbel_zero.cols() == p.cols(),
                  "concrete");
  Matrix out(p.rows(), p.cols());
  Matrix raw(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.data()[i];
    const double logit = (std::log(pi) + gumbel_one.data()[i] - std::log1p(-pi) - gumbel_zero.data()[i]) / tau;
    raw.data()[i] = detail::stable_sigmoid(logit);
    out.data()[i] = std::clamp(raw.data()[i], eps, 1.0 - eps);
  }
  return probs.graph->record(std::move(out), {probs}, [probs, raw = std::move(raw), tau, eps](Graph& g, const Matrix& d) {
    const Matrix& p = g.value(probs);
    Matrix gp(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double z = raw.data()[i];
      const double pi = p.data()[i];
      const bool inside = z >= eps && z <= 1.0 - eps;
      gp.data()[i] = inside ? d.data()[i] * z * (1.0 - z) / tau * (1.0 / pi + 1.0 / (1.0 - pi)) : 0.0;
    }
    g.accumulate(probs, gp);
  });
}

/// Valid 2-D convolution. Input rows are images laid out channel-major (c, h, w);
/// weight is out_channels x (in_channels * k * k); bias is 1 x out_channels.
struct Conv2dShape {
  Eigen::Index in_channels, height, width, kernel, out_channels;
  Eigen::Index out_height() const { return height - kernel + 1; }
  Eigen::Index out_width() const { return width - kernel + 1; }
};

inline Var conv2d(Var input, Var weight, Var bias, Conv2dShape s) {
  const Matrix& x = input.value();
  const Matrix& w = weight.value();
  const Matrix& bv = bias.value();
  detail::require(x.cols() == s.in_channels * s.height * s.width, "conv2d input");
  detail::require(w.rows() == s.out_channels && w.cols() == s.in_channels * s.kernel * s.kernel, "conv2d weight");
  detail::require(bv.rows() == 1 && bv.cols() == s.out_channels, "conv2d bias");
  const Eigen::Index oh = s.out_height(), ow = s.out_width(), k = s.kernel;
  const Eigen::Index patch = s.in_channels * k * k;
  // im2col per image: (oh*ow) x patch.
  auto im2col = [s, oh, ow, k, patch](const Matrix& x, Eigen::Index b) {
    Matrix cols(oh * ow, patch);
    for (Eigen::Index oy = 0; oy < oh; ++oy) {
      for (Eigen::Index ox = 0; ox < ow; ++ox) {
        Eigen::Index c = 0;
        for (Eigen::Index ic = 0; ic < s.in_channels; ++ic) {
          for (Eigen::Index ky = 0; ky < k; ++ky) {
            for (Eigen::Index kx = 0; kx < k; ++kx) {
              cols(oy * ow + ox, c++) = x(b, (ic * s.height + oy + ky) * s.width + ox + kx);
            }
          }
        }
      }
    }
    return cols;
  };
  Matrix out(x.rows(), s.out_channels * oh * ow);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    Matrix res = im2col(x, b) * w.transpose();  // (oh*ow) x out_channels
    res.rowwise() += bv.row(0);
    for (Eigen::Index oc = 0; oc < s.out_channels; ++oc) {
      for (Eigen::Index p = 0; p < oh * ow; ++p) out(b, oc * oh * ow + p) = res(p, oc);
    }
  }
  return input.graph->record(std::move(out), {input, weight, bias},
                             [input, weight, bias, s, oh, ow, k, patch, im2col](Graph& g, const Matrix& d) {
                               const Matrix& x = g.value(input);
                               const Matrix& w = g.value(weight);
                               Matrix gw = Matrix::Zero(w.rows(), w.cols());
                               Matrix gb = Matrix::Zero(1, s.out_channels);
                               Matrix gx = Matrix::Zero(x.rows(), x.cols());
                               for (Eigen::Index b = 0; b < x.rows(); ++b) {
                                 Matrix dres(oh * ow, s.out_channels);
                                 for (Eigen::Index oc = 0; oc < s.out_channels; ++oc) {
                                   for (Eigen::Index p = 0; p < oh * ow; ++p) dres(p, oc) = d(b, oc * oh * ow + p);
                                 }
                                 gb += dres.colwise().sum();
                                 if (g.requires_grad(weight)) gw += dres.transpose() * im2col(x, b);
                                 if (g.requires_grad(input)) {
                                   Matrix dcols = dres * w;  // (oh*ow) x patch
                                   for (Eigen::Index oy = 0; oy < oh; ++oy) {
                                     for (Eigen::Index ox = 0; ox < ow; ++ox) {
                                       Eigen::Index c = 0;
                                       for (Eigen::Index ic = 0; ic < s.in_channels; ++ic) {
                                         for (Eigen::Index ky = 0; ky < k; ++ky) {
                                           for (Eigen::Index kx = 0; kx < k; ++kx) {
                                             gx(b, (ic * s.height + oy + ky) * s.width + ox + kx) += dcols(oy * ow + ox, c++);
                                           }
                                         }
                                       }
                                     }
                                   }
                                 }
                               }
                               (void)patch;
                               g.accumulate(weight, gw);
                               g.accumulate(bias, gb);
                               g.accumulate(input, gx);
                             });
}

/// 2x2 max pooling with stride 2 over channel-major rows; odd trailing rows/cols are dropped.
inline Var max_pool2(Var input, Eigen::Index channels, Eigen::Index height, Eigen::Index width) {
  const Matrix& x = input.value();
  detail::require(x.cols() == channels * height * width, "max_pool2");
  const Eigen::Index ph = height / 2, pw = width / 2;
  Matrix out(x.rows(), channels * ph * pw);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(out.size()));
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (Eigen::Index y = 0; y < ph; ++y) {
        for (Eigen::Index xx = 0; xx < pw; ++xx) {
          Eigen::Index best = (c * height + 2 * y) * width + 2 * xx;
          for (Eigen::Index dy = 0; dy < 2; ++dy) {
            for (Eigen::Index dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx = (c * height + 2 * y + dy) * width + 2 * xx + dx;
              if (x(b, idx) > x(b, best)) best = idx;
            }
          }
          const Eigen::Index o = (c * ph + y) * pw + xx;
          out(b, o) = x(b, best);
          arg[static_cast<std::size_t>(b * out.cols() + o)] = best;
        }
      }
    }
  }
  const Eigen::Index out_cols = out.cols();
  return input.graph->record(std::move(out), {input}, [input, arg = std::move(arg), out_cols](Graph& g, const Matrix& d) {
    g.accumulate_with(input, [&](Matrix& gx) {
      for (Eigen::Index b = 0; b < d.rows(); ++b) {
        for (Eigen::Index o = 0; o < out_cols; ++o) gx(b, arg[static_cast<std::size_t>(b * out_cols + o)]) += d(b, o);
      }
    });
  });
}

}  // namespace aim::nn
