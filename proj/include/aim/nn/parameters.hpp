#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/nn/tensor.hpp"

namespace aim::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Named, ordered collection of trainable matrices. Layers refer to entries by index
/// so that networks stay copyable value types.
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix init) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Matrix grad = Matrix::Zero(init.rows(), init.cols());
    params_.push_back({std::move(name), std::move(init), std::move(grad)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) s += p.grad.squaredNorm();
    return std::sqrt(s);
  }

  void scale_grad(double c) {
    for (auto& p : params_) p.grad *= c;
  }

  bool all_finite() const {
    for (const auto& p : params_) {
      if (!p.value.allFinite()) return false;
    }
    return true;
  }

  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& p : params_) {
      h.update(p.name);
      const auto rows = static_cast<std::int64_t>(p.value.rows());
      const auto cols = static_cast<std::int64_t>(p.value.cols());
      h.update_pod(rows);
      h.update_pod(cols);
      h.update(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()));
    }
    return h.digest();
  }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : params_) {
      std::vector<double> flat(p.value.data(), p.value.data() + p.value.size());
      out.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", flat}});
    }
    return out;
  }

  /// Loads values into an already-constructed set; names and shapes must match.
  void load_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != params_.size()) {
      throw std::runtime_error("parameter count mismatch in checkpoint");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const auto& e = j[i];
      if (e.at("name").get<std::string>() != p.name || e.at("rows").get<Eigen::Index>() != p.value.rows() ||
          e.at("cols").get<Eigen::Index>() != p.value.cols()) {
        throw std::runtime_error("parameter layout mismatch in checkpoint at " + p.name);
      }
      const auto flat = e.at("data").get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(p.value.size())) {
        throw std::runtime_error("parameter size mismatch in checkpoint at " + p.name);
      }
      std::copy(flat.begin(), flat.end(), p.value.data());
    }
  }

 private:
  std::vector<Parameter> params_;
};

/// Glorot-uniform initialisation.
inline Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0 * open_unit(rng) - 1.0) * a;
  return m;
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParameterSet& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= opts_.learning_rate * (m_[i].array() / bc1) /
                         ((v_[i].array() / bc2).sqrt() + opts_.epsilon);
    }
  }

  long steps() const { return t_; }

 private:
  AdamOptions opts_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace aim::nn
