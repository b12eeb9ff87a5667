#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/blackbox/blackbox.hpp"
#include "aim/data/dataset.hpp"
#include "aim/data/image.hpp"
#include "aim/nn/layers.hpp"

namespace aim::blackbox {

struct BlackBoxConfig {
  /// rule | gru | cnn | image-conv | mlp
  std::string arch = "rule";
  std::size_t embed = 32;
  std::size_t hidden = 32;
  std::size_t filters = 32;
  std::size_t epochs = 5;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double temperature = 1.0;
};

inline void to_json(nlohmann::json& j, const BlackBoxConfig& c) {
  j = {{"arch", c.arch},       {"embed", c.embed}, {"hidden", c.hidden}, {"filters", c.filters}, {"epochs", c.epochs},
       {"batch", c.batch},     {"lr", c.lr},       {"seed", c.seed},     {"temperature", c.temperature}};
}

inline void from_json(const nlohmann::json& j, BlackBoxConfig& c) {
  static const std::array<const char*, 9> kKeys = {"arch", "embed", "hidden", "filters",    "epochs",
                                                   "batch", "lr",   "seed",   "temperature"};
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(kKeys.begin(), kKeys.end(), [&](const char* s) { return k == s; }) == kKeys.end()) {
      throw std::invalid_argument("blackbox: unknown key '" + k + "'");
    }
  }
  BlackBoxConfig d;
  c.arch = j.value("arch", d.arch);
  c.embed = j.value("embed", d.embed);
  c.hidden = j.value("hidden", d.hidden);
  c.filters = j.value("filters", d.filters);
  c.epochs = j.value("epochs", d.epochs);
  c.batch = j.value("batch", d.batch);
  c.lr = j.value("lr", d.lr);
  c.seed = j.value("seed", d.seed);
  c.temperature = j.value("temperature", d.temperature);
  if (c.batch == 0) throw std::invalid_argument("blackbox.batch must be >= 1");
  if (!(c.lr > 0.0)) throw std::invalid_argument("blackbox.lr must be > 0");
  if (c.embed == 0 || c.hidden == 0 || c.filters == 0) throw std::invalid_argument("blackbox widths must be >= 1");
  if (c.embed > 128 || c.hidden > 128 || c.filters > 128) throw std::invalid_argument("blackbox widths are capped at 128");
}

/// Trainable classifier built from nn layers. Subclasses define the forward pass.
class NetBlackBox : public BlackBox {
 public:
  NetBlackBox(const FeatureSpace& space, int num_classes, BlackBoxConfig cfg)
      : space_(space), classes_(num_classes), cfg_(std::move(cfg)), hash_(space.hash()) {}

  int num_classes() const override { return classes_; }
  Modality modality() const override { return space_.modality; }
  std::size_t expected_d() const override { return space_.d; }
  std::uint64_t space_hash() const override { return hash_; }
  std::string arch() const override { return cfg_.arch; }
  const BlackBoxConfig& config() const { return cfg_; }
  const FeatureSpace& space() const { return space_; }

  std::uint64_t fingerprint() const override {
    Fnv1a h;
    h.update(cfg_.arch);
    h.update_pod(params_.fingerprint());
    h.update_pod(hash_);
    return h.digest();
  }

  nlohmann::json to_json() const override {
    return {{"arch", cfg_.arch}, {"config", cfg_},           {"num_classes", classes_},
            {"d", space_.d},     {"space_hash", to_hex(hash_)}, {"params", params_.to_json()}};
  }

  /// Logits B x C. `scales` (B x d) applies the relaxed slot scaling when non-null.
  virtual nn::Var forward(nn::Graph& g, const std::vector<FeatureVector>& xs, const Matrix* scales, bool training,
                          Rng* rng) = 0;

  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

 protected:
  Matrix proba_impl(const std::vector<FeatureVector>& xs, const Matrix* scales) const override {
    constexpr std::size_t kChunk = 256;
    Matrix out(static_cast<Eigen::Index>(xs.size()), classes_);
    auto* self = const_cast<NetBlackBox*>(this);  // forward() only reads parameters in a non-recording graph
    for (std::size_t s = 0; s < xs.size(); s += kChunk) {
      const std::size_t n = std::min(kChunk, xs.size() - s);
      std::vector<FeatureVector> chunk(xs.begin() + static_cast<std::ptrdiff_t>(s),
                                       xs.begin() + static_cast<std::ptrdiff_t>(s + n));
      Matrix sc;
      if (scales) sc = scales->middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n));
      nn::Graph g(false);
      const nn::Var logits = self->forward(g, chunk, scales ? &sc : nullptr, false, nullptr);
      out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) = nn::softmax_rows(logits.value());
    }
    return out;
  }

  FeatureSpace space_;
  int classes_;
  BlackBoxConfig cfg_;
  std::uint64_t hash_;
  nn::ParameterSet params_;
};

namespace detail {

/// Time-major token ids: entry t*B+b is token t of item b.
inline std::vector<int> time_major_ids(const std::vector<FeatureVector>& xs, std::size_t d) {
  std::vector<int> ids(xs.size() * d);
  for (std::size_t b = 0; b < xs.size(); ++b) {
    for (std::size_t t = 0; t < d; ++t) ids[t * xs.size() + b] = xs[b].tokens[t];
  }
  return ids;
}

/// Time-major column of slot scales matching time_major_ids.
inline Matrix time_major_scales(const Matrix& scales) {
  const Eigen::Index batch = scales.rows(), d = scales.cols();
  Matrix out(batch * d, 1);
  for (Eigen::Index t = 0; t < d; ++t) {
    for (Eigen::Index b = 0; b < batch; ++b) out(t * batch + b, 0) = scales(b, t);
  }
  return out;
}

inline void check_vocab(const std::vector<int>& ids, std::size_t vocab) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw std::invalid_argument("token id outside the vocabulary");
  }
}

}  // namespace detail

/// Embedding -> bidirectional GRU -> [max, mean] over time -> dense.
class TextGru final : public NetBlackBox {
 public:
  TextGru(const FeatureSpace& space, int num_classes, BlackBoxConfig cfg) : NetBlackBox(space, num_classes, std::move(cfg)) {
    Rng rng(cfg_.seed);
    const auto e = static_cast<Eigen::Index>(cfg_.embed), h = static_cast<Eigen::Index>(cfg_.hidden);
    embed_ = nn::Embedding::create(params_, "embed", static_cast<Eigen::Index>(space_.vocab_size()), e, rng);
    fwd_ = nn::Gru::create(params_, "gru_fwd", e, h, rng);
    bwd_ = nn::Gru::create(params_, "gru_bwd", e, h, rng);
    out_ = nn::Dense::create(params_, "out", 4 * h, num_classes, rng);
  }

  nn::Var forward(nn::Graph& g, const std::vector<FeatureVector>& xs, const Matrix* scales, bool, Rng*) override {
    const auto batch = static_cast<Eigen::Index>(xs.size()), steps = static_cast<Eigen::Index>(space_.d);
    auto ids = detail::time_major_ids(xs, space_.d);
    detail::check_vocab(ids, space_.vocab_size());
    nn::Var x = embed_(g, params_, std::move(ids));
    if (scales) x = nn::scale_rows(x, g.constant(detail::time_major_scales(*scales)));
    nn::Var hf = fwd_(g, params_, x, steps, batch, false);
    nn::Var hb = bwd_(g, params_, x, steps, batch, true);
    nn::Var h = nn::concat_cols(hf, hb);
    nn::Var pooled = nn::concat_cols(nn::seq_max(h, steps, batch), nn::affine(nn::seq_sum(h, steps, batch), 1.0 / steps));
    return out_(g, params_, pooled);
  }

 private:
  nn::Embedding embed_;
  nn::Gru fwd_, bwd_;
  nn::Dense out_;
};

/// Embedding -> word-level convolution (k=3) -> ReLU -> [max, mean] over time -> dense -> dense.
class TextCnn final : public NetBlackBox {
 public:
  TextCnn(const FeatureSpace& space, int num_classes, BlackBoxConfig cfg) : NetBlackBox(space, num_classes, std::move(cfg)) {
    Rng rng(cfg_.seed);
    const auto e = static_cast<Eigen::Index>(cfg_.embed), f = static_cast<Eigen::Index>(cfg_.filters);
    embed_ = nn::Embedding::create(params_, "embed", static_cast<Eigen::Index>(space_.vocab_size()), e, rng);
    conv_ = nn::Conv1d::create(params_, "conv", e, f, 3, rng);
    hidden_ = nn::Dense::create(params_, "hidden", 2 * f, static_cast<Eigen::Index>(cfg_.hidden), rng);
    out_ = nn::Dense::create(params_, "out", static_cast<Eigen::Index>(cfg_.hidden), num_classes, rng);
  }

  nn::Var forward(nn::Graph& g, const std::vector<FeatureVector>& xs, const Matrix* scales, bool, Rng*) override {
    const auto batch = static_cast<Eigen::Index>(xs.size()), steps = static_cast<Eigen::Index>(space_.d);
    auto ids = detail::time_major_ids(xs, space_.d);
    detail::check_vocab(ids, space_.vocab_size());
    nn::Var x = embed_(g, params_, std::move(ids));
    if (scales) x = nn::scale_rows(x, g.constant(detail::time_major_scales(*scales)));
    nn::Var c = nn::relu(conv_(g, params_, x, steps, batch));
    nn::Var pooled = nn::concat_cols(nn::seq_max(c, steps, batch), nn::affine(nn::seq_sum(c, steps, batch), 1.0 / steps));
    return out_(g, params_, nn::relu(hidden_(g, params_, pooled)));
  }

 private:
  nn::Embedding embed_;
  nn::Conv1d conv_;
  nn::Dense hidden_, out_;
};

/// Two 5x5 convolutions with 2x2 max pooling, then two dense layers.
class ImageConv final : public NetBlackBox {
 public:
  ImageConv(const FeatureSpace& space, int num_classes, BlackBoxConfig cfg) : NetBlackBox(space, num_classes, std::move(cfg)) {
    if (space_.modality != Modality::kImage) throw std::invalid_argument("image-conv needs an image feature space");
    Rng rng(cfg_.seed);
    const auto h = static_cast<Eigen::Index>(space_.image_height), w = static_cast<Eigen::Index>(space_.image_width);
    c1_ = {1, h, w, 5, kChannels1};
    const Eigen::Index h1 = c1_.out_height() / 2, w1 = c1_.out_width() / 2;
    c2_ = {kChannels1, h1, w1, 5, kChannels2};
    if (c2_.out_height() < 2 || c2_.out_width() < 2) throw std::invalid_argument("image too small for image-conv");
    flat_ = kChannels2 * (c2_.out_height() / 2) * (c2_.out_width() / 2);
    w1_ = params_.add("conv1.weight", nn::glorot(kChannels1, 25, rng));
    b1_ = params_.add("conv1.bias", Matrix::Zero(1, kChannels1));
    w2_ = params_.add("conv2.weight", nn::glorot(kChannels2, kChannels1 * 25, rng));
    b2_ = params_.add("conv2.bias", Matrix::Zero(1, kChannels2));
    hidden_ = nn::Dense::create(params_, "hidden", flat_, static_cast<Eigen::Index>(cfg_.hidden), rng);
    out_ = nn::Dense::create(params_, "out", static_cast<Eigen::Index>(cfg_.hidden), num_classes, rng);
  }

  nn::Var forward(nn::Graph& g, const std::vector<FeatureVector>& xs, const Matrix* scales, bool, Rng*) override {
    Matrix images(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(space_.image_height * space_.image_width));
    for (std::size_t b = 0; b < xs.size(); ++b) {
      data::FeatureVector x = xs[b];
      if (scales) {
        for (Eigen::Index i = 0; i < x.values.rows(); ++i) x.values.row(i) *= (*scales)(static_cast<Eigen::Index>(b), i);
      }
      images.row(static_cast<Eigen::Index>(b)) = data::image_row(x, space_);
    }
    nn::Var x = g.constant(std::move(images));
    x = nn::relu(nn::conv2d(x, g.param(params_, w1_), g.param(params_, b1_), c1_));
    x = nn::max_pool2(x, kChannels1, c1_.out_height(), c1_.out_width());
    x = nn::relu(nn::conv2d(x, g.param(params_, w2_), g.param(params_, b2_), c2_));
    x = nn::max_pool2(x, kChannels2, c2_.out_height(), c2_.out_width());
    return out_(g, params_, nn::relu(hidden_(g, params_, x)));
  }

 private:
  static constexpr Eigen::Index kChannels1 = 6, kChannels2 = 12;
  nn::Conv2dShape c1_{}, c2_{};
  Eigen::Index flat_ = 0;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
  nn::Dense hidden_, out_;
};

/// Two hidden ReLU layers over the flattened slot values.
class TabularMlp final : public NetBlackBox {
 public:
  TabularMlp(const FeatureSpace& space, int num_classes, BlackBoxConfig cfg) : NetBlackBox(space, num_classes, std::move(cfg)) {
    Rng rng(cfg_.seed);
    const auto in = static_cast<Eigen::Index>(space_.d * space_.slot_width), h = static_cast<Eigen::Index>(cfg_.hidden);
    l1_ = nn::Dense::create(params_, "l1", in, h, rng);
    l2_ = nn::Dense::create(params_, "l2", h, h, rng);
    out_ = nn::Dense::create(params_, "out", h, num_classes, rng);
  }

  nn::Var forward(nn::Graph& g, const std::vector<FeatureVector>& xs, const Matrix* scales, bool, Rng*) override {
    const auto w = static_cast<Eigen::Index>(space_.slot_width);
    Matrix flat(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(space_.d) * w);
    for (std::size_t b = 0; b < xs.size(); ++b) {
      for (Eigen::Index i = 0; i < xs[b].values.rows(); ++i) {
        const double s = scales ? (*scales)(static_cast<Eigen::Index>(b), i) : 1.0;
        flat.block(static_cast<Eigen::Index>(b), i * w, 1, w) = xs[b].values.row(i) * s;
      }
    }
    nn::Var x = g.constant(std::move(flat));
    x = nn::relu(l1_(g, params_, x));
    x = nn::relu(l2_(g, params_, x));
    return out_(g, params_, x);
  }

 private:
  nn::Dense l1_, l2_, out_;
};

inline std::unique_ptr<NetBlackBox> make_net_blackbox(const FeatureSpace& space, int num_classes,
                                                      const BlackBoxConfig& cfg) {
  const bool text = space.modality == Modality::kText;
  if (cfg.arch == "gru" || cfg.arch == "cnn") {
    if (!text) throw std::invalid_argument(cfg.arch + " black box needs a text feature space");
    if (cfg.arch == "gru") return std::make_unique<TextGru>(space, num_classes, cfg);
    return std::make_unique<TextCnn>(space, num_classes, cfg);
  }
  if (cfg.arch == "image-conv") return std::make_unique<ImageConv>(space, num_classes, cfg);
  if (cfg.arch == "mlp") {
    if (text) throw std::invalid_argument("mlp black box needs an image or tabular feature space");
    return std::make_unique<TabularMlp>(space, num_classes, cfg);
  }
  throw std::invalid_argument("unknown black-box arch: " + cfg.arch);
}

struct BlackBoxLog {
  std::vector<double> train_loss;
  std::vector<double> dev_accuracy;
  double test_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

inline double accuracy(const BlackBox& bb, const std::vector<data::Example>& split) {
  if (split.empty()) return 0.0;
  const auto pred = predict_labels(bb, data::inputs_of(split));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < split.size(); ++i) hit += pred[i] == split[i].label ? 1u : 0u;
  return static_cast<double>(hit) / static_cast<double>(split.size());
}

/// Builds the rule black box from the dataset's planted keys, or trains a network
/// with Adam on cross-entropy, keeping the parameters of the best dev epoch.
inline std::unique_ptr<BlackBox> train_blackbox(const data::Dataset& ds, const BlackBoxConfig& cfg,
                                                BlackBoxLog* log = nullptr, std::ostream* progress = nullptr) {
  if (cfg.arch == "rule") {
    if (!ds.planted) throw std::invalid_argument("rule black box requires a dataset with planted keys");
    auto bb = make_rule_blackbox({ds.planted->per_class, cfg.temperature, false}, ds.space);
    if (log) {
      log->dev_accuracy.push_back(accuracy(*bb, ds.dev));
      log->test_accuracy = accuracy(*bb, ds.test);
    }
    return bb;
  }
  if (ds.train.empty()) throw std::invalid_argument("train_blackbox: empty train split");
  auto net = make_net_blackbox(ds.space, ds.num_classes, cfg);
  nn::Adam opt(nn::AdamOptions{cfg.lr});
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  BlackBoxLog local;
  BlackBoxLog& lg = log ? *log : local;
  double best = -1.0;
  nlohmann::json best_params;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - s);
      std::vector<FeatureVector> xs;
      std::vector<int> ys;
      for (std::size_t k = 0; k < n; ++k) {
        xs.push_back(ds.train[order[s + k]].x);
        ys.push_back(ds.train[order[s + k]].label);
      }
      net->params().zero_grad();
      nn::Graph g;
      nn::Var logits = net->forward(g, xs, nullptr, true, &rng);
      if (!logits.value().allFinite()) {
        throw std::runtime_error("black-box training diverged (non-finite logits) at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batches + 1));
      }
      nn::Var loss = nn::softmax_cross_entropy(logits, ys);
      if (!std::isfinite(loss.scalar())) throw std::runtime_error("black-box training diverged (NaN loss)");
      g.backward(loss);
      if (!net->params().all_finite()) throw std::runtime_error("black-box training diverged (non-finite gradient)");
      opt.step(net->params());
      total += loss.scalar();
      ++batches;
    }
    lg.train_loss.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
    const double dev = ds.dev.empty() ? 0.0 : accuracy(*net, ds.dev);
    lg.dev_accuracy.push_back(dev);
    if (progress) {
      *progress << "blackbox epoch " << epoch + 1 << " loss " << lg.train_loss.back() << " dev_acc " << dev << "\n";
    }
    if (dev > best) {
      best = dev;
      best_params = net->params().to_json();
      lg.best_epoch = epoch + 1;
    }
  }
  if (!best_params.is_null()) net->params().load_json(best_params);
  lg.test_accuracy = accuracy(*net, ds.test);
  return net;
}

inline std::unique_ptr<BlackBox> blackbox_from_json(const nlohmann::json& j, const FeatureSpace& space) {
  const auto arch = j.at("arch").get<std::string>();
  if (j.at("space_hash").get<std::string>() != to_hex(space.hash())) {
    throw std::runtime_error("black-box checkpoint does not match the feature space");
  }
  if (arch == "rule") {
    RuleSpec spec{j.at("keys").get<std::vector<std::vector<int>>>(), j.at("temperature").get<double>(),
                  j.value("require_key", false)};
    return make_rule_blackbox(std::move(spec), space);
  }
  BlackBoxConfig cfg = j.at("config").get<BlackBoxConfig>();
  auto net = make_net_blackbox(space, j.at("num_classes").get<int>(), cfg);
  net->params().load_json(j.at("params"));
  return net;
}

}  // namespace aim::blackbox
