#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aim/core/model.hpp"
#include "aim/data/dataset.hpp"
#include "aim/metrics/faithfulness.hpp"
#include "aim/nn/parameters.hpp"

namespace aim::core {

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double norm = 0.0;
  double dev_faithfulness = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_faithfulness = -1.0;
  /// Mean loss of the last epoch.
  double final_loss = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"loss", r.loss}, {"l1", r.l1}, {"l2", r.l2}, {"norm", r.norm},
       {"dev_faithfulness", r.dev_faithfulness}};
}

inline void to_json(nlohmann::json& j, const TrainLog& l) {
  j = {{"epochs", l.epochs}, {"best_epoch", l.best_epoch}, {"best_dev_faithfulness", l.best_dev_faithfulness},
       {"final_loss", l.final_loss}};
}

/// Masking context matching the trainer's mask setting; stats come from the train split.
inline metrics::MaskingContext masking_for(const TrainConfig& cfg, const data::FeatureStats* stats) {
  metrics::MaskingContext ctx;
  ctx.strategy = data::mask_strategy_from_string(cfg.mask);
  ctx.stats = stats;
  ctx.seed = cfg.seed;
  return ctx;
}

/// Mean faithfulness at K (capped per instance at the number of rankable slots).
inline double explanation_faithfulness(const AimModel& model, const blackbox::BlackBox& bb,
                                       const std::vector<FeatureVector>& xs, std::size_t k,
                                       const metrics::MaskingContext& ctx) {
  if (xs.empty()) return 0.0;
  const auto labels = blackbox::predict_labels(bb, xs);
  const bool by_pi = ranks_by_selector(model.config().mode);
  const auto ws = by_pi ? std::vector<Matrix>{} : model.weights(xs);
  const Matrix pi = by_pi ? model.probs(xs) : Matrix{};
  std::vector<std::vector<std::size_t>> kept;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t avail = model.config().exclude_invalid ? xs[i].valid_count() : xs[i].size();
    const std::size_t ki = std::max<std::size_t>(1, std::min(k, avail));
    const RowVector scores = by_pi ? RowVector(pi.row(static_cast<Eigen::Index>(i)))
                                   : RowVector(ws[i].col(labels[i]).transpose());
    kept.push_back(rank_top_k(scores, xs[i].valid, ki, model.config().exclude_invalid && avail > 0));
  }
  return metrics::mean(metrics::agreement(bb, xs, kept, labels, ctx));
}

using ProgressFn = std::function<void(const EpochRecord&)>;

/// Joint training (or the selector-only / explainer-only ablations) against a frozen
/// black box. Keeps the parameters of the epoch with the best dev faithfulness
/// (the later epoch on ties).
inline AimModel train(const TrainConfig& cfg, const blackbox::BlackBox& bb, const data::Dataset& ds,
                      TrainLog* log = nullptr, const ProgressFn& progress = {}) {
  cfg.validate();
  blackbox::require_space(bb, ds.space);
  if (bb.num_classes() != ds.num_classes) throw std::invalid_argument("black box and dataset disagree on the class count");
  if (ds.train.empty()) throw std::invalid_argument("train: empty train split");
  if (data::mask_strategy_from_string(cfg.mask) != data::MaskStrategy::kZero && ds.space.modality == data::Modality::kText) {
    throw std::invalid_argument("text features only support zero masking");
  }
  const std::uint64_t frozen = bb.fingerprint();

  AimModel model(ds.space, ds.num_classes, cfg);
  model.set_blackbox_fingerprint(frozen);
  Networks& nets = model.networks();
  const LossWeights lw = weights_for(cfg);
  const bool explainer_only = cfg.mode == Mode::kExplainerOnly;
  const bool train_explainer = cfg.mode != Mode::kSelectorOnly;
  const bool train_selector = !explainer_only;

  nn::Adam opt_e(nn::AdamOptions{cfg.lr}), opt_s(nn::AdamOptions{cfg.lr}), opt_g(nn::AdamOptions{cfg.lr});
  Rng order_rng(cfg.seed * 7 + 11), noise_rng(cfg.seed * 7 + 12), drop_rng(cfg.seed * 7 + 13);

  const auto train_x = data::inputs_of(ds.train);
  const auto ym_all = blackbox::predict_labels(bb, train_x);
  const auto dev_x = data::inputs_of(ds.dev);
  data::FeatureStats stats;
  if (cfg.mask == "mean") stats = data::column_means(train_x);
  const auto ctx = masking_for(cfg, cfg.mask == "mean" ? &stats : nullptr);

  std::vector<std::size_t> order(train_x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  TrainLog local;
  TrainLog& lg = log ? *log : local;
  lg = TrainLog{};
  nlohmann::json best;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, order_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - s);
      std::vector<FeatureVector> xs;
      std::vector<int> ym;
      for (std::size_t k = 0; k < n; ++k) {
        xs.push_back(train_x[order[s + k]]);
        ym.push_back(ym_all[order[s + k]]);
      }
      nets.explainer.params.zero_grad();
      nets.selector.params.zero_grad();
      nets.approximator.params.zero_grad();
      Graph g;
      ObjectiveTerms terms;
      if (explainer_only) {
        terms = explainer_only_objective(g, nets.explainer, xs, bb, uniform_masks(xs, noise_rng));
      } else {
        const auto noise = draw_noise(static_cast<Eigen::Index>(n * ds.space.d), cfg.samples, noise_rng);
        terms = joint_objective(g, nets, xs, ym, bb, noise, cfg.tau, lw, true, &drop_rng);
      }
      const double loss = terms.total.scalar();
      if (!std::isfinite(loss)) {
        throw std::runtime_error("explainer training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batches + 1) + " (l1=" + std::to_string(terms.l1) +
                                 ", l2=" + std::to_string(terms.l2) + ", norm=" + std::to_string(terms.norm) + ")");
      }
      g.backward(terms.total);
      if (!nets.explainer.params.all_finite() || !nets.selector.params.all_finite() ||
          !nets.approximator.params.all_finite()) {
        throw std::runtime_error("explainer training diverged: non-finite gradient at epoch " + std::to_string(epoch + 1));
      }
      if (train_explainer) opt_e.step(nets.explainer.params);
      if (train_selector) {
        opt_s.step(nets.selector.params);
        opt_g.step(nets.approximator.params);
      }
      rec.loss += loss;
      rec.l1 += terms.l1;
      rec.l2 += terms.l2;
      rec.norm += terms.norm;
      ++batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.loss /= nb;
    rec.l1 /= nb;
    rec.l2 /= nb;
    rec.norm /= nb;
    rec.dev_faithfulness = explanation_faithfulness(model, bb, dev_x, cfg.dev_k, ctx);
    lg.epochs.push_back(rec);
    lg.final_loss = rec.loss;
    if (progress) progress(rec);
    if (rec.dev_faithfulness >= lg.best_dev_faithfulness) {
      lg.best_dev_faithfulness = rec.dev_faithfulness;
      lg.best_epoch = rec.epoch;
      best = model.snapshot();
    }
  }
  if (!best.is_null()) model.restore(best);
  if (bb.fingerprint() != frozen) throw std::logic_error("black box changed during explainer training");
  return model;
}

}  // namespace aim::core
