#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/blackbox/networks.hpp"
#include "aim/core/trainer.hpp"
#include "aim/data/cache.hpp"
#include "aim/expcli/evaluate.hpp"
#include "aim/expcli/experiment.hpp"
#include "aim/expcli/store.hpp"

// Experiment stages. Output layout under cfg.output:
//   blackbox-<h>/   space.json blackbox.json blackbox_log.json manifest.jsonl
//   run-<h>/        config.json manifest.jsonl metrics_k<K..>.tsv
//     seed-<s>/     explainer.json links.json train_log.{json,tsv} metrics_k<K..>.tsv details_k<K>.tsv ...
//   tune-<h>/       cells/*.json tune.tsv tune_grid.tsv best.json manifest.jsonl
// Every artifact is written to a temp file and renamed into place.

namespace aim::expcli {

struct Options {
  bool force = false;
  std::ostream* log = nullptr;
};

inline void note(const Options& o, const std::string& msg) {
  if (o.log) *o.log << msg << "\n" << std::flush;
}

inline fs::path blackbox_dir(const ExperimentConfig& c) { return fs::path(c.output) / ("blackbox-" + blackbox_hash(c)); }
inline fs::path run_dir(const ExperimentConfig& c) { return fs::path(c.output) / ("run-" + experiment_hash(c)); }
inline fs::path tune_dir(const ExperimentConfig& c) { return fs::path(c.output) / ("tune-" + experiment_hash(c)); }
inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return run_dir(c) / ("seed-" + std::to_string(seed));
}

inline std::string explainer_name(const core::TrainConfig& c) { return "aim-" + core::to_string(c.mode); }

inline std::string k_tag(const std::vector<std::size_t>& ks) {
  std::string s;
  for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "-" : "") + std::to_string(ks[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Black box

struct BlackBoxStage {
  data::Dataset ds;
  std::unique_ptr<blackbox::BlackBox> bb;
  fs::path dir;
  bool cache_hit = false;
};

/// Loads the dataset and the cached black box, or trains and stores it.
inline BlackBoxStage cmd_train_blackbox(const ExperimentConfig& cfg, const Options& opt = {}) {
  BlackBoxStage st;
  st.dir = blackbox_dir(cfg);
  st.ds = data::load_dataset_cached(cfg.dataset);
  const fs::path ckpt = st.dir / "blackbox.json";
  Manifest man(st.dir / "manifest.jsonl");
  if (!opt.force && fs::exists(ckpt)) {
    st.bb = blackbox::blackbox_from_json(read_json(ckpt), st.ds.space);
    st.cache_hit = true;
    note(opt, "black box: cache hit " + ckpt.string());
    return st;
  }
  const std::string started = utc_timestamp();
  blackbox::BlackBoxLog log;
  st.bb = blackbox::train_blackbox(st.ds, cfg.blackbox, &log, opt.log);
  nlohmann::json lj = {{"train_loss", log.train_loss},
                       {"dev_accuracy", log.dev_accuracy},
                       {"test_accuracy", log.test_accuracy},
                       {"best_epoch", log.best_epoch}};
  atomic_write(st.dir / "space.json", nlohmann::json({{"dataset", cfg.dataset},
                                                      {"num_classes", st.ds.num_classes},
                                                      {"class_names", st.ds.class_names},
                                                      {"space", st.ds.space.to_json()}})
                                           .dump() +
                                          "\n");
  atomic_write(st.dir / "blackbox_log.json", lj.dump(2) + "\n");
  atomic_write(ckpt, st.bb->to_json().dump() + "\n");
  man.append({{"event", "train-blackbox"},
              {"blackbox_config_hash", blackbox_hash(cfg)},
              {"dataset", cfg.dataset},
              {"blackbox", cfg.blackbox},
              {"blackbox_hash", to_hex(st.bb->fingerprint())},
              {"space_hash", to_hex(st.ds.space.hash())},
              {"test_accuracy", log.test_accuracy},
              {"started", started},
              {"forced", opt.force}});
  note(opt, "black box: test accuracy " + format_number(log.test_accuracy));
  return st;
}

// ---------------------------------------------------------------------------
// Explainer

struct SeedRun {
  std::uint64_t seed = 0;
  fs::path dir;
  std::unique_ptr<AimModel> model;
  core::TrainLog log;
  bool cache_hit = false;
};

struct ExplainerStage {
  BlackBoxStage bbs;
  std::vector<SeedRun> runs;
  fs::path dir;
};

inline std::string train_log_table(const core::TrainLog& log) {
  std::ostringstream out;
  out << "epoch\tloss\tl1\tl2\tnorm\tdev_faithfulness\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << "\t" << format_number(e.loss) << "\t" << format_number(e.l1) << "\t" << format_number(e.l2) << "\t"
        << format_number(e.norm) << "\t" << format_number(e.dev_faithfulness) << "\n";
  }
  out << "# best_epoch\t" << log.best_epoch << "\n";
  return out.str();
}

/// Trains one explainer per seed against the (cached) black box; cached seeds are loaded.
inline ExplainerStage cmd_train_explainer(const ExperimentConfig& cfg, const Options& opt = {}) {
  ExplainerStage st;
  Options bb_opt = opt;
  bb_opt.force = false;
  st.bbs = cmd_train_blackbox(cfg, bb_opt);
  st.dir = run_dir(cfg);
  const std::string chash = experiment_hash(cfg);
  atomic_write(st.dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
  Manifest man(st.dir / "manifest.jsonl");
  for (std::uint64_t seed : cfg.seeds) {
    SeedRun run;
    run.seed = seed;
    run.dir = seed_dir(cfg, seed);
    const fs::path ckpt = run.dir / "explainer.json";
    if (!opt.force && fs::exists(ckpt)) {
      run.model = std::make_unique<AimModel>(AimModel::from_json(read_json(ckpt), st.bbs.ds.space));
      const auto lj = read_json(run.dir / "train_log.json");
      run.log.best_epoch = lj.at("best_epoch").get<std::size_t>();
      run.log.best_dev_faithfulness = lj.at("best_dev_faithfulness").get<double>();
      run.log.final_loss = lj.at("final_loss").get<double>();
      for (const auto& e : lj.at("epochs")) {
        run.log.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(), e.at("l1").get<double>(),
                                  e.at("l2").get<double>(), e.at("norm").get<double>(),
                                  e.at("dev_faithfulness").get<double>()});
      }
      run.cache_hit = true;
      note(opt, "explainer seed " + std::to_string(seed) + ": cache hit");
      st.runs.push_back(std::move(run));
      continue;
    }
    core::TrainConfig tc = cfg.aim;
    tc.seed = seed;
    const std::string started = utc_timestamp();
    const auto progress = [&](const core::EpochRecord& r) {
      note(opt, "explainer seed " + std::to_string(seed) + " epoch " + std::to_string(r.epoch) + " loss " +
                    format_number(r.loss) + " dev_faithfulness " + format_number(r.dev_faithfulness));
    };
    run.model = std::make_unique<AimModel>(core::train(tc, *st.bbs.bb, st.bbs.ds, &run.log, progress));
    nlohmann::json links = {{"blackbox_dir", fs::relative(st.bbs.dir, run.dir).generic_string()}};
    atomic_write(run.dir / "links.json", links.dump(2) + "\n");
    atomic_write(run.dir / "train_log.json", nlohmann::json(run.log).dump(2) + "\n");
    atomic_write(run.dir / "train_log.tsv", train_log_table(run.log));
    atomic_write(ckpt, run.model->to_json().dump() + "\n");
    man.append({{"event", "train-explainer"},
                {"config_hash", chash},
                {"mode", core::to_string(tc.mode)},
                {"seed", seed},
                {"blackbox_hash", to_hex(st.bbs.bb->fingerprint())},
                {"explainer_hash", to_hex(run.model->fingerprint())},
                {"best_epoch", run.log.best_epoch},
                {"best_dev_faithfulness", run.log.best_dev_faithfulness},
                {"started", started},
                {"forced", opt.force}});
    st.runs.push_back(std::move(run));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvaluateStage {
  ExplainerStage ex;
  /// reports[seed index][k index]
  std::vector<std::vector<metrics::MetricReport>> reports;
  fs::path table;
  bool cache_hit = false;
};

/// Metric order in tables: the config's selection, in known_metrics() order.
inline std::vector<std::string> metric_order(const MetricsConfig& mc) {
  std::vector<std::string> out;
  for (const auto& m : known_metrics()) {
    if (std::find(mc.names.begin(), mc.names.end(), m) != mc.names.end()) out.push_back(m);
  }
  return out;
}

/// One report per K from each seed's single trained checkpoint.
inline EvaluateStage cmd_evaluate(const ExperimentConfig& cfg, std::optional<std::vector<std::size_t>> k_override,
                                  const Options& opt = {}) {
  const auto ks = k_override ? *k_override : cfg.k;
  for (std::size_t k : ks) {
    if (k < 1 || k > cfg.dataset.d) {
      throw UsageError("K=" + std::to_string(k) + " must be in [1, d=" + std::to_string(cfg.dataset.d) + "]");
    }
  }
  EvaluateStage st;
  Options ex_opt = opt;
  st.ex = cmd_train_explainer(cfg, ex_opt);
  const std::string tag = k_tag(ks);
  st.table = st.ex.dir / ("metrics_k" + tag + ".tsv");
  const auto order = metric_order(cfg.metrics);
  const std::string name = explainer_name(cfg.aim);
  bool all_cached = !opt.force && fs::exists(st.table);
  Manifest man(st.ex.dir / "manifest.jsonl");
  for (const auto& run : st.ex.runs) {
    const fs::path seed_table = run.dir / ("metrics_k" + tag + ".tsv");
    all_cached = all_cached && run.cache_hit && fs::exists(seed_table);
  }
  if (all_cached) {
    st.cache_hit = true;
    note(opt, "evaluate: cache hit " + st.table.string());
    return st;
  }
  for (const auto& run : st.ex.runs) {
    Evaluator ev(*run.model, *st.ex.bbs.bb, st.ex.bbs.ds, cfg.metrics);
    std::vector<metrics::MetricReport> per_k;
    nlohmann::json results = nlohmann::json::object();
    for (std::size_t k : ks) {
      auto r = ev.run(k, cfg.dataset.name, name);
      atomic_write(run.dir / ("details_k" + std::to_string(k) + ".tsv"), detail_table(r, order));
      if (!r.class_faithfulness.empty()) atomic_write(run.dir / ("classes_k" + std::to_string(k) + ".tsv"), class_table(r));
      nlohmann::json rj = r.report;
      results[std::to_string(k)] = rj.at("metrics");
      per_k.push_back(std::move(r.report));
    }
    atomic_write(run.dir / ("metrics_k" + tag + ".tsv"), metric_table(per_k, order));
    man.append({{"event", "evaluate"},
                {"config_hash", experiment_hash(cfg)},
                {"mode", core::to_string(cfg.aim.mode)},
                {"seed", run.seed},
                {"k", ks},
                {"explainer_hash", to_hex(run.model->fingerprint())},
                {"blackbox_hash", to_hex(st.ex.bbs.bb->fingerprint())},
                {"metrics", results}});
    note(opt, "evaluate seed " + std::to_string(run.seed) + ": done");
    st.reports.push_back(std::move(per_k));
  }
  atomic_write(st.table, aggregate_table(st.reports, order));
  return st;
}

// ---------------------------------------------------------------------------
// Grid search

struct TuneCell {
  double alpha = 0.0, beta = 0.0;
  double dev_faithfulness = 0.0;
  double log_odds_pos = 0.0, log_odds_neg = 0.0;
  std::size_t best_epoch = 0;
};

struct TuneStage {
  std::vector<TuneCell> cells;
  std::size_t best = 0;
  fs::path dir;
  /// The best cell retrained on the full budget.
  std::optional<ExplainerStage> final_run;
  ExperimentConfig final_config;
};

/// Deterministic subset of a dataset's train and dev splits.
inline data::Dataset subsample(const data::Dataset& ds, double fraction, std::uint64_t seed) {
  data::Dataset out = ds;
  Rng rng(seed ^ 0x5bd1e995ULL);
  auto take = [&](std::vector<data::Example>& split) {
    std::vector<std::size_t> idx(split.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(split.size()))));
    idx.resize(std::min(n, idx.size()));
    std::sort(idx.begin(), idx.end());
    std::vector<data::Example> kept;
    for (std::size_t i : idx) kept.push_back(split[i]);
    split = std::move(kept);
  };
  take(out.train);
  if (!out.dev.empty()) take(out.dev);
  return out;
}

inline std::string cell_name(double a, double b) { return "a" + format_number(a) + "_b" + format_number(b); }

/// Layout of the per-alpha tuning table: one row per (alpha, beta), alpha outermost.
inline std::string tune_table(const std::vector<TuneCell>& cells) {
  std::ostringstream out;
  out << "alpha\tbeta\tdev_faithfulness\tlog_odds_pos\tlog_odds_neg\tbest_epoch\n";
  for (const auto& c : cells) {
    out << format_number(c.alpha) << "\t" << format_number(c.beta) << "\t" << format_number(c.dev_faithfulness) << "\t"
        << format_number(c.log_odds_pos) << "\t" << format_number(c.log_odds_neg) << "\t" << c.best_epoch << "\n";
  }
  return out.str();
}

/// alpha rows x beta columns of dev faithfulness.
inline std::string tune_grid(const TuneConfig& t, const std::vector<TuneCell>& cells) {
  std::ostringstream out;
  out << "alpha\\beta";
  for (double b : t.betas) out << "\t" << format_number(b);
  out << "\n";
  std::size_t i = 0;
  for (double a : t.alphas) {
    out << format_number(a);
    for (std::size_t j = 0; j < t.betas.size(); ++j) out << "\t" << format_number(cells[i++].dev_faithfulness);
    out << "\n";
  }
  return out.str();
}

/// Index of the highest dev faithfulness; the first cell in grid order wins ties.
inline std::size_t argmax_cell(const std::vector<TuneCell>& cells) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].dev_faithfulness > cells[best].dev_faithfulness) best = i;
  }
  return best;
}

/// Grid over (alpha, beta): each cell trains on a subset for a few epochs and is scored by
/// dev faithfulness at aim.dev_k; the best cell is then retrained with the full budget.
inline TuneStage cmd_tune(const ExperimentConfig& cfg, const Options& opt = {}) {
  TuneStage st;
  st.dir = tune_dir(cfg);
  Options bb_opt = opt;
  bb_opt.force = false;
  auto bbs = cmd_train_blackbox(cfg, bb_opt);
  const std::uint64_t seed = cfg.seeds.front();
  const auto sub = subsample(bbs.ds, cfg.tune.subset, seed);
  Manifest man(st.dir / "manifest.jsonl");
  const auto dev_x = data::inputs_of(sub.dev);
  for (double a : cfg.tune.alphas) {
    for (double b : cfg.tune.betas) {
      const fs::path cell_file = st.dir / "cells" / (cell_name(a, b) + ".json");
      TuneCell cell{a, b};
      if (!opt.force && fs::exists(cell_file)) {
        const auto j = read_json(cell_file);
        cell.dev_faithfulness = j.at("dev_faithfulness").get<double>();
        cell.log_odds_pos = j.at("log_odds_pos").get<double>();
        cell.log_odds_neg = j.at("log_odds_neg").get<double>();
        cell.best_epoch = j.at("best_epoch").get<std::size_t>();
        st.cells.push_back(cell);
        continue;
      }
      core::TrainConfig tc = cfg.aim;
      tc.alpha = a;
      tc.beta = b;
      tc.epochs = cfg.tune.epochs;
      tc.seed = seed;
      core::TrainLog log;
      const auto model = core::train(tc, *bbs.bb, sub, &log);
      cell.dev_faithfulness = log.best_dev_faithfulness;
      cell.best_epoch = log.best_epoch;
      if (!dev_x.empty()) {
        const auto y = blackbox::predict_labels(*bbs.bb, dev_x);
        const auto recs = explain_records(model, dev_x, y, y, tc.dev_k);
        std::vector<std::vector<std::size_t>> s;
        for (const auto& r : recs) s.push_back(r.e.indices);
        data::FeatureStats stats;
        if (tc.mask == "mean") stats = data::column_means(dev_x);
        const auto ctx = core::masking_for(tc, tc.mask == "mean" ? &stats : nullptr);
        cell.log_odds_pos = metrics::mean(metrics::delta_log_odds(*bbs.bb, dev_x, s, metrics::LogOddsMode::kPositive, ctx));
        cell.log_odds_neg = metrics::mean(metrics::delta_log_odds(*bbs.bb, dev_x, s, metrics::LogOddsMode::kNegative, ctx));
      }
      atomic_write(cell_file, nlohmann::json({{"alpha", a},
                                              {"beta", b},
                                              {"dev_faithfulness", cell.dev_faithfulness},
                                              {"log_odds_pos", cell.log_odds_pos},
                                              {"log_odds_neg", cell.log_odds_neg},
                                              {"best_epoch", cell.best_epoch},
                                              {"epochs", tc.epochs},
                                              {"train_size", sub.train.size()}})
                                  .dump(2) +
                                  "\n");
      note(opt, "tune alpha " + format_number(a) + " beta " + format_number(b) + " dev_faithfulness " +
                    format_number(cell.dev_faithfulness));
      st.cells.push_back(cell);
    }
  }
  st.best = argmax_cell(st.cells);
  atomic_write(st.dir / "tune.tsv", tune_table(st.cells));
  atomic_write(st.dir / "tune_grid.tsv", tune_grid(cfg.tune, st.cells));

  st.final_config = cfg;
  st.final_config.aim.alpha = st.cells[st.best].alpha;
  st.final_config.aim.beta = st.cells[st.best].beta;
  st.final_run = cmd_train_explainer(st.final_config, opt);
  const auto& best = st.cells[st.best];
  atomic_write(st.dir / "best.json", nlohmann::json({{"alpha", best.alpha},
                                                     {"beta", best.beta},
                                                     {"dev_faithfulness", best.dev_faithfulness},
                                                     {"run_dir", run_dir(st.final_config).generic_string()}})
                                         .dump(2) +
                                         "\n");
  man.append({{"event", "tune"},
              {"config_hash", experiment_hash(cfg)},
              {"cells", st.cells.size()},
              {"best_alpha", best.alpha},
              {"best_beta", best.beta},
              {"best_dev_faithfulness", best.dev_faithfulness},
              {"final_config_hash", experiment_hash(st.final_config)}});
  return st;
}

}  // namespace aim::expcli
