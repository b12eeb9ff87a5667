#pragma once

#include <algorithm>
#include <cstdio>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aim/core/trainer.hpp"
#include "aim/expcli/experiment.hpp"
#include "aim/metrics/log_odds.hpp"
#include "aim/metrics/neighbors.hpp"
#include "aim/metrics/report.hpp"

namespace aim::expcli {

using core::AimModel;
using core::Explanation;
using data::FeatureVector;

/// Shortest decimal that reads back to the same double.
inline std::string format_number(double v) {
  char buf[40];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Explanation of one instance for one class, with display strings and selector mass.
struct ExplanationRecord {
  std::size_t id = 0;
  int y_m = 0;
  Explanation e;
  std::vector<std::string> display;
  std::vector<double> pi;
};

inline void to_json(nlohmann::json& j, const ExplanationRecord& r) {
  j = {{"id", r.id},           {"y_m", r.y_m},         {"target_class", r.e.target_class}, {"k", r.e.k},
       {"indices", r.e.indices}, {"tokens", r.display}, {"weights", r.e.weights},         {"pi", r.pi},
       {"source", r.e.source}};
}

/// K actually used for x: the request capped at the number of rankable slots.
inline std::size_t effective_k(const FeatureVector& x, std::size_t k, bool exclude_invalid) {
  const std::size_t avail = exclude_invalid ? x.valid_count() : x.size();
  return std::max<std::size_t>(1, std::min(k, avail));
}

/// Explanations of every x for the per-instance target classes at K, ranked the way the
/// model's mode prescribes (W column or selector probabilities).
inline std::vector<ExplanationRecord> explain_records(const AimModel& model, const std::vector<FeatureVector>& xs,
                                                      const std::vector<int>& y_m, const std::vector<int>& targets,
                                                      std::size_t k) {
  const bool by_pi = core::ranks_by_selector(model.config().mode);
  const bool excl = model.config().exclude_invalid;
  const auto ws = by_pi ? std::vector<Matrix>{} : model.weights(xs);
  const Matrix pi = model.probs(xs);
  std::vector<ExplanationRecord> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const bool ex = excl && xs[i].valid_count() > 0;
    const std::size_t ki = effective_k(xs[i], k, ex);
    ExplanationRecord r;
    r.id = i;
    r.y_m = y_m[i];
    const RowVector prow = pi.row(static_cast<Eigen::Index>(i));
    r.e = by_pi ? core::explanation_from_scores(prow, xs[i], ki, targets[i], ex, "pi")
                : core::explain_from_weights(ws[i], xs[i], ki, targets[i], ex);
    for (std::size_t s : r.e.indices) {
      r.display.push_back(model.space().display(xs[i], s));
      r.pi.push_back(prow(static_cast<Eigen::Index>(s)));
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct EvalResult {
  metrics::MetricReport report;
  /// class_faithfulness broken down per class: [class][instance].
  std::vector<std::vector<double>> class_faithfulness;
};

/// Everything the metric pass needs that does not depend on K.
class Evaluator {
 public:
  Evaluator(const AimModel& model, const blackbox::BlackBox& bb, const data::Dataset& ds, const MetricsConfig& mc)
      : model_(model), bb_(bb), ds_(ds), mc_(mc) {
    const auto& split = mc.split == "dev" ? ds.dev : ds.test;
    std::size_t n = split.size();
    if (mc.max_instances > 0) n = std::min(n, mc.max_instances);
    for (std::size_t i = 0; i < n; ++i) xs_.push_back(split[i].x);
    if (xs_.empty()) throw std::invalid_argument("evaluation split is empty");
    y_m_ = blackbox::predict_labels(bb, xs_);
    const auto& cfg = model.config();
    if (cfg.mask == "mean") stats_ = data::column_means(xs_);
    ctx_ = core::masking_for(cfg, cfg.mask == "mean" ? &stats_ : nullptr);
    ctx_.repetitions = mc.repetitions;
    text_ = ds.space.modality == data::Modality::kText;
  }

  const std::vector<FeatureVector>& inputs() const { return xs_; }
  const std::vector<int>& predictions() const { return y_m_; }

  bool applies(const std::string& metric) const { return text_ || !text_only_metric(metric); }

  EvalResult run(std::size_t k, const std::string& dataset, const std::string& explainer) {
    EvalResult out;
    out.report.dataset = dataset;
    out.report.explainer = explainer;
    out.report.k = k;
    const auto recs = explain_records(model_, xs_, y_m_, y_m_, k);
    std::vector<std::vector<std::size_t>> kept;
    std::vector<std::vector<std::string>> toks;
    for (const auto& r : recs) {
      kept.push_back(r.e.indices);
      toks.push_back(r.display);
    }
    auto want = [&](const char* m) {
      return std::find(mc_.names.begin(), mc_.names.end(), m) != mc_.names.end() && applies(m);
    };
    if (want("faithfulness")) out.report.add("faithfulness", metrics::agreement(bb_, xs_, kept, y_m_, ctx_));
    if (want("purity")) {
      std::vector<double> v;
      for (const auto& t : toks) v.push_back(metrics::purity(t, lex_));
      out.report.add("purity", std::move(v));
    }
    if (want("brevity")) {
      const auto& db = synonyms();
      std::vector<double> v;
      for (const auto& t : toks) v.push_back(static_cast<double>(metrics::brevity(t, db)));
      out.report.add("brevity", std::move(v));
    }
    if (want("iou_stability")) {
      const auto& idx = neighbor_index();
      std::vector<double> v;
      for (std::size_t a = 0; a < xs_.size(); ++a) {
        std::vector<std::vector<std::string>> nb;
        for (std::size_t j : idx.neighbors[a]) nb.push_back(toks[j]);
        v.push_back(metrics::iou_stability(toks[a], nb, lex_));
      }
      out.report.add("iou_stability", std::move(v));
    }
    if (want("log_odds_pos")) {
      out.report.add("log_odds_pos", metrics::delta_log_odds(bb_, xs_, kept, metrics::LogOddsMode::kPositive, ctx_));
    }
    if (want("log_odds_neg")) {
      out.report.add("log_odds_neg", metrics::delta_log_odds(bb_, xs_, kept, metrics::LogOddsMode::kNegative, ctx_));
    }
    const bool cf = want("class_faithfulness"), piou = want("pairwise_iou");
    if (cf || piou) {
      std::vector<std::vector<std::vector<std::string>>> per_class;
      std::vector<double> macro(xs_.size(), 0.0);
      for (int c = 0; c < ds_.num_classes; ++c) {
        const auto rc = explain_records(model_, xs_, y_m_, std::vector<int>(xs_.size(), c), k);
        std::vector<std::vector<std::size_t>> kc;
        std::vector<std::vector<std::string>> tc;
        for (const auto& r : rc) {
          kc.push_back(r.e.indices);
          tc.push_back(r.display);
        }
        per_class.push_back(std::move(tc));
        if (cf) {
          auto v = metrics::class_specific_faithfulness(bb_, xs_, kc, c, ctx_);
          for (std::size_t i = 0; i < v.size(); ++i) macro[i] += v[i] / ds_.num_classes;
          out.class_faithfulness.push_back(std::move(v));
        }
      }
      if (cf) out.report.add("class_faithfulness", std::move(macro));
      if (piou) out.report.add("pairwise_iou", metrics::pairwise_iou(per_class));
    }
    return out;
  }

 private:
  const metrics::SynonymDb& synonyms() {
    if (!syn_) syn_ = std::make_unique<metrics::SynonymDb>(metrics::SynonymDb::load(metrics::default_synonym_path()));
    return *syn_;
  }

  const metrics::NeighborIndex& neighbor_index() {
    if (!nbr_) {
      std::vector<std::vector<std::string>> docs;
      for (const auto& x : xs_) docs.push_back(data::decode_text(x, ds_.space));
      metrics::HashedEmbedder emb(mc_.embed_dim);
      nbr_ = std::make_unique<metrics::NeighborIndex>(
          metrics::build_neighbor_index(docs, y_m_, emb, mc_.neighbors_per_channel));
    }
    return *nbr_;
  }

  const AimModel& model_;
  const blackbox::BlackBox& bb_;
  const data::Dataset& ds_;
  MetricsConfig mc_;
  std::vector<FeatureVector> xs_;
  std::vector<int> y_m_;
  data::FeatureStats stats_;
  metrics::MaskingContext ctx_;
  bool text_ = true;
  data::StopLexicon lex_;
  std::unique_ptr<metrics::SynonymDb> syn_;
  std::unique_ptr<metrics::NeighborIndex> nbr_;
};

// ---------------------------------------------------------------------------
// Tables

inline constexpr const char* kTableHeader = "dataset\texplainer\tk\tmetric\tmean\tstd\tn";

/// One row per (K, metric), metrics in the order of `order`.
inline std::string metric_table(const std::vector<metrics::MetricReport>& reports, const std::vector<std::string>& order) {
  std::ostringstream out;
  out << kTableHeader << "\n";
  for (const auto& r : reports) {
    for (const auto& m : order) {
      if (!r.values.count(m)) continue;
      const auto s = r.summary(m);
      out << r.dataset << "\t" << r.explainer << "\t" << r.k << "\t" << m << "\t" << format_number(s.mean) << "\t"
          << format_number(s.std) << "\t" << s.n << "\n";
    }
  }
  return out.str();
}

/// Mean and std over seeds of the per-seed means; `runs[s]` holds one report per K.
inline std::string aggregate_table(const std::vector<std::vector<metrics::MetricReport>>& runs,
                                   const std::vector<std::string>& order) {
  std::ostringstream out;
  out << kTableHeader << "\n";
  if (runs.empty()) return out.str();
  for (std::size_t ki = 0; ki < runs.front().size(); ++ki) {
    std::vector<metrics::MetricReport> same_k;
    for (const auto& run : runs) same_k.push_back(run.at(ki));
    const auto agg = metrics::aggregate_runs(same_k);
    const auto& r0 = runs.front()[ki];
    for (const auto& m : order) {
      const auto it = agg.find(m);
      if (it == agg.end()) continue;
      out << r0.dataset << "\t" << r0.explainer << "\t" << r0.k << "\t" << m << "\t" << format_number(it->second.mean)
          << "\t" << format_number(it->second.std) << "\t" << it->second.n << "\n";
    }
  }
  return out.str();
}

/// Per-instance values: one row per instance, one column per metric.
inline std::string detail_table(const EvalResult& r, const std::vector<std::string>& order) {
  std::vector<std::string> cols;
  for (const auto& m : order) {
    if (r.report.values.count(m)) cols.push_back(m);
  }
  std::ostringstream out;
  out << "id";
  for (const auto& c : cols) out << "\t" << c;
  for (std::size_t c = 0; c < r.class_faithfulness.size(); ++c) out << "\tclass_faithfulness[" << c << "]";
  out << "\n";
  const std::size_t n = cols.empty() ? 0 : r.report.values.at(cols.front()).size();
  for (std::size_t i = 0; i < n; ++i) {
    out << i;
    for (const auto& c : cols) out << "\t" << format_number(r.report.values.at(c)[i]);
    for (const auto& v : r.class_faithfulness) out << "\t" << format_number(v[i]);
    out << "\n";
  }
  return out.str();
}

/// Per-class means of class_faithfulness.
inline std::string class_table(const EvalResult& r) {
  std::ostringstream out;
  out << "k\tclass\tclass_faithfulness\tn\n";
  for (std::size_t c = 0; c < r.class_faithfulness.size(); ++c) {
    out << r.report.k << "\t" << c << "\t" << format_number(metrics::mean(r.class_faithfulness[c])) << "\t"
        << r.class_faithfulness[c].size() << "\n";
  }
  return out.str();
}

struct TableRow {
  std::string dataset, explainer, metric, mean, std;
  std::size_t k = 0, n = 0;
};

/// Parses a metric table written by metric_table / aggregate_table. Numbers stay as text.
inline std::vector<TableRow> parse_metric_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader) throw std::runtime_error("not a metric table");
  std::vector<TableRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, '\t');) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("metric table: expected 7 fields, got " + std::to_string(f.size()));
    rows.push_back({f[0], f[1], f[3], f[4], f[5], std::stoul(f[2]), std::stoul(f[6])});
  }
  return rows;
}

}  // namespace aim::expcli
