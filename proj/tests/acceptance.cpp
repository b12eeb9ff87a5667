// Acceptance run: one status line per criterion.
// Exit status: 1 if any criterion fails, 77 if none fails but some could not run
// (missing external corpus), 0 otherwise.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>
#include <sys/wait.h>

#include "aim/expcli/pipeline.hpp"
#include "aim/metrics/log_odds.hpp"
#include "aim/metrics/neighbors.hpp"

using namespace aim;
using core::AimModel;
using core::Mode;
using core::TrainConfig;
using data::FeatureVector;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Line {
  int id;
  std::string name;
  Status status;
  std::string detail;
};

std::vector<Line> g_lines;

void emit(int id, const std::string& name, Status s, const std::string& detail) {
  static const char* kTag[] = {"PASS", "FAIL", "SKIP"};
  g_lines.push_back({id, name, s, detail});
  std::cout << "[" << kTag[static_cast<int>(s)] << "] " << id << ". " << name << ": " << detail << std::endl;
}

void info(const std::string& msg) { std::cout << "       info: " << msg << std::endl; }

Status pass_if(bool ok) { return ok ? Status::kPass : Status::kFail; }

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path scratch() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / ("aim_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

// Near-zero gradients: central differences at h = 1e-5 carry ~1e-11 absolute error.
constexpr double kGradFloor = 1e-9;

struct GradResult {
  double max_rel = 0.0;
  std::size_t checked = 0, floored = 0, failed = 0;
  double floored_max_abs = 0.0, floored_max_scale = 0.0;
};

GradResult grad_check(const core::LossWeights& w, std::uint64_t seed) {
  auto space = data::build_vocab({{"good", "bad", "t1", "t2", "t3", "t4", "t5"}}, 100, 4);
  auto bb = blackbox::make_rule_blackbox({{{space.token_id("good")}, {space.token_id("bad")}}}, space);
  const std::vector<FeatureVector> xs = {data::encode_text({"good", "t1", "good", "t2"}, space),
                                         data::encode_text({"bad", "t3", "t4"}, space),
                                         data::encode_text({"t5", "bad", "good", "bad"}, space)};
  TrainConfig cfg;
  cfg.net.embed = cfg.net.explainer_hidden = cfg.net.selector_lstm = cfg.net.selector_hidden = cfg.net.approx_filters =
      cfg.net.approx_hidden = 8;
  cfg.net.dropout = 0.0;
  cfg.seed = seed;
  AimModel m(space, 2, cfg);
  auto& nets = m.networks();
  Rng rng(seed + 1000);
  std::array<nn::ParameterSet*, 3> sets = {&nets.explainer.params, &nets.selector.params, &nets.approximator.params};
  // Move off exact ReLU kinks at zero-embedded padding slots.
  for (auto* ps : sets) {
    for (auto& p : *ps) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.1 * (2.0 * open_unit(rng) - 1.0);
    }
  }
  const auto noise = core::draw_noise(static_cast<Eigen::Index>(xs.size() * 4), 2, rng);
  const auto ym = blackbox::predict_labels(*bb, xs);
  auto eval = [&](bool record, std::vector<std::vector<int>>* labels) {
    nn::Graph g(record);
    auto terms = core::joint_objective(g, nets, xs, ym, *bb, noise, 0.5, w, false, nullptr);
    if (record) g.backward(terms.total);
    if (labels) *labels = terms.relaxed_labels;
    return terms.total.scalar();
  };
  for (auto* ps : sets) ps->zero_grad();
  std::vector<std::vector<int>> base, up_l, down_l;
  eval(true, &base);
  GradResult r;
  const double h = 1e-5;
  for (auto* ps : sets) {
    for (auto& p : *ps) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        const double orig = p.value.data()[i];
        p.value.data()[i] = orig + h;
        const double up = eval(false, &up_l);
        p.value.data()[i] = orig - h;
        const double down = eval(false, &down_l);
        p.value.data()[i] = orig;
        if (up_l != base || down_l != base) continue;  // relaxed label flip: loss is discontinuous there
        const double num = (up - down) / (2 * h), ana = p.grad.data()[i];
        const double scale = std::max(std::abs(num), std::abs(ana));
        const double diff = std::abs(num - ana);
        r.max_rel = std::max(r.max_rel, diff / scale);
        if (diff > 1e-4 * scale) {
          if (diff > 1e-4 * scale + kGradFloor) ++r.failed;
          ++r.floored;
          r.floored_max_abs = std::max(r.floored_max_abs, diff);
          r.floored_max_scale = std::max(r.floored_max_scale, scale);
        }
        ++r.checked;
      }
    }
  }
  return r;
}

void criterion1() {
  Timer t;
  const std::array<std::pair<const char*, core::LossWeights>, 4> cases = {{{"L1", {1.0, 0.0, 0.0}},
                                                                           {"L2", {0.0, 1.0, 0.0}},
                                                                           {"norm", {0.0, 0.0, 1.0}},
                                                                           {"total", {1.0, 1.8, 0.3}}}};
  std::size_t n = 0, floored = 0, failed = 0;
  double floored_abs = 0.0, floored_scale = 0.0;
  std::string parts;
  std::uint64_t seed = 1;
  for (const auto& [name, w] : cases) {
    const auto r = grad_check(w, seed++);
    n += r.checked;
    floored += r.floored;
    failed += r.failed;
    floored_abs = std::max(floored_abs, r.floored_max_abs);
    floored_scale = std::max(floored_scale, r.floored_max_scale);
    parts += std::string(parts.empty() ? "" : ", ") + name + " " + sci(r.max_rel);
  }
  const double secs = t.seconds();
  emit(1, "gradient correctness", pass_if(failed == 0 && n > 0 && secs < 10.0),
       std::to_string(failed) + "/" + std::to_string(n) + " entries outside |a-n| <= 1e-4*max(|a|,|n|) + 1e-9; " + fmt(secs, 1) +
           " s (limit 10 s)");
  info("raw max relative error per loss: " + parts);
  info(std::to_string(floored) + " entries pass only through the 1e-9 floor (max |a-n| " + sci(floored_abs) +
       ", largest gradient among them " + sci(floored_scale) + ")");
}

// ---------------------------------------------------------------------------
// 2. Concrete sampler

void criterion2() {
  Timer t;
  Rng rng(2024);
  const Eigen::Index n = 100000;
  double worst = 0.0;
  bool inside = true;
  for (double tau : {0.1, 0.2, 1.0}) {
    for (double p : {0.1, 0.5, 0.9}) {
      const auto m = core::gumbel_sample(RowVector::Constant(n, p), tau, rng);
      const double frac = static_cast<double>((m.z.array() > 0.5).count()) / static_cast<double>(n);
      worst = std::max(worst, std::abs(frac - p));
      inside = inside && m.z.minCoeff() > 0.0 && m.z.maxCoeff() < 1.0;
    }
  }
  const double secs = t.seconds();
  emit(2, "concrete sampler distribution", pass_if(worst <= 0.01 && inside && secs < 30.0),
       "max |P(z>0.5) - pi| = " + fmt(worst) + " (tol 0.01) over 9 (tau, pi) cells x 1e5 draws; strictly inside (0,1): " +
           (inside ? "yes" : "no") + "; " + fmt(secs, 1) + " s (limit 30 s)");
}

// ---------------------------------------------------------------------------
// Synthetic rule task shared by 3, 4, 6, 7

data::DatasetConfig rule_config() {
  data::DatasetConfig c;
  c.name = "synthetic-rule";
  c.train = 1000;
  c.dev = 200;
  c.test = 200;
  c.d = 50;
  c.num_classes = 2;
  c.keys_per_class = 5;
  return c;
}

TrainConfig rule_train_config(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.dev_k = 5;
  return c;
}

/// Top-K kept sets for y_m (or for `target` when given), ranked by W or by pi.
std::vector<std::vector<std::size_t>> kept_sets(const AimModel& m, const std::vector<FeatureVector>& xs,
                                                const std::vector<int>& targets, std::size_t k, bool by_pi) {
  const auto ws = by_pi ? std::vector<Matrix>{} : m.weights(xs);
  const Matrix pi = by_pi ? m.probs(xs) : Matrix{};
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t ki = std::min(k, xs[i].valid_count());
    const RowVector s = by_pi ? RowVector(pi.row(static_cast<Eigen::Index>(i)))
                              : RowVector(ws[i].col(targets[i]).transpose());
    out.push_back(core::rank_top_k(s, xs[i].valid, ki, true));
  }
  return out;
}

double faith_at(const AimModel& m, const blackbox::BlackBox& bb, const std::vector<FeatureVector>& xs, std::size_t k,
                bool by_pi) {
  const auto y = blackbox::predict_labels(bb, xs);
  return metrics::mean(metrics::agreement(bb, xs, kept_sets(m, xs, y, k, by_pi), y));
}

struct RuleRun {
  data::Dataset ds;
  std::unique_ptr<blackbox::BlackBox> bb;
  std::unique_ptr<AimModel> full;
  double train_seconds = 0.0;
};

RuleRun& rule_run() {
  static RuleRun r = [] {
    RuleRun run;
    run.ds = data::load_dataset(rule_config());
    run.bb = blackbox::train_blackbox(run.ds, blackbox::BlackBoxConfig{});
    Timer t;
    run.full = std::make_unique<AimModel>(core::train(rule_train_config(Mode::kFull), *run.bb, run.ds));
    run.train_seconds = t.seconds();
    return run;
  }();
  return r;
}

void criterion3() {
  Timer t;
  auto& run = rule_run();
  const auto xs = data::inputs_of(run.ds.test);
  const auto y = blackbox::predict_labels(*run.bb, xs);
  const auto kept = kept_sets(*run.full, xs, y, 5, false);
  std::vector<double> hit(2, 0.0), count(2, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& keys = run.ds.planted->per_class[static_cast<std::size_t>(y[i])];
    std::size_t h = 0;
    for (std::size_t s : kept[i]) h += std::count(keys.begin(), keys.end(), xs[i].tokens[s]) > 0 ? 1u : 0u;
    hit[static_cast<std::size_t>(y[i])] += static_cast<double>(h) / static_cast<double>(kept[i].size());
    count[static_cast<std::size_t>(y[i])] += 1.0;
  }
  const double r0 = hit[0] / count[0], r1 = hit[1] / count[1];
  const double f = metrics::mean(metrics::agreement(*run.bb, xs, kept, y));
  const double secs = t.seconds() + run.train_seconds;
  emit(3, "planted-feature recovery", pass_if(r0 >= 0.90 && r1 >= 0.90 && f >= 0.95 && secs < 300.0),
       "key recovery at K=5 class0 " + fmt(r0) + ", class1 " + fmt(r1) + " (>= 0.90); faithfulness " + fmt(f) +
           " (>= 0.95); " + fmt(secs, 1) + " s (limit 300 s)");
}

// ---------------------------------------------------------------------------
// IMDB desk subset (criteria 4, 5, 6): only when the corpus is present.

bool imdb_available() { return fs::is_directory(data::resolve_data_path("aclImdb")); }

struct DeskRun {
  data::Dataset ds;
  std::unique_ptr<blackbox::BlackBox> bb;
  double bb_accuracy = 0.0;
  std::unique_ptr<AimModel> full;
  double seconds = 0.0;
};

TrainConfig desk_train_config(Mode mode) {
  TrainConfig c;
  c.alpha = 1.8;
  c.beta = 1e-3;
  c.tau = 0.2;
  c.mode = mode;
  c.dev_k = 10;
  c.epochs = 5;
  return c;
}

DeskRun desk_run(const data::DatasetConfig& dc, const blackbox::BlackBoxConfig& bc) {
  DeskRun run;
  Timer t;
  run.ds = data::load_dataset_cached(dc);
  blackbox::BlackBoxLog log;
  run.bb = blackbox::train_blackbox(run.ds, bc, &log);
  run.bb_accuracy = log.test_accuracy;
  run.full = std::make_unique<AimModel>(core::train(desk_train_config(Mode::kFull), *run.bb, run.ds));
  run.seconds = t.seconds();
  return run;
}

blackbox::BlackBoxConfig gru_config(std::size_t width) {
  blackbox::BlackBoxConfig bc;
  bc.arch = "gru";
  bc.embed = width;
  bc.hidden = width;
  bc.epochs = 5;
  return bc;
}

DeskRun& imdb_run() {
  static DeskRun r = [] {
    data::DatasetConfig dc;
    dc.name = "imdb";
    dc.train = 5000;
    dc.dev = 1000;
    dc.test = 1000;
    dc.d = 400;
    dc.max_vocab = 20000;
    return desk_run(dc, gru_config(64));
  }();
  return r;
}

// Stand-in when the IMDB corpus is absent; reported as info only, never as a status.
DeskRun& proxy_run() {
  static DeskRun r = [] {
    data::DatasetConfig dc;
    dc.name = "synthetic-sentiment";
    dc.train = 2000;
    dc.dev = 400;
    dc.test = 400;
    dc.d = 100;
    return desk_run(dc, gru_config(32));
  }();
  return r;
}

// ---------------------------------------------------------------------------
// 4. Ablation ordering

struct Ablation {
  double full = 0, from_selector = 0, selector_only = 0, explainer_only = 0;
  bool ordered() const {
    return full > from_selector && full > selector_only && full > explainer_only && full - explainer_only >= 0.10;
  }
  std::string text() const {
    return "full " + fmt(full) + ", infer-from-selector " + fmt(from_selector) + ", selector-only " + fmt(selector_only) +
           ", explainer-only " + fmt(explainer_only) + " (gap " + fmt(100 * (full - explainer_only), 1) + " pts)";
  }
};

Ablation ablate(const data::Dataset& ds, const blackbox::BlackBox& bb, const AimModel& full,
                const std::function<TrainConfig(Mode)>& cfg, std::size_t k) {
  const auto xs = data::inputs_of(ds.test);
  Ablation a;
  a.full = faith_at(full, bb, xs, k, false);
  a.from_selector = faith_at(full, bb, xs, k, true);
  a.selector_only = faith_at(core::train(cfg(Mode::kSelectorOnly), bb, ds), bb, xs, k, true);
  a.explainer_only = faith_at(core::train(cfg(Mode::kExplainerOnly), bb, ds), bb, xs, k, false);
  return a;
}

void criterion4() {
  auto& run = rule_run();
  const auto syn = ablate(run.ds, *run.bb, *run.full, rule_train_config, 5);
  std::string detail = "synthetic K=5: " + syn.text() + (syn.ordered() ? " ordered" : " NOT ordered");
  Status s = pass_if(syn.ordered());
  if (imdb_available()) {
    auto& im = imdb_run();
    const auto imdb = ablate(im.ds, *im.bb, *im.full, desk_train_config, 10);
    detail += "; IMDB K=10: " + imdb.text() + (imdb.ordered() ? " ordered" : " NOT ordered");
    if (!imdb.ordered()) s = Status::kFail;
  } else {
    detail += "; IMDB half not run (aclImdb not found under " + data::data_root().string() + ")";
    if (s == Status::kPass) s = Status::kSkip;
  }
  emit(4, "ablation ordering", s, detail);
  if (!imdb_available()) {
    auto& p = proxy_run();
    const auto px = ablate(p.ds, *p.bb, *p.full, desk_train_config, 10);
    info("synthetic-sentiment proxy K=10: " + px.text() + (px.ordered() ? " ordered" : " not ordered"));
  }
}

// ---------------------------------------------------------------------------
// 5. Desk-scale faithfulness

void criterion5() {
  if (!imdb_available()) {
    emit(5, "desk-scale faithfulness", Status::kSkip,
         "aclImdb not found under " + data::data_root().string() + "; set AIM_DATA_ROOT to run");
    auto& p = proxy_run();
    info("synthetic-sentiment proxy: GRU accuracy " + fmt(p.bb_accuracy) + ", faithfulness at K=10 " +
         fmt(faith_at(*p.full, *p.bb, data::inputs_of(p.ds.test), 10, false)) + ", " + fmt(p.seconds, 1) +
         " s for black box + explainer");
    return;
  }
  auto& im = imdb_run();
  const double f = faith_at(*im.full, *im.bb, data::inputs_of(im.ds.test), 10, false);
  emit(5, "desk-scale faithfulness", pass_if(im.bb_accuracy >= 0.80 && f >= 0.90 && im.seconds <= 2700.0),
       "black-box accuracy " + fmt(im.bb_accuracy) + " (>= 0.80); faithfulness at K=10 " + fmt(f) + " (>= 0.90); " +
           fmt(im.seconds / 60.0, 1) + " min (limit 45)");
}

// ---------------------------------------------------------------------------
// 6. K nesting and monotonicity

bool nested(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const std::set<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  return std::includes(sb.begin(), sb.end(), sa.begin(), sa.end());
}

std::size_t nesting_violations(const AimModel& m, const blackbox::BlackBox& bb, const std::vector<FeatureVector>& xs) {
  const auto y = blackbox::predict_labels(bb, xs);
  const auto k5 = kept_sets(m, xs, y, 5, false), k10 = kept_sets(m, xs, y, 10, false), k20 = kept_sets(m, xs, y, 20, false);
  const auto again = kept_sets(m, xs, y, 10, false);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    bad += (nested(k5[i], k10[i]) && nested(k10[i], k20[i]) && again[i] == k10[i]) ? 0u : 1u;
  }
  return bad;
}

void criterion6() {
  auto& run = rule_run();
  const auto xs = data::inputs_of(run.ds.test);
  const std::size_t bad = nesting_violations(*run.full, *run.bb, xs);
  std::string detail = "synthetic: top-5 in top-10 in top-20 on " + std::to_string(xs.size() - bad) + "/" +
                       std::to_string(xs.size()) + " test instances";
  Status s = pass_if(bad == 0);
  if (imdb_available()) {
    auto& im = imdb_run();
    const auto ix = data::inputs_of(im.ds.test);
    const std::size_t ib = nesting_violations(*im.full, *im.bb, ix);
    const double f5 = faith_at(*im.full, *im.bb, ix, 5, false), f10 = faith_at(*im.full, *im.bb, ix, 10, false),
                 f20 = faith_at(*im.full, *im.bb, ix, 20, false);
    detail += "; IMDB nesting " + std::to_string(ix.size() - ib) + "/" + std::to_string(ix.size()) + ", faithfulness K=5/10/20 " +
              fmt(f5) + " / " + fmt(f10) + " / " + fmt(f20);
    if (ib != 0 || !(f5 <= f10 && f10 <= f20)) s = Status::kFail;
  } else {
    detail += "; IMDB monotonicity not run (aclImdb not found)";
    if (s == Status::kPass) s = Status::kSkip;
  }
  emit(6, "K nesting and monotonicity", s, detail);
  if (!imdb_available()) {
    auto& p = proxy_run();
    const auto px = data::inputs_of(p.ds.test);
    const std::size_t pb = nesting_violations(*p.full, *p.bb, px);
    info("synthetic-sentiment proxy: nesting " + std::to_string(px.size() - pb) + "/" + std::to_string(px.size()) +
         ", faithfulness K=5/10/20 " + fmt(faith_at(*p.full, *p.bb, px, 5, false)) + " / " +
         fmt(faith_at(*p.full, *p.bb, px, 10, false)) + " / " + fmt(faith_at(*p.full, *p.bb, px, 20, false)));
  }
}

// ---------------------------------------------------------------------------
// 7. Multi-class separation

void criterion7() {
  auto& run = rule_run();
  const auto xs = data::inputs_of(run.ds.test);
  const auto y = blackbox::predict_labels(*run.bb, xs);
  std::vector<std::vector<std::vector<std::string>>> per_class;
  std::vector<double> cf;
  for (int c = 0; c < 2; ++c) {
    const auto kept = kept_sets(*run.full, xs, std::vector<int>(xs.size(), c), 5, false);
    std::vector<std::vector<std::string>> toks;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<std::string> t;
      for (std::size_t s : kept[i]) t.push_back(run.ds.space.display(xs[i], s));
      toks.push_back(std::move(t));
    }
    per_class.push_back(std::move(toks));
    cf.push_back(metrics::mean(metrics::class_specific_faithfulness(*run.bb, xs, kept, c)));
  }
  const double iou = metrics::mean(metrics::pairwise_iou(per_class));
  emit(7, "multi-class separation", pass_if(iou <= 0.10 && cf[0] >= 0.85 && cf[1] >= 0.85),
       "pairwise IoU at K=5 " + fmt(iou) + " (<= 0.10); class-specific faithfulness class0 " + fmt(cf[0]) + ", class1 " +
           fmt(cf[1]) + " (>= 0.85)");
}

// ---------------------------------------------------------------------------
// 8. Metric oracles (independent brute-force versions)

const std::vector<std::string>& token_pool() {
  static const std::vector<std::string> p = {"the",   "a",      "of",   ",",     ".",        "!",     "movie", "film",
                                             "awful", "dreadful", "terrible", "bad", "good", "great", "fine", "plot",
                                             "story", "tale",   "big",  "large", "<pad>",    "and",   "quick", "fast"};
  return p;
}

std::vector<std::string> fuzz_tokens(Rng& rng, std::size_t lo, std::size_t hi) {
  const auto n = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(token_pool()[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(token_pool().size()) - 1))]);
  }
  return out;
}

double bf_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> x(a.begin(), a.end()), y(b.begin(), b.end()), inter, uni;
  for (const auto& t : x) {
    uni.insert(t);
    if (y.count(t)) inter.insert(t);
  }
  for (const auto& t : y) uni.insert(t);
  return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::size_t bf_brevity(const std::vector<std::string>& tokens, const metrics::SynonymDb& db) {
  std::vector<std::string> t;
  for (const auto& s : tokens) {
    if (s != "<pad>") t.push_back(s);
  }
  const std::size_t n = t.size();
  std::vector<std::size_t> comp(n);
  for (std::size_t i = 0; i < n; ++i) comp[i] = i;
  // Relabel until stable over all linked pairs.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto& a = db.ids(t[i]);
        const auto& b = db.ids(t[j]);
        bool linked = t[i] == t[j];
        for (const auto& x : a) linked = linked || std::find(b.begin(), b.end(), x) != b.end();
        if (linked && comp[i] != comp[j]) {
          const auto lo = std::min(comp[i], comp[j]);
          comp[i] = comp[j] = lo;
          changed = true;
        }
      }
    }
  }
  return std::set<std::size_t>(comp.begin(), comp.end()).size();
}

void criterion8() {
  Timer t;
  Rng rng(8);
  data::StopLexicon lex;
  const auto db = metrics::SynonymDb::load(metrics::default_synonym_path());
  std::size_t mismatches = 0;
  double worst = 0.0;
  auto check = [&](double a, double b) {
    const double e = std::abs(a - b);
    worst = std::max(worst, e);
    if (e > 1e-10) ++mismatches;
  };
  std::size_t exact_bad = 0;
  for (int it = 0; it < 100; ++it) {
    // purity
    const auto s = fuzz_tokens(rng, 0, 12);
    double n = 0, k = 0;
    for (const auto& w : s) {
      if (w == "<pad>") continue;
      n += 1;
      const bool stop = w == "the" || w == "a" || w == "of" || w == "," || w == "." || w == "!" || w == "and";
      k += stop ? 1 : 0;
    }
    check(metrics::purity(s, lex), n == 0 ? 0.0 : k / n);
    // brevity on <= 6 tokens
    const auto b = fuzz_tokens(rng, 0, 6);
    exact_bad += metrics::brevity(b, db) == bf_brevity(b, db) ? 0u : 1u;
    // IoU
    const auto u = fuzz_tokens(rng, 0, 8), v = fuzz_tokens(rng, 0, 8);
    exact_bad += metrics::jaccard(u, v) == bf_jaccard(u, v) ? 0u : 1u;
    std::vector<std::vector<std::string>> nb;
    for (int j = 0; j < 3; ++j) nb.push_back(fuzz_tokens(rng, 0, 8));
    auto content = [&](const std::vector<std::string>& x) {
      std::vector<std::string> o;
      for (const auto& w : x) {
        if (w != "<pad>" && !lex.contains(w)) o.push_back(w);
      }
      return o;
    };
    double st = 0.0;
    for (const auto& m : nb) st += bf_jaccard(content(u), content(m));
    check(metrics::iou_stability(u, nb, lex), st / 3.0);
    // delta log-odds from probabilities
    const double p0 = open_unit(rng), p1 = open_unit(rng);
    auto lo = [](double p) {
      p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
      return std::log(p) - std::log1p(-p);
    };
    check(metrics::delta_log_odds(p0, p1), lo(p0) - lo(p1));
  }

  // Delta log-odds through a black box on small text instances.
  auto space = data::build_vocab({{"good", "bad", "t1", "t2", "t3"}}, 100, 6);
  auto bb = blackbox::make_rule_blackbox({{{space.token_id("good")}, {space.token_id("bad")}}, 0.7, false}, space);
  const std::vector<std::string> words = {"good", "bad", "t1", "t2", "t3"};
  for (int it = 0; it < 100; ++it) {
    std::vector<std::string> doc;
    const auto len = static_cast<std::size_t>(uniform_int(rng, 2, 6));
    for (std::size_t i = 0; i < len; ++i) doc.push_back(words[static_cast<std::size_t>(uniform_int(rng, 0, 4))]);
    const auto x = data::encode_text(doc, space);
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < len; ++i) {
      if (open_unit(rng) < 0.4) sel.push_back(i);
    }
    const RowVector full = bb->predict_proba(x);
    const int c = full(1) > full(0) ? 1 : 0;
    for (auto mode : {metrics::LogOddsMode::kPositive, metrics::LogOddsMode::kNegative}) {
      FeatureVector m = x;
      for (std::size_t i = 0; i < 6; ++i) {
        const bool in_s = std::find(sel.begin(), sel.end(), i) != sel.end();
        if (mode == metrics::LogOddsMode::kPositive ? in_s : !in_s) m.tokens[i] = data::kSentinel;
      }
      const double after = bb->predict_proba(m)(c);
      auto lo = [](double p) {
        p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
        return std::log(p / (1.0 - p));
      };
      check(metrics::delta_log_odds(*bb, {x}, {sel}, mode)[0], lo(full(c)) - lo(after));
    }
  }

  // Neighbor index vs exhaustive scan on 50 documents.
  std::vector<std::vector<std::string>> docs;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    docs.push_back(fuzz_tokens(rng, 0, 10));
    labels.push_back(static_cast<int>(uniform_int(rng, 0, 1)));
  }
  metrics::HashedEmbedder emb(16, 3);
  const auto idx = metrics::build_neighbor_index(docs, labels, emb, 10);
  std::size_t nbr_bad = 0;
  for (std::size_t a = 0; a < docs.size(); ++a) {
    std::vector<std::tuple<double, std::size_t>> lex_r, sem_r;
    auto strip = [](const std::vector<std::string>& d) {
      std::vector<std::string> o;
      for (const auto& w : d) {
        if (w != "<pad>") o.push_back(w);
      }
      return o;
    };
    for (std::size_t j = 0; j < docs.size(); ++j) {
      if (j == a || labels[j] != labels[a]) continue;
      const auto x = strip(docs[a]), y = strip(docs[j]);
      const double l = x.empty() && y.empty() ? 0.0 : bf_jaccard(x, y);
      const RowVector ea = emb.embed(docs[a]), ej = emb.embed(docs[j]);
      const double den = ea.norm() * ej.norm();
      lex_r.emplace_back(-l, j);
      sem_r.emplace_back(den == 0.0 ? -0.0 : -(ea.dot(ej) / den), j);
    }
    std::sort(lex_r.begin(), lex_r.end());
    std::sort(sem_r.begin(), sem_r.end());
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < lex_r.size() && want.size() < 10; ++i) want.push_back(std::get<1>(lex_r[i]));
    for (std::size_t i = 0; i < sem_r.size() && want.size() < 20; ++i) {
      if (std::find(want.begin(), want.end(), std::get<1>(sem_r[i])) == want.end()) want.push_back(std::get<1>(sem_r[i]));
    }
    nbr_bad += want == idx.neighbors[a] ? 0u : 1u;
  }
  emit(8, "metric oracle equivalence",
       pass_if(mismatches == 0 && exact_bad == 0 && nbr_bad == 0),
       "purity/IoU-stability/log-odds max abs diff " + sci(worst) + " (tol 1e-10), " + std::to_string(mismatches) +
           " over tol; set metrics (brevity, Jaccard) exact mismatches " + std::to_string(exact_bad) +
           "; neighbor index mismatches " + std::to_string(nbr_bad) + "/50; " + fmt(t.seconds(), 1) + " s");
}

// ---------------------------------------------------------------------------
// 9. Determinism through the command-line entry point

int run_process(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void criterion9() {
  expcli::ExperimentConfig cfg;
  cfg.dataset = rule_config();
  cfg.aim = rule_train_config(Mode::kFull);
  cfg.k = {5, 10, 20};
  std::vector<fs::path> tables, logs;
  const char* cli = std::getenv("AIM_CLI");
  for (const char* out : {"det_a", "det_b"}) {
    cfg.output = (scratch() / out).string();
    if (cli) {
      const auto cfg_path = scratch() / (std::string(out) + ".json");
      expcli::atomic_write(cfg_path, nlohmann::json(cfg).dump(2));
      const std::string base = std::string(cli) + " ";
      if (run_process(base + "train-explainer -q " + cfg_path.string() + " > /dev/null") != 0 ||
          run_process(base + "evaluate -q " + cfg_path.string() + " > /dev/null") != 0) {
        emit(9, "determinism", Status::kFail, "CLI run failed");
        return;
      }
    } else {
      expcli::cmd_evaluate(cfg, std::nullopt);
    }
    tables.push_back(expcli::run_dir(cfg) / "metrics_k5-10-20.tsv");
    logs.push_back(expcli::seed_dir(cfg, 0) / "train_log.tsv");
  }
  const bool same = expcli::read_text(tables[0]) == expcli::read_text(tables[1]) &&
                    expcli::read_text(logs[0]) == expcli::read_text(logs[1]);
  emit(9, "determinism", pass_if(same),
       std::string(cli ? "two CLI runs (train-explainer + evaluate)" : "two library runs") +
           ", separate output dirs: metric tables and training logs " + (same ? "byte-identical" : "DIFFER"));
}

// ---------------------------------------------------------------------------
// 10. Tuning harness

void criterion10() {
  Timer t;
  expcli::ExperimentConfig cfg;
  cfg.dataset = rule_config();
  cfg.aim = rule_train_config(Mode::kFull);
  cfg.k = {5};
  cfg.output = (scratch() / "tune").string();
  const auto st = expcli::cmd_tune(cfg);
  std::istringstream in(expcli::read_text(st.dir / "tune.tsv"));
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0;
  double best = -1.0;
  std::string ba, bb;
  std::set<std::pair<std::string, std::string>> cells;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string a, b, f;
    std::getline(ls, a, '\t');
    std::getline(ls, b, '\t');
    std::getline(ls, f, '\t');
    cells.emplace(a, b);
    if (std::stod(f) > best) {
      best = std::stod(f);
      ba = a;
      bb = b;
    }
    ++rows;
  }
  const auto bj = expcli::read_json(st.dir / "best.json");
  const bool match = expcli::format_number(bj.at("alpha").get<double>()) == ba &&
                     expcli::format_number(bj.at("beta").get<double>()) == bb;
  emit(10, "tuning harness", pass_if(rows == 18 && cells.size() == 18 && match && st.final_run.has_value()),
       std::to_string(rows) + " rows (" + std::to_string(cells.size()) + " distinct cells); selected alpha=" +
           expcli::format_number(bj.at("alpha").get<double>()) + " beta=" + expcli::format_number(bj.at("beta").get<double>()) +
           ", table scan gives alpha=" + ba + " beta=" + bb + " (dev faithfulness " + fmt(best) + "); " + fmt(t.seconds(), 1) +
           " s");
}

}  // namespace

int main() {
  ::setenv("AIM_DATA_ROOT_SCRATCH", scratch().c_str(), 1);
  if (std::getenv("AIM_DATA_ROOT") == nullptr) ::setenv("AIM_DATA_ROOT", (scratch() / "data").c_str(), 1);
  const std::vector<std::pair<int, void (*)()>> all = {{1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
                                                       {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8},
                                                       {9, criterion9}, {10, criterion10}};
  for (const auto& [id, fn] : all) {
    try {
      fn();
    } catch (const std::exception& e) {
      emit(id, "criterion " + std::to_string(id), Status::kFail, std::string("error: ") + e.what());
    }
  }
  std::size_t pass = 0, fail = 0, skip = 0;
  for (const auto& l : g_lines) {
    pass += l.status == Status::kPass;
    fail += l.status == Status::kFail;
    skip += l.status == Status::kSkip;
  }
  std::cout << "summary: " << pass << " pass, " << fail << " fail, " << skip << " skip" << std::endl;
  fs::remove_all(scratch());
  if (fail > 0) return 1;
  return skip > 0 ? 77 : 0;
}
