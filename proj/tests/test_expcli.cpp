#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "aim/expcli/explain.hpp"
#include "aim/expcli/pipeline.hpp"
#include "aim/expcli/plot.hpp"

using namespace aim;
using namespace aim::expcli;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("aim_expcli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    ::setenv("AIM_DATA_ROOT", (d / "data").c_str(), 1);
    return d;
  }();
  return dir;
}

struct ScratchCleanup : ::testing::Environment {
  void TearDown() override { fs::remove_all(fs::temp_directory_path() / ("aim_expcli_" + std::to_string(::getpid()))); }
};
const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new ScratchCleanup);

ExperimentConfig small_config(const std::string& out) {
  nlohmann::json j = {{"dataset", {{"name", "synthetic-rule"}, {"train", 300}, {"dev", 60}, {"test", 60}, {"d", 50}}},
                      {"blackbox", {{"arch", "rule"}}},
                      {"aim", {{"epochs", 2}, {"dev_k", 5}}},
                      {"metrics", {{"names", {"faithfulness", "purity", "pairwise_iou", "class_faithfulness"}}}},
                      {"k", {5, 10}},
                      {"seeds", {0}},
                      {"output", (scratch() / out).string()}};
  return parse_experiment(j);
}

std::string slurp(const fs::path& p) { return read_text(p); }

struct CliResult {
  int code = -1;
  std::string out, err;
};

/// Runs the CLI binary named by $AIM_CLI.
CliResult run_cli(const std::string& args) {
  const char* cli = std::getenv("AIM_CLI");
  CliResult r;
  if (cli == nullptr) return r;
  const auto err_file = scratch() / "stderr.txt";
  const std::string cmd = std::string(cli) + " " + args + " 2>" + err_file.string();
  FILE* p = ::popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsAndStrictKeys) {
  const auto c = parse_experiment(nlohmann::json::object());
  EXPECT_EQ(c.k, (std::vector<std::size_t>{5, 10, 20}));
  EXPECT_EQ(c.tune.alphas.size() * c.tune.betas.size(), 18u);
  EXPECT_THROW(parse_experiment({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"dataset", {{"nam", "x"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"aim", {{"alpah", 1}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"aim", {{"seed", 1}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"aim", {{"mode", "half"}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"metrics", {{"names", {"accuracy"}}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"tune", {{"alphas", nlohmann::json::array()}}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"k", "5"}}), ConfigError);
}

TEST(Config, KListValidation) {
  EXPECT_THROW(parse_experiment({{"k", {10, 5}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"k", {5, 5}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"k", {0, 5}}}), ConfigError);
  EXPECT_THROW(parse_experiment({{"dataset", {{"d", 10}}}, {"k", {5, 20}}}), ConfigError);
  EXPECT_EQ(parse_k_list("5,10,20"), (std::vector<std::size_t>{5, 10, 20}));
  EXPECT_EQ(parse_k_list("7"), (std::vector<std::size_t>{7}));
  for (const char* bad : {"", "5,", ",5", "10,5", "5,5", "0", "a", "5;10"}) EXPECT_THROW(parse_k_list(bad), UsageError) << bad;
}

TEST(Config, RoundTripAndHash) {
  auto c = small_config("hash");
  const auto back = parse_experiment(nlohmann::json(c));
  EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(c).dump());
  auto moved = c;
  moved.output = "/elsewhere";
  EXPECT_EQ(experiment_hash(moved), experiment_hash(c));
  auto mode = c;
  mode.aim.mode = core::Mode::kExplainerOnly;
  EXPECT_NE(experiment_hash(mode), experiment_hash(c));
  EXPECT_EQ(blackbox_hash(mode), blackbox_hash(c));
}

TEST(Config, FileErrors) {
  EXPECT_THROW(load_experiment(scratch() / "missing.json"), ConfigError);
  const auto p = scratch() / "broken.json";
  atomic_write(p, "{\"k\": [5,");
  EXPECT_THROW(load_experiment(p), ConfigError);
}

// ---------------------------------------------------------------------------
// Store

TEST(Store, NumbersRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = (open_unit(rng) - 0.5) * std::pow(10.0, static_cast<double>(uniform_int(rng, -8, 8)));
    EXPECT_EQ(std::strtod(format_number(v).c_str(), nullptr), v);
  }
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(0.5), "0.5");
}

TEST(Store, AtomicWriteAndAppendOnlyManifest) {
  const auto dir = scratch() / "store";
  atomic_write(dir / "a.txt", "one");
  atomic_write(dir / "a.txt", "two");
  EXPECT_EQ(slurp(dir / "a.txt"), "two");
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(e.path().filename(), "a.txt");

  Manifest m(dir / "manifest.jsonl");
  m.append({{"event", "x"}, {"i", 0}});
  const std::string first = slurp(m.path());
  m.append({{"event", "y"}, {"i", 1}});
  m.append({{"event", "x"}, {"i", 2}});
  const std::string all = slurp(m.path());
  EXPECT_EQ(all.substr(0, first.size()), first);
  ASSERT_EQ(m.entries().size(), 3u);
  EXPECT_EQ(m.events("x").size(), 2u);
  EXPECT_TRUE(m.entries()[1].contains("time"));
}

// ---------------------------------------------------------------------------
// Stages

TEST(Pipeline, BlackBoxCacheAndForce) {
  auto c = small_config("bbcache");
  const auto a = cmd_train_blackbox(c);
  EXPECT_FALSE(a.cache_hit);
  const auto b = cmd_train_blackbox(c);
  EXPECT_TRUE(b.cache_hit);
  EXPECT_EQ(a.bb->fingerprint(), b.bb->fingerprint());
  Manifest m(a.dir / "manifest.jsonl");
  EXPECT_EQ(m.events("train-blackbox").size(), 1u);
  Options force;
  force.force = true;
  EXPECT_FALSE(cmd_train_blackbox(c, force).cache_hit);
  EXPECT_EQ(m.events("train-blackbox").size(), 2u);
}

TEST(Pipeline, ModeRoundTripsIntoManifest) {
  for (auto mode : {core::Mode::kFull, core::Mode::kExplainerOnly, core::Mode::kSelectorOnly}) {
    auto c = small_config("modes");
    c.aim.mode = mode;
    c.aim.epochs = 1;
    const auto st = cmd_train_explainer(c);
    const auto ev = Manifest(st.dir / "manifest.jsonl").events("train-explainer");
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].at("mode"), core::to_string(mode));
    EXPECT_EQ(ev[0].at("config_hash"), experiment_hash(c));
    EXPECT_EQ(read_json(st.dir / "config.json").at("aim").at("mode"), core::to_string(mode));
    EXPECT_EQ(st.runs[0].model->config().mode, mode);
  }
}

TEST(Pipeline, RerunIsNoOpUnlessForced) {
  auto c = small_config("rerun");
  const auto a = cmd_train_explainer(c);
  EXPECT_FALSE(a.runs[0].cache_hit);
  const auto b = cmd_train_explainer(c);
  EXPECT_TRUE(b.runs[0].cache_hit);
  EXPECT_EQ(a.runs[0].model->fingerprint(), b.runs[0].model->fingerprint());
  EXPECT_EQ(b.runs[0].log.best_epoch, a.runs[0].log.best_epoch);
  Manifest m(a.dir / "manifest.jsonl");
  EXPECT_EQ(m.events("train-explainer").size(), 1u);
  Options force;
  force.force = true;
  const auto f = cmd_train_explainer(c, force);
  EXPECT_FALSE(f.runs[0].cache_hit);
  EXPECT_EQ(f.runs[0].model->fingerprint(), a.runs[0].model->fingerprint());
  EXPECT_EQ(m.events("train-explainer").size(), 2u);
}

TEST(Pipeline, IdenticalConfigsGiveByteIdenticalTables) {
  auto a = small_config("det_a");
  auto b = small_config("det_b");
  const auto ra = cmd_evaluate(a, std::nullopt);
  const auto rb = cmd_evaluate(b, std::nullopt);
  EXPECT_NE(ra.table, rb.table);
  EXPECT_EQ(slurp(ra.table), slurp(rb.table));
  const auto sa = ra.ex.runs[0].dir, sb = rb.ex.runs[0].dir;
  for (const char* f : {"train_log.tsv", "metrics_k5-10.tsv", "details_k5.tsv", "details_k10.tsv", "explainer.json"}) {
    EXPECT_EQ(slurp(sa / f), slurp(sb / f)) << f;
  }
}

TEST(Pipeline, EvaluateOneCheckpointManyK) {
  auto c = small_config("evalk");
  const std::vector<std::size_t> ks = {5, 10, 20};
  const auto st = cmd_evaluate(c, ks);
  const auto rows = parse_metric_table(slurp(st.table));
  EXPECT_EQ(rows.size(), ks.size() * c.metrics.names.size());
  Manifest m(st.ex.dir / "manifest.jsonl");
  EXPECT_EQ(m.events("train-explainer").size(), 1u);
  EXPECT_EQ(m.events("evaluate").size(), 1u);
  EXPECT_EQ(m.events("evaluate")[0].at("k"), nlohmann::json(ks));
  // Manifest results reproduce the table.
  const auto res = m.events("evaluate")[0].at("metrics");
  for (const auto& r : rows) {
    EXPECT_EQ(format_number(res.at(std::to_string(r.k)).at(r.metric).at("mean").get<double>()), r.mean);
  }
  EXPECT_TRUE(cmd_evaluate(c, ks).cache_hit);
  EXPECT_THROW(cmd_evaluate(c, std::vector<std::size_t>{51}), UsageError);
}

TEST(Pipeline, ClassFaithfulnessBreakdownAveragesToMacro) {
  auto c = small_config("classes");
  const auto st = cmd_evaluate(c, std::vector<std::size_t>{5});
  const auto dir = st.ex.runs[0].dir;
  std::istringstream in(slurp(dir / "classes_k5.tsv"));
  std::string line;
  std::getline(in, line);
  double sum = 0.0;
  int n = 0;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string k, cls, v;
    std::getline(ls, k, '\t');
    std::getline(ls, cls, '\t');
    std::getline(ls, v, '\t');
    sum += std::stod(v);
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_NEAR(sum / n, st.reports[0][0].summary("class_faithfulness").mean, 1e-12);
}

TEST(Pipeline, TextMetricsSkippedForTabular) {
  nlohmann::json j = {{"dataset", {{"name", "synthetic-tabular"}, {"train", 200}, {"dev", 50}, {"test", 50}, {"d", 7}}},
                      {"blackbox", {{"arch", "mlp"}, {"epochs", 2}}},
                      {"aim", {{"epochs", 1}, {"dev_k", 3}, {"mask", "mean"}}},
                      {"k", {3}},
                      {"output", (scratch() / "tab").string()}};
  const auto st = cmd_evaluate(parse_experiment(j), std::nullopt);
  const auto rows = parse_metric_table(slurp(st.table));
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.metric);
  EXPECT_TRUE(names.count("faithfulness"));
  EXPECT_TRUE(names.count("log_odds_pos"));
  EXPECT_FALSE(names.count("purity"));
  EXPECT_FALSE(names.count("brevity"));
  EXPECT_FALSE(names.count("iou_stability"));
}

// ---------------------------------------------------------------------------
// Tuning

TEST(Tune, SingleCellIsIdentity) {
  auto c = small_config("tune1");
  c.tune.alphas = {0.7};
  c.tune.betas = {1e-3};
  c.tune.epochs = 1;
  const auto st = cmd_tune(c);
  ASSERT_EQ(st.cells.size(), 1u);
  EXPECT_EQ(st.best, 0u);
  EXPECT_EQ(st.final_config.aim.alpha, 0.7);
  EXPECT_EQ(st.final_config.aim.beta, 1e-3);
  ASSERT_TRUE(st.final_run.has_value());
  EXPECT_EQ(st.final_run->runs[0].model->config().alpha, 0.7);
  EXPECT_EQ(st.final_run->runs[0].model->config().epochs, c.aim.epochs);
}

TEST(Tune, SelectionMatchesTableScan) {
  auto c = small_config("tune4");
  c.tune.alphas = {0.1, 2.0};
  c.tune.betas = {1e-2, 1e-4};
  c.tune.epochs = 1;
  const auto st = cmd_tune(c);
  ASSERT_EQ(st.cells.size(), 4u);
  // Scan the emitted table independently; the first maximum in file order wins.
  std::istringstream in(slurp(st.dir / "tune.tsv"));
  std::string line;
  std::getline(in, line);
  double best = -1.0;
  std::string best_a, best_b;
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string a, b, f;
    std::getline(ls, a, '\t');
    std::getline(ls, b, '\t');
    std::getline(ls, f, '\t');
    if (std::stod(f) > best) {
      best = std::stod(f);
      best_a = a;
      best_b = b;
    }
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  const auto bj = read_json(st.dir / "best.json");
  EXPECT_EQ(format_number(bj.at("alpha").get<double>()), best_a);
  EXPECT_EQ(format_number(bj.at("beta").get<double>()), best_b);
  // Cells are cached; a rerun reads them back.
  const auto again = cmd_tune(c);
  EXPECT_EQ(again.best, st.best);
  EXPECT_EQ(slurp(st.dir / "tune.tsv"), tune_table(again.cells));
}

TEST(Tune, ArgmaxTiesGoToFirstCell) {
  std::vector<TuneCell> cells(4);
  cells[1].dev_faithfulness = 0.9;
  cells[3].dev_faithfulness = 0.9;
  EXPECT_EQ(argmax_cell(cells), 1u);
}

TEST(Tune, SubsampleIsDeterministic) {
  const auto ds = data::load_dataset(small_config("sub").dataset);
  const auto a = subsample(ds, 0.2, 5), b = subsample(ds, 0.2, 5);
  EXPECT_EQ(a.train.size(), 60u);
  EXPECT_EQ(a.dev.size(), 12u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].x.tokens, b.train[i].x.tokens);
  EXPECT_EQ(a.test.size(), ds.test.size());
}

// ---------------------------------------------------------------------------
// Explain

class ExplainTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto c = small_config("explain");
    c.dataset.train = 1000;
    c.aim.epochs = 4;
    auto st = cmd_train_explainer(c);
    seed_dir_ = new fs::path(st.runs[0].dir);
    keys_ = new std::vector<std::set<std::string>>();
    for (const auto& ids : st.bbs.ds.planted->per_class) {
      std::set<std::string> s;
      for (int id : ids) s.insert(st.bbs.ds.space.vocab[static_cast<std::size_t>(id)]);
      keys_->push_back(s);
    }
    // Test documents as raw text lines.
    std::string text;
    for (std::size_t i = 0; i < 40; ++i) {
      const auto toks = data::decode_text(st.bbs.ds.test[i].x, st.bbs.ds.space);
      for (std::size_t t = 0; t < toks.size(); ++t) text += (t ? " " : "") + toks[t];
      text += "\n";
    }
    input_ = new fs::path(scratch() / "explain_in.txt");
    atomic_write(*input_, text);
  }
  static void TearDownTestSuite() {
    delete seed_dir_;
    delete keys_;
    delete input_;
  }
  static fs::path* seed_dir_;
  static std::vector<std::set<std::string>>* keys_;
  static fs::path* input_;
};
fs::path* ExplainTest::seed_dir_ = nullptr;
std::vector<std::set<std::string>>* ExplainTest::keys_ = nullptr;
fs::path* ExplainTest::input_ = nullptr;

TEST_F(ExplainTest, ClassOutOfRange) {
  EXPECT_THROW(cmd_explain(*seed_dir_, *input_, 2, 5, scratch() / "x"), UsageError);
  EXPECT_THROW(cmd_explain(*seed_dir_, *input_, -1, 5, scratch() / "x"), UsageError);
  EXPECT_THROW(cmd_explain(*seed_dir_, *input_, std::nullopt, 51, scratch() / "x"), UsageError);
  EXPECT_THROW(cmd_explain(*seed_dir_, scratch() / "nope.txt", std::nullopt, 5, scratch() / "x"), UsageError);
}

TEST_F(ExplainTest, DefaultClassIsPrediction) {
  const auto r = cmd_explain(*seed_dir_, *input_, std::nullopt, 5, scratch() / "default");
  ASSERT_EQ(r.records.size(), 40u);
  for (const auto& rec : r.records) EXPECT_EQ(rec.e.target_class, rec.y_m);
  std::istringstream in(slurp(r.jsonl));
  std::size_t n = 0;
  for (std::string line; std::getline(in, line); ++n) {
    const auto j = nlohmann::json::parse(line);
    for (const char* f : {"id", "y_m", "target_class", "k", "indices", "tokens", "weights", "pi"}) EXPECT_TRUE(j.contains(f)) << f;
    EXPECT_EQ(j.at("indices").size(), j.at("tokens").size());
  }
  EXPECT_EQ(n, 40u);
}

TEST_F(ExplainTest, RenderingHighlightsPlantedKeys) {
  const auto r = cmd_explain(*seed_dir_, *input_, std::nullopt, 5, scratch() / "render");
  // Bracketed tokens in the rendering, checked against the planted keys of the predicted class.
  std::istringstream in(slurp(r.rendering));
  std::size_t hit = 0, total = 0, inst = 0;
  for (std::string header, body; std::getline(in, header) && std::getline(in, body); ++inst) {
    const auto& keys = (*keys_)[static_cast<std::size_t>(r.records[inst].y_m)];
    std::istringstream ts(body);
    for (std::string t; ts >> t;) {
      if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
        ++total;
        hit += keys.count(t.substr(1, t.size() - 2));
      }
    }
  }
  EXPECT_EQ(inst, 40u);
  EXPECT_EQ(total, 200u);
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(total), 0.9);
}

// ---------------------------------------------------------------------------
// Plot

TEST(Plot, EmptyListIsAnError) { EXPECT_THROW(cmd_plot({}, scratch() / "p0"), UsageError); }

TEST(Plot, SidecarMatchesReportExactly) {
  const auto table = scratch() / "plot_in.tsv";
  atomic_write(table, std::string(kTableHeader) + "\n" +
                          "ds\taim-full\t5\tfaithfulness\t0.93000000000000005\t0.01\t3\n"
                          "ds\taim-full\t10\tfaithfulness\t0.9812\t0\t3\n"
                          "ds\taim-full\t5\tpurity\t0.125\t0\t3\n"
                          "ds\taim-full\t10\tpurity\t0.25\t0\t3\n"
                          "ds\taim-explainer-only\t10\tfaithfulness\t0.5\t0\t3\n");
  const auto res = cmd_plot({table}, scratch() / "p1");
  EXPECT_TRUE(fs::exists(scratch() / "p1" / "faithfulness_vs_k.svg"));
  const auto rows = parse_metric_table(slurp(table));
  std::istringstream side(slurp(scratch() / "p1" / "faithfulness_vs_k.tsv"));
  std::string line;
  std::getline(side, line);
  std::size_t n = 0;
  for (; std::getline(side, line); ++n) {
    std::stringstream ls(line);
    std::string series, k, v;
    std::getline(ls, series, '\t');
    std::getline(ls, k, '\t');
    std::getline(ls, v, '\t');
    bool found = false;
    for (const auto& r : rows) {
      if (r.metric == "faithfulness" && r.dataset + "/" + r.explainer == series && std::to_string(r.k) == k) {
        EXPECT_EQ(v, r.mean);
        found = true;
      }
    }
    EXPECT_TRUE(found) << line;
  }
  EXPECT_EQ(n, 3u);
  EXPECT_EQ(slurp(scratch() / "p1" / "bar_purity.tsv"), "series\tk\tpurity\nds/aim-full\t10\t0.25\n");
}

TEST(Plot, SingleReportSinglePoint) {
  const auto table = scratch() / "plot_one.tsv";
  atomic_write(table, std::string(kTableHeader) + "\nds\taim-full\t10\tfaithfulness\t0.75\t0\t1\n");
  cmd_plot({table}, scratch() / "p2");
  EXPECT_EQ(slurp(scratch() / "p2" / "faithfulness_vs_k.tsv"), "series\tk\tfaithfulness\nds/aim-full\t10\t0.75\n");
  const auto svg = slurp(scratch() / "p2" / "faithfulness_vs_k.svg");
  EXPECT_EQ(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
}

TEST(Plot, RejectsNonTables) {
  const auto bad = scratch() / "not_table.tsv";
  atomic_write(bad, "hello\n");
  EXPECT_THROW(cmd_plot({bad}, scratch() / "p3"), std::runtime_error);
  EXPECT_THROW(cmd_plot({scratch() / "absent.tsv"}, scratch() / "p3"), UsageError);
}

// ---------------------------------------------------------------------------
// CLI process

TEST(Cli, ExitCodes) {
  if (std::getenv("AIM_CLI") == nullptr) GTEST_SKIP() << "AIM_CLI not set";
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  auto r = run_cli("train-explainer " + (scratch() / "missing.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  const auto cfg = scratch() / "cli.json";
  atomic_write(cfg, nlohmann::json(small_config("cli")).dump());
  r = run_cli("train-explainer " + cfg.string() + " --mode sideways");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sideways"), std::string::npos);
  EXPECT_EQ(run_cli("evaluate " + cfg.string() + " --k 10,5").code, 1);

  const auto bad = scratch() / "cli_bad.json";
  atomic_write(bad, R"({"aim": {"tau": 0}})");
  EXPECT_EQ(run_cli("train-blackbox " + bad.string()).code, 2);

  r = run_cli("train-blackbox -q " + cfg.string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.err, "");
  EXPECT_TRUE(fs::exists(fs::path(r.out.substr(0, r.out.find('\n')))));
  EXPECT_EQ(run_cli("plot").code, 1);
}
