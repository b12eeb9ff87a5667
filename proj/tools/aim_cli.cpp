// aim: train black boxes and explainers, evaluate, tune, explain and plot.
//
// Exit codes: 0 ok, 1 usage, 2 config invalid, 3 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aim/expcli/explain.hpp"
#include "aim/expcli/pipeline.hpp"
#include "aim/expcli/plot.hpp"

namespace {

using namespace aim::expcli;

int fail(int code, const std::string& what) {
  std::string msg = what;
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "aim: error: " << msg << "\n";
  return code;
}

ExperimentConfig load_with_mode(const std::string& path, const std::string& mode) {
  auto cfg = load_experiment(path);
  if (!mode.empty()) {
    try {
      cfg.aim.mode = aim::core::mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string(e.what()) + " (expected full|infer-from-selector|selector-only|explainer-only)");
    }
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized additive instance-wise explanations"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config, mode, ks, checkpoint, input, out, out_dir = "plots";
  std::optional<int> cls;
  std::size_t k = 10;
  bool force = false, quiet = false;
  std::vector<std::string> reports;

  auto add_common = [&](CLI::App* c) {
    c->add_option("config", config, "Experiment config (JSON)")->required();
    c->add_flag("--force", force, "Recompute even when outputs exist");
    c->add_flag("-q,--quiet", quiet, "No progress output");
  };
  auto* tb = app.add_subcommand("train-blackbox", "Train (or load) the black box for a config");
  add_common(tb);
  auto* te = app.add_subcommand("train-explainer", "Train one explainer per seed");
  add_common(te);
  te->add_option("--mode", mode, "full | infer-from-selector | selector-only | explainer-only");
  auto* ev = app.add_subcommand("evaluate", "Metric reports for every K from one checkpoint per seed");
  add_common(ev);
  ev->add_option("--mode", mode, "full | infer-from-selector | selector-only | explainer-only");
  ev->add_option("--k", ks, "Comma-separated K list, e.g. 5,10,20 (default: the config's k)");
  auto* tu = app.add_subcommand("tune", "Grid search over alpha and beta");
  add_common(tu);
  auto* ex = app.add_subcommand("explain", "Explain instances from a file with a trained checkpoint");
  ex->add_option("checkpoint", checkpoint, "Seed directory or explainer.json")->required();
  ex->add_option("input", input, "One instance per line")->required();
  ex->add_option("--class", cls, "Class to explain (default: the black-box prediction)");
  ex->add_option("--k", k, "Number of features")->capture_default_str();
  ex->add_option("-o,--out", out, "Output prefix (default: <input>.explained)");
  auto* pl = app.add_subcommand("plot", "Charts from metric tables");
  pl->add_option("reports", reports, "Metric tables (.tsv)");
  pl->add_option("-o,--out", out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, e.what());
  }

  Options opt;
  opt.force = force;
  opt.log = quiet ? nullptr : &std::cerr;
  try {
    if (*tb) {
      const auto st = cmd_train_blackbox(load_experiment(config), opt);
      std::cout << (st.dir / "blackbox.json").string() << "\n";
    } else if (*te) {
      const auto st = cmd_train_explainer(load_with_mode(config, mode), opt);
      for (const auto& r : st.runs) std::cout << (r.dir / "explainer.json").string() << "\n";
    } else if (*ev) {
      auto cfg = load_with_mode(config, mode);
      std::optional<std::vector<std::size_t>> kl;
      if (!ks.empty()) kl = parse_k_list(ks);
      const auto st = cmd_evaluate(cfg, kl, opt);
      std::cout << st.table.string() << "\n";
    } else if (*tu) {
      const auto st = cmd_tune(load_experiment(config), opt);
      std::cout << (st.dir / "tune.tsv").string() << "\n";
      const auto& b = st.cells[st.best];
      std::cout << "best alpha=" << format_number(b.alpha) << " beta=" << format_number(b.beta)
                << " dev_faithfulness=" << format_number(b.dev_faithfulness) << "\n";
    } else if (*ex) {
      const auto res = cmd_explain(checkpoint, input, cls, k, out.empty() ? input + ".explained" : out);
      std::cout << res.jsonl.string() << "\n" << res.rendering.string() << "\n";
    } else if (*pl) {
      std::vector<fs::path> paths(reports.begin(), reports.end());
      for (const auto& f : cmd_plot(paths, out_dir).files) std::cout << f.string() << "\n";
    }
  } catch (const UsageError& e) {
    return fail(1, e.what());
  } catch (const ConfigError& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(3, e.what());
  }
  return 0;
}
