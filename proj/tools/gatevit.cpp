#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gatevit/harness.hpp"

using namespace gatevit;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3, kArtifact = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool overwrite = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->required();
  if (needs_out) cmd->add_option("--out", c.out, "Output directory (overrides config and GATEVIT_OUT_DIR)");
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--threads", c.threads, "Evaluation worker threads (overrides GATEVIT_THREADS)");
  cmd->add_flag("--overwrite", c.overwrite, "Replace an existing output directory");
  cmd->add_flag("-v,--verbose", c.verbose, "Print per-epoch logs");
}

// Flags beat environment variables, which beat the config file.
RunConfig resolve(const Common& c) {
  RunConfig run = load_run_config(c.config);
  if (const char* env = std::getenv("GATEVIT_OUT_DIR"); env && *env) run.output_dir = env;
  if (!c.out.empty()) run.output_dir = c.out;
  if (c.seed) run.seed = *c.seed;
  run.validate();
  return run;
}

RunOptions options(const Common& c) {
  RunOptions o;
  o.overwrite = c.overwrite;
  o.quiet = !c.verbose;
  if (const char* env = std::getenv("GATEVIT_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("GATEVIT_THREADS: expected a positive integer, got \"") + env + "\"");
    o.threads = static_cast<std::size_t>(v);
  }
  if (c.threads) {
    if (*c.threads == 0) throw ConfigError("--threads: must be positive");
    o.threads = *c.threads;
  }
  return o;
}

Model load_model(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint " + path + ": no such file");
  return load_checkpoint(path).model;
}

void print_row(const MetricsRow& r) {
  std::cout << metrics_csv({r});
}

int cmd_train(const Common& c, const std::string& mode) {
  const RunConfig run = resolve(c);
  const auto data = load_splits(run);
  const auto r = run_training(run, train_mode_from_string(mode), data, options(c));
  print_row(r.metrics);
  std::cout << "wrote " << r.dir << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& head_mode) {
  RunConfig run = resolve(c);
  if (!head_mode.empty()) run.head_mode = head_mode_from_string(head_mode);
  const Model model = load_model(checkpoint);
  if (!(model.config == run.model)) throw ConfigError("checkpoint " + checkpoint + ": model config differs from --config");
  const auto data = load_splits(run);
  const RunOptions ro = options(c);
  EvalOptions eo;
  eo.head_mode = run.head_mode;
  eo.threads = ro.threads;
  eo.source = model.decision ? GateSource::Learned : GateSource::Open;
  const EvalResult ev = evaluate(model, data.test, eo);
  MetricsRow row;
  row.run_id = fs::path(checkpoint).parent_path().filename().string();
  if (row.run_id.empty()) row.run_id = "eval";
  if (model.decision) {
    row.gamma_patch = run.budget.gamma_patch;
    row.gamma_head = run.budget.gamma_head;
    row.gamma_block = run.budget.gamma_block;
  }
  row.top1 = ev.top1;
  row.gflops = ev.mean_gflops;
  if (!c.out.empty() || std::getenv("GATEVIT_OUT_DIR")) {
    prepare_run_dir(run.output_dir, run, ro.overwrite);
    write_run_outputs(run.output_dir, run, model, ev, data.test, row, {{"evaluated", checkpoint}});
  }
  print_row(row);
  return kOk;
}

int cmd_cost(const Common& c, bool as_json) {
  const RunConfig run = resolve(c);
  const CostReport r = static_flops(run.model);
  if (as_json)
    std::cout << r.to_json().dump(2) << "\n";
  else
    std::cout << cost_table(r);
  return kOk;
}

std::vector<double> parse_triple(const std::string& s, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse \"" + item + "\" as a number");
    }
  }
  if (v.size() != 3) throw ConfigError(what + ": expected three comma-separated values, got \"" + s + "\"");
  return v;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& budgets) {
  const RunConfig run = resolve(c);
  std::vector<BudgetPoint> points;
  for (const auto& b : budgets) {
    const auto v = parse_triple(b, "--budget");
    points.push_back({v[0], v[1], v[2]});
  }
  const auto data = load_splits(run);
  const auto rows = sweep_budgets(points, run, data, options(c));
  std::cout << metrics_csv(rows);
  return kOk;
}

int cmd_analyze(const Common& c, const std::string& policies) {
  const RunConfig run = resolve(c);
  if (!fs::exists(policies)) throw ConfigError("policy dump " + policies + ": no such file");
  const auto dump = read_policy_dump(policies);
  const auto data = load_splits(run);
  const PolicyStats stats = analyze_policies(dump, data.test);
  if (fs::exists(run.output_dir) && !c.overwrite)
    throw ConfigError("output directory " + run.output_dir + " exists (pass --overwrite to replace it)");
  fs::create_directories(run.output_dir);
  write_policy_stats(run.output_dir, stats, dump);
  std::cout << "block,patch_kept,head_kept,block_kept\n";
  for (std::size_t l = 0; l < stats.blocks.size(); ++l) {
    const auto& b = stats.blocks[l];
    std::printf("%zu,%.4f,%.4f,%.4f\n", l, b.patch_mean, b.head_mean, b.block_mean);
  }
  for (const auto& g : stats.groups) std::printf("%s mean_flops %.0f (n=%zu)\n", g.group.c_str(), g.mean, g.count);
  return kOk;
}

int cmd_baseline(const Common& c, const std::string& kind, const std::string& checkpoint, const std::string& fractions,
                 const std::string& policies, const std::string& allocation) {
  const RunConfig run = resolve(c);
  const BaselineKind k = baseline_kind_from_string(kind);
  const Model model = load_model(checkpoint);
  if (!(model.config == run.model)) throw ConfigError("checkpoint " + checkpoint + ": model config differs from --config");
  UsageFractions f = UsageFractions::uniform(run.model, 1, 1, 1);
  if (!fractions.empty() && !policies.empty()) throw ConfigError("baseline: pass --fraction or --policies, not both");
  if (!fractions.empty()) {
    const auto v = parse_triple(fractions, "--fraction");
    f = UsageFractions::uniform(run.model, v[0], v[1], v[2]);
  } else if (!policies.empty()) {
    if (!fs::exists(policies)) throw ConfigError("policy dump " + policies + ": no such file");
    std::vector<SamplePolicy> pols;
    double target = 0;
    for (auto& s : read_policy_dump(policies)) {
      target += s.flops;
      pols.push_back(std::move(s.policy));
    }
    if (pols.empty()) throw DataError("policy dump " + policies + ": no records");
    f = fractions_from_policies(run.model, pols);
    // matched: even allocation over depth at the dump's mean FLOPs
    if (allocation == "matched")
      f = match_flops(run.model, f, target / static_cast<double>(pols.size()), run.head_mode,
                      Rng::mix(run.seed ^ 0x5eed));
  } else if (k != BaselineKind::Upperbound) {
    throw ConfigError("baseline " + kind + ": needs --fraction or --policies");
  }
  const auto data = load_splits(run);
  const auto s = run_baseline(k, run, model, f, data, options(c));
  print_row(s.metrics);
  std::cout << "wrote " << s.dir << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gatevit: adaptive vision transformer experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gatevit 0.1.0");

  Common common;
  std::string mode = "adaptive", checkpoint, head_mode, fraction, policies, kind, allocation = "matched";
  std::vector<std::string> budgets;
  bool as_json = false;

  auto* train = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  add_common(train, common);
  train->add_option("--mode", mode, "adaptive or upperbound")->check(CLI::IsMember({"adaptive", "upperbound"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
  eval->add_option("--head-mode", head_mode, "partial or full (default: config)");

  auto* cost = app.add_subcommand("cost", "Per-block FLOPs of the full model");
  add_common(cost, common, false);
  cost->add_flag("--json", as_json, "Print the cost report as JSON");

  auto* sweep = app.add_subcommand("sweep", "Adaptive runs over several budgets");
  add_common(sweep, common);
  sweep->add_option("--budget", budgets, "gamma_p,gamma_h,gamma_b (repeat; at least two)")->required();

  auto* analyze = app.add_subcommand("analyze", "Policy statistics of an evaluation dump");
  add_common(analyze, common);
  analyze->add_option("--policies", policies, "policies.jsonl of an evaluated run")->required();

  auto* baseline = app.add_subcommand("baseline", "Upperbound, random or random+ baseline");
  add_common(baseline, common);
  baseline->add_option("--kind", kind, "upperbound, random or random+")->required();
  baseline->add_option("--checkpoint", checkpoint, "Trained upperbound checkpoint")->required();
  baseline->add_option("--fraction", fraction, "Uniform kept fractions patch,head,block");
  baseline->add_option("--policies", policies, "Match the usage of this policies.jsonl");
  baseline->add_option("--allocation", allocation,
                       "matched: even over depth at the dump's mean FLOPs; per-block: the dump's per-block fractions")
      ->check(CLI::IsMember({"matched", "per-block"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(common, mode);
    if (*eval) return cmd_eval(common, checkpoint, head_mode);
    if (*cost) return cmd_cost(common, as_json);
    if (*sweep) return cmd_sweep(common, budgets);
    if (*analyze) return cmd_analyze(common, policies);
    if (*baseline) return cmd_baseline(common, kind, checkpoint, fraction, policies, allocation);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
