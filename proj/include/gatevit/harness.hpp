#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatevit/train.hpp"

namespace gatevit {

/// Train/test data for a run: synthetic (seeded by run.seed) or image folders.
DataSplits load_splits(const RunConfig& run);

/// Per-block target kept fractions. `patch[l]` is the fraction of patches
/// still alive after block l; `head[l]` and `block[l]` are gate keep rates.
/// Ungated blocks are always fully open and their entries are ignored.
struct UsageFractions {
  std::vector<double> patch, head, block;

  static UsageFractions uniform(const ModelConfig& cfg, double patch, double head, double block);
  void validate(const ModelConfig& cfg) const;
  nlohmann::json to_json() const;
};

/// Measured per-block fractions of a set of hard policies.
UsageFractions fractions_from_policies(const ModelConfig& cfg, const std::vector<SamplePolicy>& policies);

/// Same family means over the gated blocks as `measured`, spread evenly
/// across depth: constant head and sublayer keep rates, and a constant
/// per-block patch keep rate whose compounded alive fractions average to the
/// measured mean.
UsageFractions spread_evenly(const ModelConfig& cfg, const UsageFractions& measured);

/// Evenly spread fractions whose random policies cost `target_flops` on
/// average (Monte Carlo over `samples` policies drawn from `seed`). All three
/// family rates move together from the measured means.
UsageFractions match_flops(const ModelConfig& cfg, const UsageFractions& measured, double target_flops,
                           HeadSelectionMode mode, std::uint64_t seed, std::size_t samples = 2000);

/// I.i.d. Bernoulli gates for one sample. Patches are subsampled
/// progressively: a patch alive before block l survives with probability
/// patch[l] / patch[l-1], so the alive set only shrinks.
SamplePolicy random_policy(const ModelConfig& cfg, const UsageFractions& f, Rng& rng);
std::vector<SamplePolicy> random_policies(const ModelConfig& cfg, const UsageFractions& f, std::size_t count,
                                          std::uint64_t seed);

struct MetricsRow {
  std::string run_id;
  double gamma_patch = 1, gamma_head = 1, gamma_block = 1;
  double top1 = 0, gflops = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// ---------------------------------------------------------------------------
// policy analytics

struct BlockUsageStats {
  double patch_mean = 1, patch_std = 0;
  double head_mean = 1, head_std = 0;
  double block_mean = 1, block_std = 0;
};

struct FlopsDistribution {
  std::string group;
  std::size_t count = 0;
  double mean = 0, min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
};

struct PolicyStats {
  std::vector<BlockUsageStats> blocks;
  std::vector<FlopsDistribution> groups;  // class_<k>, easy, hard, all
};

/// Reads policies.jsonl records (as written by policy_record).
std::vector<SampleOutcome> read_policy_dump(const std::string& path);

/// Throws DataError when the dump does not describe `data` sample by sample.
PolicyStats analyze_policies(const std::vector<SampleOutcome>& dump, const Dataset& data);

/// Writes stats/{per_block.csv, per_class.csv, patch_masks.csv} under `dir`.
void write_policy_stats(const std::string& dir, const PolicyStats& stats, const std::vector<SampleOutcome>& dump);

struct WelchResult {
  double mean_a = 0, mean_b = 0, t = 0, dof = 0, p_two_sided = 1;
};
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Softmax regression on raw pixels; returns test accuracy.
double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::size_t epochs, double lr,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// runs

enum class BaselineKind { Upperbound, Random, RandomPlus };
std::string to_string(BaselineKind k);
BaselineKind baseline_kind_from_string(const std::string& s);

struct RunOptions {
  std::size_t threads = 1;
  bool overwrite = false;
  bool quiet = true;
};

struct RunSummary {
  std::string dir;
  MetricsRow metrics;
  EvalResult eval;
  Model model;
};

/// Creates `dir` (fails with ConfigError if it exists and overwrite is off)
/// and writes config.json.
void prepare_run_dir(const std::string& dir, const RunConfig& run, bool overwrite);

/// Writes checkpoint.bin, metrics.csv, policies.jsonl and stats/ for an evaluated model.
void write_run_outputs(const std::string& dir, const RunConfig& run, const Model& model, const EvalResult& eval,
                       const Dataset& test, const MetricsRow& row, const nlohmann::json& meta);

/// Trains (upperbound or adaptive, per `mode`), evaluates on the test split
/// and fills run.output_dir.
RunSummary run_training(const RunConfig& run, TrainMode mode, const DataSplits& data, const RunOptions& opts);

/// Upperbound: `model` with all gates open. Random: fresh random policies
/// on `model`, no finetuning. RandomPlus: `model` finetuned for
/// run.train.epochs under per-step random policies, then evaluated under
/// random policies. Writes run.output_dir.
RunSummary run_baseline(BaselineKind kind, const RunConfig& run, const Model& model, const UsageFractions& fractions,
                        const DataSplits& data, const RunOptions& opts);

struct BudgetPoint {
  double gamma_patch, gamma_head, gamma_block;
};

/// One adaptive run per budget under <run.output_dir>/budget_<i>; returns rows
/// sorted by gflops and writes the aggregate <run.output_dir>/metrics.csv.
std::vector<MetricsRow> sweep_budgets(const std::vector<BudgetPoint>& budgets, const RunConfig& run,
                                      const DataSplits& data, const RunOptions& opts);

}  // namespace gatevit
