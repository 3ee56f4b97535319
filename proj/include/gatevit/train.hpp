#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatevit/checkpoint.hpp"
#include "gatevit/config.hpp"
#include "gatevit/data.hpp"
#include "gatevit/model.hpp"
#include "gatevit/optim.hpp"

namespace gatevit {

enum class TrainMode {
  Upperbound,  // gate-free backbone
  Adaptive,    // backbone + decision networks, usage loss
  RandomPlus,  // backbone finetuned under freshly drawn random policies
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

/// Draws one hard policy per sample of a batch.
using PolicySampler = std::function<std::vector<SamplePolicy>(std::size_t batch, Rng& rng)>;

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0, tau = 0;
  bool gates_open = false;
  double ce = 0, usage_loss = 0;
  double top1 = 0;         // on the training batches, with the sampled gates
  double mean_gflops = 0;  // of the hard training policies
  double usage_patch = 1, usage_head = 1, usage_block = 1;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  TrainMode mode = TrainMode::Adaptive;
  PolicySampler random_policies;  // RandomPlus only
  std::function<void(const EpochLog&)> on_epoch;
};

/// Fresh parameters for `mode`, drawn from run.seed.
Model make_model(const RunConfig& run, TrainMode mode);

/// Model initialized from train.init_from when set (matching tensors copied),
/// otherwise fresh.
Model initial_model(const RunConfig& run, TrainMode mode);

struct StepStats {
  double ce = 0, usage_loss = 0;
  double usage_patch = 1, usage_head = 1, usage_block = 1;
  std::size_t correct = 0;
  std::vector<SamplePolicy> policies;
};

/// One optimizer step on a batch. Throws NumericError naming the loss or the
/// parameter whose gradient became non-finite.
StepStats train_step(Model& model, AdamW<float>& opt, const nd::Tensor<float>& images, const std::vector<int>& labels,
                     const GateControl& ctl, double usage_weight, const BudgetConfig& budget, double lr,
                     double weight_decay);

AdamW<float> make_optimizer(Model& model, double decision_lr_scale = 1.0);

/// Full training run; returns the trained model.
Model train(const RunConfig& run, const Dataset& data, Model model, const TrainOptions& opts);

struct EvalOptions {
  GateSource source = GateSource::Learned;
  HeadSelectionMode head_mode = HeadSelectionMode::Full;
  const std::vector<SamplePolicy>* external = nullptr;  // one per sample of the dataset
  bool charge_decisions = true;
  std::size_t threads = 1;
  std::size_t batch_size = 256;
};

struct SampleOutcome {
  std::size_t sample_id = 0;
  int label = 0;
  int prediction = 0;
  Difficulty difficulty = Difficulty::Unknown;
  double flops = 0;
  SamplePolicy policy;
};

struct EvalResult {
  std::vector<SampleOutcome> samples;
  double top1 = 0;
  double mean_gflops = 0;
  // Hard usage over gated blocks; patch usage counts patches still alive.
  double usage_patch = 1, usage_head = 1, usage_block = 1;
};

EvalResult evaluate(const Model& model, const Dataset& data, const EvalOptions& opts);

/// Policy record as written to policies.jsonl.
nlohmann::json policy_record(const SampleOutcome& s);

}  // namespace gatevit
