#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gatevit {

/// Invalid configuration; the message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class HeadSelectionMode { Partial, Full };

std::string to_string(HeadSelectionMode mode);
HeadSelectionMode head_mode_from_string(const std::string& s);

struct ModelConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t channels = 1;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t num_classes = 4;
  // Index (0-based) of the first block that carries a decision network.
  std::size_t first_gated_block = 0;

  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t ffn_hidden() const { return embed_dim * ffn_multiplier; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t gated_blocks() const { return num_blocks > first_gated_block ? num_blocks - first_gated_block : 0; }
  bool is_gated(std::size_t block) const { return block >= first_gated_block; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct BudgetConfig {
  double gamma_patch = 0.5;
  double gamma_head = 0.5;
  double gamma_block = 0.5;
  double tau = 5.0;
  // Final temperature of an optional cosine anneal; equal to tau means fixed.
  double tau_final = 5.0;
  double usage_weight = 1.0;
  bool straight_through = true;

  void validate() const;
  bool operator==(const BudgetConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  double min_learning_rate = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::size_t lr_warmup_epochs = 0;
  // Leading fraction of epochs trained with every gate forced open.
  double gate_warmup_fraction = 0.05;
  // Initial bias of the decision heads (logit of the initial keep probability).
  double decision_bias_init = 2.0;
  // Learning-rate multiplier for the decision networks.
  double decision_lr_scale = 10.0;
  // Optional checkpoint whose backbone (and decision nets, when present)
  // initializes training.
  std::string init_from;

  /// Large-scale recipe: AdamW, lr 5e-4, weight decay 0.065, cosine, 150 epochs.
  static TrainConfig imagenet_preset();

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct SyntheticTaskSpec {
  std::string generator = "glyph_majority";
  std::size_t image_size = 16;
  std::size_t cell_size = 4;
  // "cell": one glyph per grid cell; "free": anywhere, separated by a one
  // pixel gap, so glyphs may straddle cell (patch) borders.
  std::string placement = "free";
  std::size_t num_classes = 4;
  std::size_t train_samples = 8192;
  std::size_t test_samples = 1024;
  double hard_fraction = 0.5;
  std::size_t easy_glyphs = 2;
  std::size_t hard_glyphs_min = 6;
  std::size_t hard_glyphs_max = 8;
  double noise_std = 0.1;
  // Expected number of stray bright pixels per hard image.
  double clutter_density = 0.0;
  // Probability that a glyph loses one of its lit pixels.
  double occlusion_fraction = 0.0;

  void validate() const;
  bool operator==(const SyntheticTaskSpec&) const = default;
};

struct DataConfig {
  std::optional<SyntheticTaskSpec> synthetic;
  std::string train_folder;
  std::string test_folder;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  BudgetConfig budget;
  TrainConfig train;
  DataConfig data;
  HeadSelectionMode head_mode = HeadSelectionMode::Full;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const BudgetConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SyntheticTaskSpec& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const RunConfig& c);

// Strict parsers: unknown keys and ill-typed values raise ConfigError naming
// the field path. Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
BudgetConfig budget_config_from_json(const nlohmann::json& j, const std::string& path = "budget");
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");
SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j, const std::string& path = "data.synthetic");
DataConfig data_config_from_json(const nlohmann::json& j, const std::string& path = "data");
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);

}  // namespace gatevit
