#include "gatevit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace gatevit {

using nlohmann::json;

std::string to_string(HeadSelectionMode mode) { return mode == HeadSelectionMode::Partial ? "partial" : "full"; }

HeadSelectionMode head_mode_from_string(const std::string& s) {
  if (s == "partial" || s == "Partial") return HeadSelectionMode::Partial;
  if (s == "full" || s == "Full") return HeadSelectionMode::Full;
  throw ConfigError("head_mode: expected \"partial\" or \"full\", got \"" + s + "\"");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model." + msg);
  };
  need(patch_size > 0, "patch_size: must be positive");
  need(image_size > 0 && image_size % patch_size == 0, "image_size: must be a positive multiple of patch_size");
  need(channels > 0, "channels: must be positive");
  need(num_heads > 0, "num_heads: must be >= 1");
  need(embed_dim > 0 && embed_dim % num_heads == 0, "embed_dim: must be a positive multiple of num_heads");
  need(num_blocks > 0, "num_blocks: must be >= 1");
  need(ffn_multiplier > 0, "ffn_multiplier: must be positive");
  need(num_classes > 0, "num_classes: must be positive");
  need(first_gated_block <= num_blocks, "first_gated_block: must not exceed num_blocks");
}

void BudgetConfig::validate() const {
  auto gamma_ok = [](double g) { return g > 0.0 && g <= 1.0; };
  if (!gamma_ok(gamma_patch)) throw ConfigError("budget.gamma_patch: must lie in (0, 1]");
  if (!gamma_ok(gamma_head)) throw ConfigError("budget.gamma_head: must lie in (0, 1]");
  if (!gamma_ok(gamma_block)) throw ConfigError("budget.gamma_block: must lie in (0, 1]");
  if (!(tau > 0.0)) throw ConfigError("budget.tau: must be positive");
  if (!(tau_final > 0.0)) throw ConfigError("budget.tau_final: must be positive");
  if (!(usage_weight >= 0.0)) throw ConfigError("budget.usage_weight: must be non-negative");
}

TrainConfig TrainConfig::imagenet_preset() {
  TrainConfig t;
  t.learning_rate = 5e-4;
  t.weight_decay = 0.065;
  t.epochs = 150;
  t.batch_size = 512;
  return t;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be non-negative");
  if (!(min_learning_rate >= 0.0)) throw ConfigError("train.min_learning_rate: must be non-negative");
  if (epochs == 0) throw ConfigError("train.epochs: must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (!(gate_warmup_fraction >= 0.0 && gate_warmup_fraction <= 1.0))
    throw ConfigError("train.gate_warmup_fraction: must lie in [0, 1]");
  if (!(decision_lr_scale > 0.0)) throw ConfigError("train.decision_lr_scale: must be positive");
}

void SyntheticTaskSpec::validate() const {
  if (generator != "glyph_majority") throw ConfigError("data.synthetic.generator: unknown generator \"" + generator + "\"");
  if (cell_size < 3 || image_size % cell_size != 0)
    throw ConfigError("data.synthetic.cell_size: must be >= 3 and divide image_size");
  if (placement != "cell" && placement != "free")
    throw ConfigError("data.synthetic.placement: expected \"cell\" or \"free\", got \"" + placement + "\"");
  if (num_classes < 2 || num_classes > 4) throw ConfigError("data.synthetic.num_classes: must lie in [2, 4]");
  const std::size_t cells = (image_size / cell_size) * (image_size / cell_size);
  if (train_samples == 0 || test_samples == 0) throw ConfigError("data.synthetic: sample counts must be positive");
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw ConfigError("data.synthetic.hard_fraction: must lie in [0, 1]");
  if (easy_glyphs == 0 || easy_glyphs > cells) throw ConfigError("data.synthetic.easy_glyphs: must lie in [1, cells]");
  if (hard_glyphs_min < 3 || hard_glyphs_min > hard_glyphs_max || hard_glyphs_max > cells)
    throw ConfigError("data.synthetic.hard_glyphs_min/max: need 3 <= min <= max <= cells");
  if (!(noise_std >= 0.0)) throw ConfigError("data.synthetic.noise_std: must be non-negative");
  if (!(clutter_density >= 0.0)) throw ConfigError("data.synthetic.clutter_density: must be non-negative");
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction <= 1.0))
    throw ConfigError("data.synthetic.occlusion_fraction: must lie in [0, 1]");
}

void DataConfig::validate() const {
  if (synthetic && !train_folder.empty()) throw ConfigError("data: specify either synthetic or train_folder, not both");
  if (!synthetic && train_folder.empty()) throw ConfigError("data: one of synthetic or train_folder is required");
  if (synthetic) synthetic->validate();
}

void RunConfig::validate() const {
  model.validate();
  budget.validate();
  train.validate();
  data.validate();
  if (data.synthetic) {
    if (data.synthetic->image_size != model.image_size)
      throw ConfigError("data.synthetic.image_size: must equal model.image_size");
    if (data.synthetic->num_classes != model.num_classes)
      throw ConfigError("data.synthetic.num_classes: must equal model.num_classes");
    if (model.channels != 1) throw ConfigError("model.channels: synthetic data is single-channel");
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},   {"patch_size", c.patch_size},     {"channels", c.channels},
          {"embed_dim", c.embed_dim},     {"num_heads", c.num_heads},       {"num_blocks", c.num_blocks},
          {"ffn_multiplier", c.ffn_multiplier}, {"num_classes", c.num_classes},
          {"first_gated_block", c.first_gated_block}};
}

json to_json(const BudgetConfig& c) {
  return {{"gamma_patch", c.gamma_patch}, {"gamma_head", c.gamma_head}, {"gamma_block", c.gamma_block},
          {"tau", c.tau},                 {"tau_final", c.tau_final},   {"usage_weight", c.usage_weight},
          {"straight_through", c.straight_through}};
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"min_learning_rate", c.min_learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_warmup_epochs", c.lr_warmup_epochs},
          {"gate_warmup_fraction", c.gate_warmup_fraction},
          {"decision_bias_init", c.decision_bias_init},
          {"decision_lr_scale", c.decision_lr_scale},
          {"init_from", c.init_from}};
}

json to_json(const SyntheticTaskSpec& c) {
  return {{"generator", c.generator},
          {"image_size", c.image_size},
          {"cell_size", c.cell_size},
          {"placement", c.placement},
          {"num_classes", c.num_classes},
          {"train_samples", c.train_samples},
          {"test_samples", c.test_samples},
          {"hard_fraction", c.hard_fraction},
          {"easy_glyphs", c.easy_glyphs},
          {"hard_glyphs_min", c.hard_glyphs_min},
          {"hard_glyphs_max", c.hard_glyphs_max},
          {"noise_std", c.noise_std},
          {"clutter_density", c.clutter_density},
          {"occlusion_fraction", c.occlusion_fraction}};
}

json to_json(const DataConfig& c) {
  json j = json::object();
  if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
  if (!c.train_folder.empty()) j["train_folder"] = c.train_folder;
  if (!c.test_folder.empty()) j["test_folder"] = c.test_folder;
  return j;
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"budget", to_json(c.budget)}, {"train", to_json(c.train)},
          {"data", to_json(c.data)},   {"head_mode", to_string(c.head_mode)},
          {"output_dir", c.output_dir}, {"seed", c.seed}};
}

namespace {

void require_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!keys.contains(k)) throw ConfigError(path + "." + k + ": unknown key");
}

template <typename V>
void read(const json& j, const std::string& path, const char* key, V& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string where = path + "." + key;
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_same_v<V, std::string>) {
    if (!v.is_string()) throw ConfigError(where + ": expected a string");
    out = v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    out = v.get<V>();
  } else {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
      throw ConfigError(where + ": expected a non-negative integer");
    out = v.get<V>();
  }
}

}  // namespace

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  require_object(j, path,
                 {"image_size", "patch_size", "channels", "embed_dim", "num_heads", "num_blocks", "ffn_multiplier",
                  "num_classes", "first_gated_block"});
  ModelConfig c;
  read(j, path, "image_size", c.image_size);
  read(j, path, "patch_size", c.patch_size);
  read(j, path, "channels", c.channels);
  read(j, path, "embed_dim", c.embed_dim);
  read(j, path, "num_heads", c.num_heads);
  read(j, path, "num_blocks", c.num_blocks);
  read(j, path, "ffn_multiplier", c.ffn_multiplier);
  read(j, path, "num_classes", c.num_classes);
  read(j, path, "first_gated_block", c.first_gated_block);
  return c;
}

BudgetConfig budget_config_from_json(const json& j, const std::string& path) {
  require_object(j, path,
                 {"gamma_patch", "gamma_head", "gamma_block", "tau", "tau_final", "usage_weight", "straight_through"});
  BudgetConfig c;
  read(j, path, "gamma_patch", c.gamma_patch);
  read(j, path, "gamma_head", c.gamma_head);
  read(j, path, "gamma_block", c.gamma_block);
  read(j, path, "tau", c.tau);
  c.tau_final = c.tau;
  read(j, path, "tau_final", c.tau_final);
  read(j, path, "usage_weight", c.usage_weight);
  read(j, path, "straight_through", c.straight_through);
  return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  require_object(j, path,
                 {"learning_rate", "weight_decay", "min_learning_rate", "epochs", "batch_size", "lr_warmup_epochs",
                  "gate_warmup_fraction", "decision_bias_init", "decision_lr_scale", "init_from"});
  TrainConfig c;
  read(j, path, "learning_rate", c.learning_rate);
  read(j, path, "weight_decay", c.weight_decay);
  read(j, path, "min_learning_rate", c.min_learning_rate);
  read(j, path, "epochs", c.epochs);
  read(j, path, "batch_size", c.batch_size);
  read(j, path, "lr_warmup_epochs", c.lr_warmup_epochs);
  read(j, path, "gate_warmup_fraction", c.gate_warmup_fraction);
  read(j, path, "decision_bias_init", c.decision_bias_init);
  read(j, path, "decision_lr_scale", c.decision_lr_scale);
  read(j, path, "init_from", c.init_from);
  return c;
}

SyntheticTaskSpec synthetic_spec_from_json(const json& j, const std::string& path) {
  require_object(j, path,
                 {"generator", "image_size", "cell_size", "placement", "num_classes", "train_samples", "test_samples",
                  "hard_fraction", "easy_glyphs", "hard_glyphs_min", "hard_glyphs_max", "noise_std",
                  "clutter_density", "occlusion_fraction"});
  SyntheticTaskSpec c;
  read(j, path, "generator", c.generator);
  read(j, path, "image_size", c.image_size);
  read(j, path, "cell_size", c.cell_size);
  read(j, path, "placement", c.placement);
  read(j, path, "num_classes", c.num_classes);
  read(j, path, "train_samples", c.train_samples);
  read(j, path, "test_samples", c.test_samples);
  read(j, path, "hard_fraction", c.hard_fraction);
  read(j, path, "easy_glyphs", c.easy_glyphs);
  read(j, path, "hard_glyphs_min", c.hard_glyphs_min);
  read(j, path, "hard_glyphs_max", c.hard_glyphs_max);
  read(j, path, "noise_std", c.noise_std);
  read(j, path, "clutter_density", c.clutter_density);
  read(j, path, "occlusion_fraction", c.occlusion_fraction);
  return c;
}

DataConfig data_config_from_json(const json& j, const std::string& path) {
  require_object(j, path, {"synthetic", "train_folder", "test_folder"});
  DataConfig c;
  if (j.contains("synthetic")) c.synthetic = synthetic_spec_from_json(j.at("synthetic"), path + ".synthetic");
  read(j, path, "train_folder", c.train_folder);
  read(j, path, "test_folder", c.test_folder);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  require_object(j, "config", {"model", "budget", "train", "data", "head_mode", "output_dir", "seed"});
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("budget")) c.budget = budget_config_from_json(j.at("budget"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("data")) {
    c.data = data_config_from_json(j.at("data"));
  } else {
    c.data.synthetic = SyntheticTaskSpec{};
  }
  if (j.contains("head_mode")) {
    if (!j.at("head_mode").is_string()) throw ConfigError("config.head_mode: expected a string");
    c.head_mode = head_mode_from_string(j.at("head_mode").get<std::string>());
  }
  read(j, "config", "output_dir", c.output_dir);
  read(j, "config", "seed", c.seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file " + path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace gatevit
