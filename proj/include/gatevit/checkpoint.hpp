#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "gatevit/backbone.hpp"
#include "gatevit/policy.hpp"

namespace gatevit {

/// Corrupt, truncated or mismatched artifact on disk.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backbone plus (optionally) the decision networks of the gated blocks.
struct Model {
  ModelConfig config;
  BackboneParams<float> backbone;
  std::optional<DecisionParams<float>> decision;

  template <typename F>
  void for_each(F&& fn) {
    backbone.for_each(fn);
    if (decision) decision->for_each(fn);
  }
  template <typename F>
  void for_each(F&& fn) const {
    backbone.for_each(fn);
    if (decision) decision->for_each(fn);
  }
  Model clone() const;
};

/// File layout: "GATEVIT1", u64 little-endian header length, JSON header
/// (model config, tensor index, payload checksum, caller metadata), then the
/// tensors as little-endian float32 in index order.
void save_checkpoint(const std::string& path, const Model& model, const nlohmann::json& metadata = {});

struct LoadedCheckpoint {
  Model model;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copies every tensor of `src` whose name also exists in `dst`; shapes must agree.
void copy_matching(const Model& src, Model& dst);

}  // namespace gatevit
