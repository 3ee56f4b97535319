#pragma once

// Analytic FLOP accounting.
//
// Conventions (applied uniformly so ratios are meaningful):
//   multiply-accumulate      2 FLOPs
//   bias add / residual add  1 FLOP per element
//   positional-table add     1 FLOP per element
//   layernorm                5 FLOPs per element
//   softmax                  3 FLOPs per element (exp, sum, div)
//   gelu                     8 FLOPs per element
//   1/sqrt(d_k) scaling      folded into the query projection (free)
//   gate multiplies, sigmoid not counted
//
// Field mapping of the per-block breakdown:
//   qkv_proj     pre-attention layernorm + Q/K/V projections of the heads run
//   attn_logits  Q K^T and the softmax over alive tokens
//   attn_apply   attention-weighted sum of values
//   out_proj     W_O projection (input width = active head dims under Full
//                deactivation) + MSA residual add
//   ffn          pre-FFN layernorm, both linears with bias, gelu, residual add
//   decision_net patch head on alive patches + head and block heads

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatevit/config.hpp"

namespace gatevit {

/// Violated precondition of a pure function (e.g. relaxed gates priced).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Hard decisions of one block for one sample. `patches` are this block's
/// keep decisions (the cumulative alive set is derived by AND-ing blocks).
struct BlockPolicy {
  std::vector<float> patches;    // N
  std::vector<float> heads;      // H
  std::vector<float> sublayers;  // {MSA, FFN}

  static BlockPolicy all_open(const ModelConfig& cfg);
};

struct SamplePolicy {
  std::vector<BlockPolicy> blocks;  // L

  static SamplePolicy all_open(const ModelConfig& cfg);
  /// Cumulative alive patch mask after each block's selection.
  std::vector<std::vector<bool>> alive_patches() const;
};

struct BlockCost {
  std::uint64_t qkv_proj = 0;
  std::uint64_t attn_logits = 0;
  std::uint64_t attn_apply = 0;
  std::uint64_t out_proj = 0;
  std::uint64_t ffn = 0;
  std::uint64_t decision_net = 0;
  std::size_t tokens = 0;        // alive tokens incl. class token
  std::size_t active_heads = 0;  // heads whose attention map is computed
  bool msa_on = true;
  bool ffn_on = true;

  std::uint64_t total() const { return qkv_proj + attn_logits + attn_apply + out_proj + ffn + decision_net; }
};

struct CostReport {
  std::uint64_t embed = 0;
  std::uint64_t classifier = 0;
  std::vector<BlockCost> blocks;

  std::uint64_t block_total() const;
  std::uint64_t decision_total() const;
  std::uint64_t total() const;
  double gflops() const { return static_cast<double>(total()) / 1e9; }
  double mean_kept_patches() const;
  double mean_active_heads() const;
  /// Executed sublayers / 2, i.e. the number of whole-block equivalents run.
  double kept_blocks() const;

  nlohmann::json to_json() const;
};

/// All N patches, H heads and L blocks active; no decision networks.
CostReport static_flops(const ModelConfig& cfg);

/// Cost of one forward pass under a realized hard policy. Decision-network
/// cost is charged for every gated block when `charge_decisions` is set (a
/// learned policy must run them; an externally drawn random policy does not).
CostReport policy_flops(const ModelConfig& cfg, const SamplePolicy& policy, HeadSelectionMode mode,
                        bool charge_decisions = true);

/// "0.0123" style: three significant digits.
std::string format_gflops(double gflops);

/// Per-block text table for terminals.
std::string cost_table(const CostReport& report);

}  // namespace gatevit
