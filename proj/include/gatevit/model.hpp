#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gatevit/backbone.hpp"
#include "gatevit/cost.hpp"
#include "gatevit/policy.hpp"

namespace gatevit {

/// Where a forward pass takes its gates from.
enum class GateSource {
  Open,      // every gate kept; decision networks not evaluated
  Learned,   // decision networks (sampled in Train, thresholded in Eval)
  External,  // fixed hard per-sample policies (random baselines)
};

struct GateControl {
  GateSource source = GateSource::Learned;
  GateMode mode = GateMode::Eval;
  HeadSelectionMode head_mode = HeadSelectionMode::Full;
  double tau = 5.0;
  bool straight_through = true;
  std::uint64_t noise_seed = 0;
  std::vector<std::uint64_t> noise_keys;           // one per sample (Learned + Train)
  const std::vector<SamplePolicy>* external = nullptr;  // one per sample (External)
};

template <typename T>
struct BlockRecord {
  bool gated = false;
  std::optional<GateProbabilities<T>> probs;  // Learned only
  GateDecisions<T> gates;
  Tensor<T> alive;        // [B, N+1] after this block's patch selection
  Tensor<T> patch_usage;  // [B, N] forward patch gates restricted to patches alive before this block
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  std::vector<BlockRecord<T>> blocks;

  /// Hard per-sample decisions as consumed by the cost model.
  std::vector<SamplePolicy> policies(const ModelConfig& cfg) const {
    const std::size_t B = logits.dim(0), N = cfg.num_patches(), H = cfg.num_heads;
    std::vector<SamplePolicy> out(B, SamplePolicy::all_open(cfg));
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& r = blocks[l];
      if (!r.gated) continue;
      for (std::size_t b = 0; b < B; ++b) {
        BlockPolicy& bp = out[b].blocks[l];
        for (std::size_t j = 0; j < N; ++j) bp.patches[j] = static_cast<float>(r.gates.patch_hard[b * N + j]);
        for (std::size_t j = 0; j < H; ++j) bp.heads[j] = static_cast<float>(r.gates.head_hard[b * H + j]);
        for (std::size_t j = 0; j < 2; ++j) bp.sublayers[j] = static_cast<float>(r.gates.block_hard[b * 2 + j]);
      }
    }
    return out;
  }
};

namespace detail {
template <typename T>
GateDecisions<T> constant_gates(Tensor<T> patch, Tensor<T> head, Tensor<T> block) {
  GateDecisions<T> d;
  d.patch = d.patch_hard = std::move(patch);
  d.head = d.head_hard = std::move(head);
  d.block = d.block_hard = std::move(block);
  return d;
}

template <typename T>
GateDecisions<T> external_gates(const std::vector<SamplePolicy>& policies, std::size_t l, const ModelConfig& cfg) {
  const std::size_t B = policies.size(), N = cfg.num_patches(), H = cfg.num_heads;
  Tensor<T> p({B, N}), h({B, H}), k({B, 2});
  for (std::size_t b = 0; b < B; ++b) {
    const BlockPolicy& bp = policies[b].blocks.at(l);
    if (bp.patches.size() != N || bp.heads.size() != H || bp.sublayers.size() != 2)
      throw DimensionError("external policy: block " + std::to_string(l) + " has wrong gate counts");
    for (std::size_t j = 0; j < N; ++j) p[b * N + j] = static_cast<T>(bp.patches[j]);
    for (std::size_t j = 0; j < H; ++j) h[b * H + j] = static_cast<T>(bp.heads[j]);
    for (std::size_t j = 0; j < 2; ++j) k[b * 2 + j] = static_cast<T>(bp.sublayers[j]);
  }
  return constant_gates(p, h, k);
}
}  // namespace detail

/// Backbone forward with the per-block decision networks and gate
/// application. Blocks before config.first_gated_block run ungated.
template <typename T>
ForwardResult<T> forward_adaptive(const BackboneParams<T>& bb, const DecisionParams<T>* dp, const Tensor<T>& images,
                                  const GateControl& ctl) {
  const ModelConfig& cfg = bb.config;
  if (ctl.source == GateSource::Learned && !dp) throw std::invalid_argument("forward_adaptive: no decision networks");
  const std::size_t B = images.dim(0), N = cfg.num_patches(), Tn = cfg.tokens(), H = cfg.num_heads;
  if (ctl.source == GateSource::External && (!ctl.external || ctl.external->size() != B))
    throw std::invalid_argument("forward_adaptive: external policies must cover every sample");

  ForwardResult<T> res;
  Tensor<T> z = patchify_embed(images, bb);
  Tensor<T> alive({B, Tn}, T{1});
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    const BlockParams<T>& blk = bb.blocks[l];
    BlockRecord<T> rec;
    rec.gated = cfg.is_gated(l);
    if (!rec.gated) {
      z = block_forward(z, blk);
      rec.alive = alive;
      res.blocks.push_back(std::move(rec));
      continue;
    }
    switch (ctl.source) {
      case GateSource::Open:
        rec.gates = detail::constant_gates(Tensor<T>({B, N}, T{1}), Tensor<T>({B, H}, T{1}), Tensor<T>({B, 2}, T{1}));
        break;
      case GateSource::External:
        rec.gates = detail::external_gates<T>(*ctl.external, l, cfg);
        break;
      case GateSource::Learned:
        rec.probs = decision_forward(z, dp->at_block(l));
        rec.gates = sample_gates(*rec.probs, static_cast<T>(ctl.tau), ctl.mode, ctl.straight_through, ctl.noise_seed,
                                 ctl.noise_keys, l);
        break;
    }
    PatchSelection<T> sel = apply_patch_selection(z, rec.gates.patch, rec.gates.patch_hard, alive);
    if (rec.gates.patch_relaxed.defined())
      rec.patch_usage = nd::mul(rec.gates.patch, nd::slice(alive, 1, 1, N));
    z = apply_block_selection(sel.z, blk, rec.gates.block, rec.gates.head, ctl.head_mode, &sel.key_weight, sel.alive);
    alive = sel.alive;
    rec.alive = alive;
    res.blocks.push_back(std::move(rec));
  }
  res.logits = classify(z, bb);
  return res;
}

}  // namespace gatevit
