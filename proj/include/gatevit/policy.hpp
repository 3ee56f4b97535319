#pragma once

// Per-block decision networks and the application of patch, head and block
// selection on top of the backbone primitives.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gatevit/backbone.hpp"
#include "gatevit/cost.hpp"
#include "gatevit/rng.hpp"

namespace gatevit {

/// Linear policy heads of one gated block: patch head applied per token
/// (D -> 1), head and block heads applied to the class token (D -> H, D -> 2).
template <typename T>
struct DecisionBlock {
  Tensor<T> patch_w, patch_b;  // [D, 1], [1]
  Tensor<T> head_w, head_b;    // [D, H], [H]
  Tensor<T> block_w, block_b;  // [D, 2], [2]
};

template <typename T>
struct DecisionParams {
  ModelConfig config;
  std::vector<DecisionBlock<T>> blocks;  // one per gated block, in order

  static DecisionParams zeros(const ModelConfig& cfg) {
    DecisionParams p;
    p.config = cfg;
    const std::size_t D = cfg.embed_dim, H = cfg.num_heads;
    for (std::size_t l = cfg.first_gated_block; l < cfg.num_blocks; ++l) {
      DecisionBlock<T> b{Tensor<T>({D, 1}), Tensor<T>({1}), Tensor<T>({D, H}),
                         Tensor<T>({H}),    Tensor<T>({D, 2}), Tensor<T>({2})};
      p.blocks.push_back(b);
    }
    p.for_each([](const std::string& name, Tensor<T>& t) { t.set_requires_grad(true).set_name(name); });
    return p;
  }

  static DecisionParams init(const ModelConfig& cfg, Rng& rng, double bias_init = 0.0) {
    DecisionParams p = zeros(cfg);
    for (auto& b : p.blocks) {
      for (Tensor<T>* w : {&b.patch_w, &b.head_w, &b.block_w})
        for (auto& v : w->data()) v = static_cast<T>(rng.truncated_normal(kInitStd));
      for (Tensor<T>* bias : {&b.patch_b, &b.head_b, &b.block_b})
        for (auto& v : bias->data()) v = static_cast<T>(bias_init);
    }
    return p;
  }

  const DecisionBlock<T>& at_block(std::size_t l) const { return blocks.at(l - config.first_gated_block); }

  template <typename F>
  void for_each(F&& fn) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string pre = "decision." + std::to_string(i + config.first_gated_block) + ".";
      auto& b = blocks[i];
      fn(pre + "patch.weight", b.patch_w);
      fn(pre + "patch.bias", b.patch_b);
      fn(pre + "head.weight", b.head_w);
      fn(pre + "head.bias", b.head_b);
      fn(pre + "block.weight", b.block_w);
      fn(pre + "block.bias", b.block_b);
    }
  }
  template <typename F>
  void for_each(F&& fn) const {
    const_cast<DecisionParams*>(this)->for_each(
        [&fn](const std::string& name, Tensor<T>& t) { fn(name, static_cast<const Tensor<T>&>(t)); });
  }
};

/// Pre-sigmoid scores and keep-probabilities of one block, batched.
template <typename T>
struct GateProbabilities {
  Tensor<T> patch_logit, head_logit, block_logit;  // [B,N], [B,H], [B,2]
  Tensor<T> patch, head, block;                    // sigmoid of the above
};

/// m_p[j] = sigmoid(W_p z_j + b_p) for patch rows; m_h, m_b read the class
/// token row.
template <typename T>
GateProbabilities<T> decision_forward(const Tensor<T>& z, const DecisionBlock<T>& d) {
  const std::size_t B = z.dim(0), Tn = z.dim(1), D = z.dim(2);
  GateProbabilities<T> g;
  Tensor<T> patches = nd::slice(z, 1, 1, Tn - 1);
  g.patch_logit = nd::reshape(nd::add(nd::matmul(patches, d.patch_w), d.patch_b), {B, Tn - 1});
  Tensor<T> cls = nd::reshape(nd::slice(z, 1, 0, 1), {B, D});
  g.head_logit = nd::add(nd::matmul(cls, d.head_w), d.head_b);
  g.block_logit = nd::add(nd::matmul(cls, d.block_w), d.block_b);
  g.patch = nd::sigmoid(g.patch_logit);
  g.head = nd::sigmoid(g.head_logit);
  g.block = nd::sigmoid(g.block_logit);
  return g;
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax over the two categories {keep, drop}

struct BinaryRelaxation {
  double keep;
  double drop;
};

/// Two-way Gumbel-Softmax with logits (log p, log(1-p)) perturbed by the
/// given Gumbel draws; returns both coordinates of the temperature-tau softmax.
inline BinaryRelaxation gumbel_softmax_binary(double p, double tau, double g_keep, double g_drop) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax_binary: tau must be positive");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("gumbel_softmax_binary: p must lie in (0, 1)");
  const double a = (std::log(p) + g_keep) / tau;
  const double b = (std::log1p(-p) + g_drop) / tau;
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

inline BinaryRelaxation gumbel_softmax_binary(double p, double tau, Rng& rng) {
  const double gk = rng.gumbel();
  const double gd = rng.gumbel();
  return gumbel_softmax_binary(p, tau, gk, gd);
}

/// Differentiable keep coordinate for a tensor of probabilities p (any
/// shape) with fixed Gumbel draws of the same shape.
template <typename T>
Tensor<T> gumbel_softmax_keep(const Tensor<T>& p, const Tensor<T>& g_keep, const Tensor<T>& g_drop, T tau) {
  if (!(tau > T{0})) throw std::invalid_argument("gumbel_softmax_keep: tau must be positive");
  if (g_keep.shape() != p.shape() || g_drop.shape() != p.shape())
    throw DimensionError("gumbel_softmax_keep: noise shape mismatch");
  for (T v : p.data())
    if (!(v > T{0} && v < T{1})) throw DomainError("gumbel_softmax_keep: probability outside (0, 1)");
  Tensor<T> keep = nd::add(nd::log(p), g_keep);
  Tensor<T> drop = nd::add(nd::log(nd::affine(p, T{-1}, T{1})), g_drop);
  // softmax([keep, drop] / tau)[0] == sigmoid((keep - drop) / tau)
  return nd::sigmoid(nd::scale(nd::sub(keep, drop), T{1} / tau));
}

/// Same relaxation parameterized by the pre-sigmoid score s (p = sigmoid(s)):
/// log p - log(1-p) == s, which stays finite where p saturates.
template <typename T>
Tensor<T> gumbel_keep_from_logit(const Tensor<T>& logit, const Tensor<T>& noise_diff, T tau) {
  if (!(tau > T{0})) throw std::invalid_argument("gumbel_keep_from_logit: tau must be positive");
  return nd::sigmoid(nd::scale(nd::add(logit, noise_diff), T{1} / tau));
}

// ---------------------------------------------------------------------------
// realized decisions

enum class GateMode { Train, Eval };

/// Realized gates of one block for a batch.
template <typename T>
struct GateDecisions {
  // Values multiplied into the network: relaxed in training (hard forward /
  // relaxed backward with straight-through), hard in evaluation.
  Tensor<T> patch, head, block;  // [B,N], [B,H], [B,2]
  // Relaxed Gumbel-Softmax keep coordinates (training only).
  Tensor<T> patch_relaxed, head_relaxed, block_relaxed;
  // Hard {0,1} version of the forward values.
  Tensor<T> patch_hard, head_hard, block_hard;
};

namespace detail {
template <typename T>
Tensor<T> threshold(const Tensor<T>& x, T at) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= at ? T{1} : T{0};
  return out;
}
}  // namespace detail

/// Gumbel draws for one sample and block: N patch pairs, then H head pairs,
/// then 2 block pairs, each pair (keep, drop).
struct GumbelNoise {
  std::vector<double> keep, drop;
  static GumbelNoise draw(std::size_t count, Rng& rng) {
    GumbelNoise g;
    g.keep.resize(count);
    g.drop.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      g.keep[i] = rng.gumbel();
      g.drop[i] = rng.gumbel();
    }
    return g;
  }
};

/// Train: Gumbel-Softmax relaxed gates from per-sample noise streams (noise
/// for sample b, block l comes from Rng::stream(seed, keys[b], l)). Eval:
/// deterministic keep <=> p >= 0.5.
template <typename T>
GateDecisions<T> sample_gates(const GateProbabilities<T>& probs, T tau, GateMode mode, bool straight_through,
                              std::uint64_t seed, const std::vector<std::uint64_t>& keys, std::size_t block) {
  GateDecisions<T> d;
  if (mode == GateMode::Eval) {
    d.patch_hard = detail::threshold(probs.patch, T(0.5));
    d.head_hard = detail::threshold(probs.head, T(0.5));
    d.block_hard = detail::threshold(probs.block, T(0.5));
    d.patch = d.patch_hard;
    d.head = d.head_hard;
    d.block = d.block_hard;
    return d;
  }
  const std::size_t B = probs.patch.dim(0), N = probs.patch.dim(1), H = probs.head.dim(1);
  if (keys.size() != B) throw DimensionError("sample_gates: need one noise key per sample");
  Tensor<T> np({B, N}), nh({B, H}), nb({B, 2});
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = Rng::stream(seed, keys[b], block);
    const GumbelNoise g = GumbelNoise::draw(N + H + 2, rng);
    for (std::size_t j = 0; j < N; ++j) np[b * N + j] = static_cast<T>(g.keep[j] - g.drop[j]);
    for (std::size_t j = 0; j < H; ++j) nh[b * H + j] = static_cast<T>(g.keep[N + j] - g.drop[N + j]);
    for (std::size_t j = 0; j < 2; ++j) nb[b * 2 + j] = static_cast<T>(g.keep[N + H + j] - g.drop[N + H + j]);
  }
  d.patch_relaxed = gumbel_keep_from_logit(probs.patch_logit, np, tau);
  d.head_relaxed = gumbel_keep_from_logit(probs.head_logit, nh, tau);
  d.block_relaxed = gumbel_keep_from_logit(probs.block_logit, nb, tau);
  d.patch_hard = detail::threshold(d.patch_relaxed, T(0.5));
  d.head_hard = detail::threshold(d.head_relaxed, T(0.5));
  d.block_hard = detail::threshold(d.block_relaxed, T(0.5));
  if (straight_through) {
    d.patch = nd::straight_through(d.patch_hard, d.patch_relaxed);
    d.head = nd::straight_through(d.head_hard, d.head_relaxed);
    d.block = nd::straight_through(d.block_hard, d.block_relaxed);
  } else {
    d.patch = d.patch_relaxed;
    d.head = d.head_relaxed;
    d.block = d.block_relaxed;
  }
  return d;
}

// ---------------------------------------------------------------------------
// applying decisions

template <typename T>
struct PatchSelection {
  Tensor<T> z;          // token rows scaled by their gate (class row by 1)
  Tensor<T> key_weight; // [B, N+1] multiplicity of each token as an attention key
  Tensor<T> alive;      // [B, N+1] hard cumulative mask (constant)
};

/// Applies this block's patch gates on top of the cumulative alive mask.
/// Dropped rows become zero, are excluded as attention keys, and stay dead
/// in every later block; the class token is always alive.
template <typename T>
PatchSelection<T> apply_patch_selection(const Tensor<T>& z, const Tensor<T>& gate, const Tensor<T>& gate_hard,
                                        const Tensor<T>& alive_prev) {
  const std::size_t B = z.dim(0), Tn = z.dim(1);
  if (gate.rank() != 2 || gate.dim(0) != B || gate.dim(1) != Tn - 1 || alive_prev.shape() != Shape{B, Tn})
    throw DimensionError("apply_patch_selection: gate " + shape_str(gate.shape()) + " / alive " +
                         shape_str(alive_prev.shape()) + " do not match tokens " + shape_str(z.shape()));
  PatchSelection<T> out;
  Tensor<T> with_cls = nd::concat<T>({Tensor<T>({B, 1}, T{1}), gate}, 1);
  out.key_weight = nd::mul(with_cls, alive_prev);
  out.alive = Tensor<T>({B, Tn});
  for (std::size_t b = 0; b < B; ++b) {
    out.alive[b * Tn] = T{1};
    for (std::size_t j = 1; j < Tn; ++j)
      out.alive[b * Tn + j] = (alive_prev[b * Tn + j] > T{0} && gate_hard[b * (Tn - 1) + j - 1] > T{0}) ? T{1} : T{0};
  }
  out.z = nd::scale_prefix(z, out.key_weight);
  return out;
}

/// MSA over normalized tokens with per-sample head gates [B, H].
/// Partial: head_i = g * Attn_i + (1 - g) * V_i (identity attention when off).
/// Full:    head_i = g * Attn_i (the slice feeding W_O is zeroed when off).
template <typename T>
Tensor<T> apply_head_selection(const Tensor<T>& zn, const BlockParams<T>& b, const Tensor<T>& head_gate,
                               HeadSelectionMode mode, const Tensor<T>* key_weight) {
  const std::size_t B = zn.dim(0), H = b.wq.size();
  if (head_gate.shape() != Shape{B, H})
    throw DimensionError("apply_head_selection: head gates " + shape_str(head_gate.shape()) + ", expected [" +
                         std::to_string(B) + "," + std::to_string(H) + "]");
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(b.wq[0].dim(1)));
  std::vector<Tensor<T>> heads;
  heads.reserve(H);
  for (std::size_t h = 0; h < H; ++h) {
    Tensor<T> g = nd::reshape(nd::slice(head_gate, 1, h, 1), {B});
    Tensor<T> q = nd::matmul(zn, b.wq[h]);
    Tensor<T> k = nd::matmul(zn, b.wk[h]);
    Tensor<T> v = nd::matmul(zn, b.wv[h]);
    Tensor<T> logits = nd::scale(nd::matmul(q, k, true), inv_scale);
    Tensor<T> attn = key_weight ? nd::weighted_softmax(logits, *key_weight) : nd::softmax(logits, 2);
    Tensor<T> out = nd::scale_prefix(nd::matmul(attn, v), g);
    if (mode == HeadSelectionMode::Partial) out = nd::add(out, nd::scale_prefix(v, nd::affine(g, T{-1}, T{1})));
    heads.push_back(out);
  }
  return nd::matmul(nd::concat(heads, 2), b.wo);
}

/// Block with per-sample sublayer gates [B, 2] and per-token row mask:
///   Z' = M_b[0] * MSA(LN(Z)) + Z;   Z_next = M_b[1] * FFN(LN(Z')) + Z'.
/// Sublayer outputs of dead rows are suppressed via `alive`.
template <typename T>
Tensor<T> apply_block_selection(const Tensor<T>& z, const BlockParams<T>& b, const Tensor<T>& block_gate,
                                const Tensor<T>& head_gate, HeadSelectionMode mode, const Tensor<T>* key_weight,
                                const Tensor<T>& alive) {
  const std::size_t B = z.dim(0);
  if (block_gate.shape() != Shape{B, 2})
    throw DimensionError("apply_block_selection: block gates " + shape_str(block_gate.shape()));
  const T eps = static_cast<T>(kLayerNormEps);
  Tensor<T> g_msa = nd::reshape(nd::slice(block_gate, 1, 0, 1), {B});
  Tensor<T> g_ffn = nd::reshape(nd::slice(block_gate, 1, 1, 1), {B});
  Tensor<T> attn = apply_head_selection(nd::layernorm(z, b.ln1_gain, b.ln1_bias, eps), b, head_gate, mode, key_weight);
  Tensor<T> z1 = nd::add(z, nd::scale_prefix(attn, nd::scale_prefix(alive, g_msa)));
  Tensor<T> f = ffn(nd::layernorm(z1, b.ln2_gain, b.ln2_bias, eps), b);
  return nd::add(z1, nd::scale_prefix(f, nd::scale_prefix(alive, g_ffn)));
}

}  // namespace gatevit
