#pragma once

// Plain pre-norm ViT classifier: patchify -> linear embed -> class token and
// positional table -> L blocks of (MSA, FFN) with residuals -> linear head on
// the class token.

#include <cmath>
#include <string>
#include <vector>

#include "gatevit/config.hpp"
#include "gatevit/ops.hpp"
#include "gatevit/rng.hpp"

namespace gatevit {

using nd::Tensor;

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

template <typename T>
struct BlockParams {
  std::vector<Tensor<T>> wq, wk, wv;  // one [D, d_k] matrix per head
  Tensor<T> wo;                       // [D, D], no bias
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
struct BackboneParams {
  ModelConfig config;
  Tensor<T> patch_w;    // [P*P*C, D]
  Tensor<T> patch_b;    // [D]
  Tensor<T> cls_token;  // [D]
  Tensor<T> pos_embed;  // [N+1, D]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> classifier;  // [D, num_classes], no bias

  /// Every tensor zero except layernorm gains (one).
  static BackboneParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t D = cfg.embed_dim, dk = cfg.head_dim(), F = cfg.ffn_hidden();
    BackboneParams p;
    p.config = cfg;
    p.patch_w = Tensor<T>({cfg.patch_dim(), D});
    p.patch_b = Tensor<T>({D});
    p.cls_token = Tensor<T>({D});
    p.pos_embed = Tensor<T>({cfg.tokens(), D});
    p.blocks.resize(cfg.num_blocks);
    for (auto& b : p.blocks) {
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        b.wq.emplace_back(Shape{D, dk});
        b.wk.emplace_back(Shape{D, dk});
        b.wv.emplace_back(Shape{D, dk});
      }
      b.wo = Tensor<T>({D, D});
      b.ln1_gain = Tensor<T>({D}, T{1});
      b.ln1_bias = Tensor<T>({D});
      b.ln2_gain = Tensor<T>({D}, T{1});
      b.ln2_bias = Tensor<T>({D});
      b.fc1_w = Tensor<T>({D, F});
      b.fc1_b = Tensor<T>({F});
      b.fc2_w = Tensor<T>({F, D});
      b.fc2_b = Tensor<T>({D});
    }
    p.classifier = Tensor<T>({D, cfg.num_classes});
    p.for_each([](const std::string& name, Tensor<T>& t) { t.set_requires_grad(true).set_name(name); });
    return p;
  }

  /// Truncated normal (sigma 0.02) projections, class token and positional
  /// table; zero biases; unit layernorm gains.
  static BackboneParams init(const ModelConfig& cfg, Rng& rng) {
    BackboneParams p = zeros(cfg);
    auto fill = [&rng](Tensor<T>& t) {
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(kInitStd));
    };
    fill(p.patch_w);
    fill(p.cls_token);
    fill(p.pos_embed);
    for (auto& b : p.blocks) {
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        fill(b.wq[h]);
        fill(b.wk[h]);
        fill(b.wv[h]);
      }
      fill(b.wo);
      fill(b.fc1_w);
      fill(b.fc2_w);
    }
    fill(p.classifier);
    return p;
  }

  /// Visits every learnable tensor with a stable, unique name.
  template <typename F>
  void for_each(F&& fn) {
    fn("embed.weight", patch_w);
    fn("embed.bias", patch_b);
    fn("cls_token", cls_token);
    fn("pos_embed", pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      const std::string pre = "blocks." + std::to_string(l) + ".";
      for (std::size_t h = 0; h < b.wq.size(); ++h) {
        const std::string hs = std::to_string(h);
        fn(pre + "attn.q." + hs, b.wq[h]);
        fn(pre + "attn.k." + hs, b.wk[h]);
        fn(pre + "attn.v." + hs, b.wv[h]);
      }
      fn(pre + "attn.out", b.wo);
      fn(pre + "norm1.gain", b.ln1_gain);
      fn(pre + "norm1.bias", b.ln1_bias);
      fn(pre + "norm2.gain", b.ln2_gain);
      fn(pre + "norm2.bias", b.ln2_bias);
      fn(pre + "ffn.fc1.weight", b.fc1_w);
      fn(pre + "ffn.fc1.bias", b.fc1_b);
      fn(pre + "ffn.fc2.weight", b.fc2_w);
      fn(pre + "ffn.fc2.bias", b.fc2_b);
    }
    fn("head.weight", classifier);
  }
  template <typename F>
  void for_each(F&& fn) const {
    const_cast<BackboneParams*>(this)->for_each(
        [&fn](const std::string& name, Tensor<T>& t) { fn(name, static_cast<const Tensor<T>&>(t)); });
  }

  BackboneParams clone() const {
    BackboneParams p = zeros(config);
    auto src = tensors();
    std::size_t i = 0;
    p.for_each([&](const std::string&, Tensor<T>& t) {
      std::copy(src[i].data().begin(), src[i].data().end(), t.data().begin());
      ++i;
    });
    return p;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for_each([&out](const std::string&, const Tensor<T>& t) { out.push_back(t); });
    return out;
  }
};

// ---------------------------------------------------------------------------

/// images [B, S, S, C] (channels last) -> patches [B, N, P*P*C]; raster-scan
/// patch order, (row, col, channel) order inside a patch.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, const ModelConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.channels)
    throw ConfigError("patchify: image batch " + shape_str(images.shape()) + " does not match model image " +
                      std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.channels));
  const std::size_t B = images.dim(0), S = cfg.image_size, P = cfg.patch_size, C = cfg.channels;
  const std::size_t grid = S / P, N = cfg.num_patches(), PD = cfg.patch_dim();
  Tensor<T> out({B, N, PD});
  const auto src = images.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        T* o = dst.data() + (b * N + gy * grid + gx) * PD;
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            for (std::size_t c = 0; c < C; ++c)
              *o++ = src[((b * S + gy * P + py) * S + gx * P + px) * C + c];
      }
  return out;
}

/// Token matrix Z_0 [B, N+1, D]: row 0 = cls + E_pos[0], rows 1..N = patch
/// projections + E_pos[j].
template <typename T>
Tensor<T> patchify_embed(const Tensor<T>& images, const BackboneParams<T>& p) {
  const ModelConfig& cfg = p.config;
  Tensor<T> patches = patchify(images, cfg);
  const std::size_t B = patches.dim(0);
  Tensor<T> tokens = nd::add(nd::matmul(patches, p.patch_w), p.patch_b);
  Tensor<T> cls = nd::repeat_leading(nd::reshape(p.cls_token, {1, cfg.embed_dim}), B);
  return nd::add(nd::concat<T>({cls, tokens}, 1), p.pos_embed);
}

/// softmax(Q K^T / sqrt(d_k)) V for one head over z [B, T, D]. When
/// key_weight [B, T] is given, keys enter the softmax with that multiplicity
/// (zero = excluded).
template <typename T>
Tensor<T> attention_head(const Tensor<T>& z, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                         const Tensor<T>* key_weight = nullptr) {
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(wq.dim(1)));
  Tensor<T> q = nd::matmul(z, wq);
  Tensor<T> k = nd::matmul(z, wk);
  Tensor<T> v = nd::matmul(z, wv);
  Tensor<T> logits = nd::scale(nd::matmul(q, k, /*trans_b=*/true), inv_scale);
  Tensor<T> attn = key_weight ? nd::weighted_softmax(logits, *key_weight) : nd::softmax(logits, 2);
  return nd::matmul(attn, v);
}

/// Concat(head_1..head_H) W_O with every head active.
template <typename T>
Tensor<T> msa(const Tensor<T>& z, const BlockParams<T>& b) {
  std::vector<Tensor<T>> heads;
  heads.reserve(b.wq.size());
  for (std::size_t h = 0; h < b.wq.size(); ++h) heads.push_back(attention_head(z, b.wq[h], b.wk[h], b.wv[h]));
  return nd::matmul(nd::concat(heads, 2), b.wo);
}

template <typename T>
Tensor<T> ffn(const Tensor<T>& z, const BlockParams<T>& b) {
  Tensor<T> h = nd::gelu(nd::add(nd::matmul(z, b.fc1_w), b.fc1_b));
  return nd::add(nd::matmul(h, b.fc2_w), b.fc2_b);
}

/// Z' = MSA(LN(Z)) + Z;  Z_next = FFN(LN(Z')) + Z'.
template <typename T>
Tensor<T> block_forward(const Tensor<T>& z, const BlockParams<T>& b) {
  const T eps = static_cast<T>(kLayerNormEps);
  Tensor<T> z1 = nd::add(z, msa(nd::layernorm(z, b.ln1_gain, b.ln1_bias, eps), b));
  return nd::add(z1, ffn(nd::layernorm(z1, b.ln2_gain, b.ln2_bias, eps), b));
}

/// logits [B, classes] = Z_L[:, 0, :] W_cls.
template <typename T>
Tensor<T> classify(const Tensor<T>& z, const BackboneParams<T>& p) {
  if (z.rank() != 3 || z.dim(1) == 0) throw DimensionError("classify: expected [B, T, D], got " + shape_str(z.shape()));
  Tensor<T> cls = nd::reshape(nd::slice(z, 1, 0, 1), {z.dim(0), z.dim(2)});
  return nd::matmul(cls, p.classifier);
}

/// Gate-free reference forward.
template <typename T>
Tensor<T> forward_vanilla(const BackboneParams<T>& p, const Tensor<T>& images) {
  Tensor<T> z = patchify_embed(images, p);
  for (const auto& b : p.blocks) z = block_forward(z, b);
  return classify(z, p);
}

}  // namespace gatevit
