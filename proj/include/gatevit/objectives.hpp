#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatevit/config.hpp"
#include "gatevit/model.hpp"
#include "gatevit/ops.hpp"

namespace gatevit {

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Mean over the batch of -log softmax(logits)[label]; logits [B, C] or [C].
template <typename T>
nd::Tensor<T> cross_entropy(const nd::Tensor<T>& logits, const std::vector<int>& labels) {
  const std::size_t C = logits.dim(logits.rank() - 1);
  const std::size_t B = logits.size() / C;
  if (labels.size() != B)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
  nd::Tape<T>* tape = nd::recording_tape<T>({&logits});
  nd::Tensor<T> out(Shape{});
  if (tape) out.set_requires_grad(true);
  std::vector<T> probs(logits.size());
  const auto x = logits.data();
  T total{0};
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = x.data() + b * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T s{0};
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const T lse = mx + std::log(s);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = std::exp(row[c] - lse);
  }
  out[0] = total / static_cast<T>(B);
  if (tape) {
    tape->record([logits, out, labels, probs = std::move(probs), B, C]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(B);
      auto gx = logits.grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          gx[b * C + c] += g * (probs[b * C + c] - (static_cast<int>(c) == labels[b] ? T{1} : T{0}));
    });
  }
  return out;
}

/// Forward gate values (straight-through: hard values, relaxed gradients) of
/// every gated block for one training batch.
template <typename T>
struct UsageAccumulator {
  std::vector<nd::Tensor<T>> patch, head, block;

  void add(const BlockRecord<T>& r) {
    if (!r.gated || !r.gates.patch_relaxed.defined()) return;
    patch.push_back(r.patch_usage);
    head.push_back(r.gates.head);
    block.push_back(r.gates.block);
  }
  static UsageAccumulator from(const ForwardResult<T>& f) {
    UsageAccumulator u;
    for (const auto& r : f.blocks) u.add(r);
    return u;
  }
  /// Entries per sample: (L' x N, L' x H, L' x 2).
  std::array<std::size_t, 3> entries_per_sample() const {
    auto per = [](const std::vector<nd::Tensor<T>>& v) {
      std::size_t n = 0;
      for (const auto& t : v) n += t.size() / t.dim(0);
      return n;
    };
    return {per(patch), per(head), per(block)};
  }
  bool empty() const { return patch.empty(); }
};

template <typename T>
struct UsageLoss {
  nd::Tensor<T> loss;
  double mean_patch = 0, mean_head = 0, mean_block = 0;
};

/// (mean M_p - g_p)^2 + (mean M_h - g_h)^2 + (mean M_b - g_b)^2, each mean
/// taken jointly over the batch and the flattened per-network entries.
template <typename T>
UsageLoss<T> usage_loss(const UsageAccumulator<T>& acc, const BudgetConfig& budget) {
  if (acc.empty()) throw std::invalid_argument("usage_loss: no gated blocks recorded");
  auto family = [](const std::vector<nd::Tensor<T>>& parts, double gamma, double& mean_out) {
    std::vector<nd::Tensor<T>> flat;
    for (const auto& t : parts) flat.push_back(nd::reshape(t, {t.size()}));
    nd::Tensor<T> m = nd::mean(nd::concat(flat, 0));
    mean_out = static_cast<double>(m.item());
    nd::Tensor<T> d = nd::affine(m, T{1}, static_cast<T>(-gamma));
    return nd::mul(d, d);
  };
  UsageLoss<T> out;
  nd::Tensor<T> lp = family(acc.patch, budget.gamma_patch, out.mean_patch);
  nd::Tensor<T> lh = family(acc.head, budget.gamma_head, out.mean_head);
  nd::Tensor<T> lb = family(acc.block, budget.gamma_block, out.mean_block);
  out.loss = nd::add(nd::add(lp, lh), lb);
  return out;
}

}  // namespace gatevit
