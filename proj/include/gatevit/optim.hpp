#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gatevit/tensor.hpp"

namespace gatevit {

/// Adam with decoupled weight decay. Decay applies to matrices only (rank >= 2),
/// never to biases, norm parameters, tokens or position embeddings.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::string name;
    nd::Tensor<T> param;
    std::vector<double> m, v;
    bool decay = false;
    double lr_scale = 1.0;
  };

  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add(const std::string& name, nd::Tensor<T> p, double lr_scale = 1.0) {
    Slot s;
    s.name = name;
    s.lr_scale = lr_scale;
    s.decay = p.rank() >= 2 && name != "pos_embed" && name != "cls_token";
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    s.param = std::move(p);
    slots_.push_back(std::move(s));
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step(double lr, double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      auto w = s.param.data();
      const auto g = s.param.grad();
      const double slr = lr * s.lr_scale;
      const double shrink = s.decay ? 1.0 - slr * weight_decay : 1.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        s.m[i] = beta1_ * s.m[i] + (1 - beta1_) * gi;
        s.v[i] = beta2_ * s.v[i] + (1 - beta2_) * gi * gi;
        const double upd = (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
        w[i] = static_cast<T>(static_cast<double>(w[i]) * shrink - slr * upd);
      }
    }
  }

  const std::vector<Slot>& slots() const { return slots_; }
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Slot> slots_;
};

/// Linear warmup followed by cosine decay from base to min_lr.
inline double cosine_lr(double base, double min_lr, double progress, double warmup) {
  if (warmup > 0 && progress < warmup) return base * progress / warmup;
  const double denom = 1.0 - warmup;
  const double t = denom > 0 ? (progress - warmup) / denom : 1.0;
  return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
}

}  // namespace gatevit
