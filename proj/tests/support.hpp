#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gatevit/ops.hpp"
#include "gatevit/rng.hpp"

namespace gatevit::testing {

using DT = nd::Tensor<double>;

inline DT random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  DT t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  t.set_requires_grad(grad);
  return t;
}

/// Scalar probe of a tensor-valued function: sum(f(inputs) * R) with a fixed
/// random R, so every output direction is exercised.
inline std::function<DT(const std::vector<DT>&)> probe(std::function<DT(const std::vector<DT>&)> f,
                                                      std::uint64_t seed) {
  auto weights = std::make_shared<DT>();
  return [f, weights, seed](const std::vector<DT>& in) {
    DT out = f(in);
    if (!weights->defined()) {
      Rng rng(seed);
      *weights = random_tensor(out.shape(), rng, -1, 1, false);
    }
    if (out.rank() == 0) return nd::mul(out, DT::scalar((*weights)[0]));
    return nd::sum(nd::mul(out, *weights));
  };
}

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// of the gradient of scalar `f` w.r.t. every input, using central
/// differences with step h.
inline double gradient_error(const std::function<DT(const std::vector<DT>&)>& f, std::vector<DT> inputs,
                             double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  {
    nd::Tape<double> tape;
    nd::TapeScope<double> scope(tape);
    DT loss = f(inputs);
    tape.backward(loss);
  }
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad())
      for (std::size_t i = 0; i < t.size(); ++i) analytic[i] = t.grad()[i];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x = t[i];
      t[i] = x + h;
      const double up = f(inputs).item();
      t[i] = x - h;
      const double down = f(inputs).item();
      t[i] = x;
      const double numeric = (up - down) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
  return std::sqrt(diff2) / denom;
}

}  // namespace gatevit::testing
