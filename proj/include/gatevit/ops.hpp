#pragma once

// Differentiable operations over nd::Tensor. Every op computes its forward
// value eagerly and, when an input requires grad and a tape is active,
// records an adjoint closure that accumulates into the inputs' grad buffers.
//
// Broadcasting is limited to two cases:
//   suffix  - the second operand's shape equals the trailing dims of the first
//             (bias rows, positional tables) or it is a scalar;
//   prefix  - scale_prefix() multiplies by a tensor whose shape equals the
//             leading dims (per-sample / per-row gates).

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gatevit/tensor.hpp"

namespace gatevit::nd {

namespace detail {

template <typename T>
Tensor<T> make_output(Shape shape, Tape<T>* tape) {
  Tensor<T> out(std::move(shape));
  if (tape) out.set_requires_grad(true);
  return out;
}

inline bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

inline bool is_prefix(const Shape& full, const Shape& head) {
  if (head.size() > full.size()) return false;
  return std::equal(head.begin(), head.end(), full.begin());
}

// Broadcast extent for a binary elementwise op: returns the period of b over a.
template <typename T>
std::size_t suffix_period(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (b.size() == 1 && b.rank() <= 1) return 1;
  if (a.shape() == b.shape() || is_suffix(a.shape(), b.shape())) return b.size();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

/// a: [..., m, k]; b: [k, n] (shared across the leading dims of a) or
/// [..., k, n] with the same leading dims as a. With trans_b, b holds [.., n, k].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands must be at least 2-d, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t bk = trans_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  const std::size_t n = trans_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bk != k)
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (trans_b ? " (b transposed)" : ""));

  const bool shared_b = b.rank() == 2;
  std::size_t batch = a.size() / (m * k);
  if (!shared_b) {
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    if (lead_a != lead_b)
      throw DimensionError("matmul: batch dims disagree for " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()));
  } else {
    // Shared right operand: fold the leading dims into rows.
    m *= batch;
    batch = 1;
  }

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = detail::make_output<T>(out_shape, tape);

  // Row-major b_t: the [n, k] layout if trans_b, else [k, n].
  auto gemm = [](const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N, bool tb) {
    if (!tb) {
      for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        for (std::size_t p = 0; p < K; ++p) {
          const T av = A[i * K + p];
          const T* brow = B + p * N;
          for (std::size_t j = 0; j < N; ++j) c[j] += av * brow[j];
        }
      }
    } else {
      std::vector<T> bt(K * N);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t p = 0; p < K; ++p) bt[p * N + j] = B[j * K + p];
      for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        for (std::size_t p = 0; p < K; ++p) {
          const T av = A[i * K + p];
          const T* brow = bt.data() + p * N;
          for (std::size_t j = 0; j < N; ++j) c[j] += av * brow[j];
        }
      }
    }
  };

  const T* A = a.data().data();
  const T* B = b.data().data();
  T* C = out.data().data();
  for (std::size_t s = 0; s < batch; ++s)
    gemm(A + s * m * k, shared_b ? B : B + s * k * n, C + s * m * n, m, k, n, trans_b);

  if (tape) {
    tape->record([a, b, out, m, k, n, batch, shared_b, trans_b]() mutable {
      if (!out.has_grad()) return;
      const T* G = out.grad().data();
      const T* A = a.data().data();
      const T* B = b.data().data();
      std::vector<T> scratch;
      for (std::size_t s = 0; s < batch; ++s) {
        const T* g = G + s * m * n;
        const T* as = A + s * m * k;
        const T* bs = shared_b ? B : B + s * k * n;
        if (a.requires_grad()) {
          T* ga = a.grad().data() + s * m * k;
          // dA[i,:] += sum_j G[i,j] * Bt[j,:] with Bt the [n, k] view of b.
          const T* bt = bs;
          if (!trans_b) {
            scratch.resize(n * k);
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = bs[p * n + j];
            bt = scratch.data();
          }
          for (std::size_t i = 0; i < m; ++i) {
            T* dst = ga + i * k;
            for (std::size_t j = 0; j < n; ++j) {
              const T gv = g[i * n + j];
              if (gv == T{0}) continue;
              const T* brow = bt + j * k;
              for (std::size_t p = 0; p < k; ++p) dst[p] += gv * brow[p];
            }
          }
        }
        if (b.requires_grad()) {
          T* gb = b.grad().data() + (shared_b ? 0 : s * k * n);
          for (std::size_t i = 0; i < m; ++i) {
            const T* arow = as + i * k;
            const T* grow = g + i * n;
            if (trans_b) {
              // dB[j,:] += G[i,j] * A[i,:]
              for (std::size_t j = 0; j < n; ++j) {
                const T gv = grow[j];
                if (gv == T{0}) continue;
                T* dst = gb + j * k;
                for (std::size_t p = 0; p < k; ++p) dst[p] += gv * arow[p];
              }
            } else {
              // dB[p,:] += A[i,p] * G[i,:]
              for (std::size_t p = 0; p < k; ++p) {
                const T av = arow[p];
                if (av == T{0}) continue;
                T* dst = gb + p * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// binary elementwise with suffix broadcasting

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = detail::suffix_period(a, b, "add");
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = detail::make_output<T>(a.shape(), tape);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i % period];
  if (tape) {
    tape->record([a, b, out, period]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = detail::suffix_period(a, b, "sub");
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = detail::make_output<T>(a.shape(), tape);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i % period];
  if (tape) {
    tape->record([a, b, out, period]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = detail::suffix_period(a, b, "mul");
  Tape<T>* tape = recording_tape<T>({&a, &b});
  Tensor<T> out = detail::make_output<T>(a.shape(), tape);
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i % period];
  if (tape) {
    tape->record([a, b, out, period]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto av = a.data();
      const auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % period];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i] * av[i];
      }
    });
  }
  return out;
}

/// alpha * a + beta with constant alpha, beta.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T alpha, T beta = T{0}) {
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = detail::make_output<T>(a.shape(), tape);
  const auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = alpha * av[i] + beta;
  if (tape) {
    tape->record([a, out, alpha]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return affine(a, c, T{0});
}

/// out[i..., j...] = a[i..., j...] * s[i...]  where s.shape is a prefix of a.shape.
template <typename T>
Tensor<T> scale_prefix(const Tensor<T>& a, const Tensor<T>& s) {
  if (!detail::is_prefix(a.shape(), s.shape()))
    throw DimensionError("scale_prefix: " + shape_str(s.shape()) + " is not a leading prefix of " +
                         shape_str(a.shape()));
  const std::size_t inner = a.size() / std::max<std::size_t>(s.size(), 1);
  Tape<T>* tape = recording_tape<T>({&a, &s});
  Tensor<T> out = detail::make_output<T>(a.shape(), tape);
  const auto av = a.data();
  const auto sv = s.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < sv.size(); ++r)
    for (std::size_t j = 0; j < inner; ++j) ov[r * inner + j] = av[r * inner + j] * sv[r];
  if (tape) {
    tape->record([a, s, out, inner]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto av = a.data();
      const auto sv = s.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t r = 0; r < sv.size(); ++r)
          for (std::size_t j = 0; j < inner; ++j) ga[r * inner + j] += g[r * inner + j] * sv[r];
      }
      if (s.requires_grad()) {
        auto gs = s.grad();
        for (std::size_t r = 0; r < sv.size(); ++r) {
          T acc{0};
          for (std::size_t j = 0; j < inner; ++j) acc += g[r * inner + j] * av[r * inner + j];
          gs[r] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// unary elementwise

namespace detail {
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& a, Fwd fwd, Bwd dydx) {
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = make_output<T>(a.shape(), tape);
  const auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  if (tape) {
    tape->record([a, out, dydx]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto av = a.data();
      const auto ov = out.data();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(av[i], ov[i]);
    });
  }
  return out;
}
}  // namespace detail

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T v : a.data())
    if (!(v > T{0})) throw DomainError("log: argument " + std::to_string(static_cast<double>(v)) + " is not positive");
  return detail::unary<T>(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary<T>(
      a, [](T x) { return T(0.5) * x * (T{1} + std::erf(x * inv_sqrt2)); },
      [](T x, T) { return T(0.5) * (T{1} + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x); });
}

// ---------------------------------------------------------------------------
// normalization

/// Normalizes the last axis to zero mean / unit variance, then applies the
/// affine gain and bias (both shaped like the last axis).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6)) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layernorm: affine params " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  Tape<T>* tape = recording_tape<T>({&x, &gain, &bias});
  Tensor<T> out = detail::make_output<T>(x.shape(), tape);
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto ov = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * rs;
      xhat[r * d + j] = h;
      ov[r * d + j] = h * gv[j] + bv[j];
    }
  }
  if (tape) {
    tape->record([x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), d, rows]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto gv = gain.data();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh{0}, mean_dh_h{0};
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax

namespace detail {
template <typename T>
void check_no_nan(const Tensor<T>& x, const char* op) {
  for (T v : x.data())
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
}
}  // namespace detail

/// Max-stabilized softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  detail::check_no_nan(x, "softmax");
  const std::size_t len = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.size() / (len * inner);
  Tape<T>* tape = recording_tape<T>({&x});
  Tensor<T> out = detail::make_output<T>(x.shape(), tape);
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      T sum{0};
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < len; ++j) ov[base + j * inner] /= sum;
    }
  }
  if (tape) {
    tape->record([x, out, len, inner, outer]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot{0};
          for (std::size_t j = 0; j < len; ++j) dot += y[base + j * inner] * g[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Softmax over the last axis of x [B, m, n] where key j of batch b enters
/// with multiplicity w[b, j] >= 0:  y_ij = w_j e^{x_ij} / sum_k w_k e^{x_ik}.
/// With w in {0,1} this equals masking the zero-weight keys to -inf. The
/// stabilizing max is taken over keys with w > 0 only; every row needs at
/// least one such key. Differentiable in both x and w.
template <typename T>
Tensor<T> weighted_softmax(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 3 || w.rank() != 2 || w.dim(0) != x.dim(0) || w.dim(1) != x.dim(2))
    throw DimensionError("weighted_softmax: expects x [B,m,n] and w [B,n], got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  detail::check_no_nan(x, "weighted_softmax");
  const std::size_t B = x.dim(0), m = x.dim(1), n = x.dim(2);
  Tape<T>* tape = recording_tape<T>({&x, &w});
  Tensor<T> out = detail::make_output<T>(x.shape(), tape);
  std::vector<T> row_max(B * m), row_sum(B * m);
  const auto xv = x.data();
  const auto wv = w.data();
  auto ov = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* wr = wv.data() + b * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T* xr = xv.data() + (b * m + i) * n;
      T* yr = ov.data() + (b * m + i) * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (wr[j] > T{0}) mx = std::max(mx, xr[j]);
      if (!std::isfinite(mx)) throw NumericError("weighted_softmax: row has no positive-weight key");
      T sum{0};
      for (std::size_t j = 0; j < n; ++j) {
        const T e = wr[j] * std::exp(xr[j] - mx);
        yr[j] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
      row_max[b * m + i] = mx;
      row_sum[b * m + i] = sum;
    }
  }
  if (tape) {
    tape->record([x, w, out, B, m, n, row_max = std::move(row_max), row_sum = std::move(row_sum)]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto y = out.data();
      const auto xv = x.data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t r = (b * m + i) * n;
          T dot{0};
          for (std::size_t j = 0; j < n; ++j) dot += y[r + j] * g[r + j];
          if (x.requires_grad()) {
            auto gx = x.grad();
            for (std::size_t j = 0; j < n; ++j) gx[r + j] += y[r + j] * (g[r + j] - dot);
          }
          if (w.requires_grad()) {
            auto gw = w.grad();
            const T mx = row_max[b * m + i];
            const T s = row_sum[b * m + i];
            for (std::size_t j = 0; j < n; ++j) {
              // Exponent clamped so a zero-weight key with a huge logit
              // cannot overflow its (otherwise unused) adjoint.
              const T u = std::exp(std::min(xv[r + j] - mx, T(30))) / s;
              gw[b * n + j] += u * (g[r + j] - dot);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = detail::make_output<T>(std::move(shape), tape);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (tape) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

/// Contiguous sub-range [start, start+len) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank() || start + len > a.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") invalid on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t full = a.dim(axis);
  const std::size_t outer = a.size() / (full * inner);
  Shape shape = a.shape();
  shape[axis] = len;
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = detail::make_output<T>(shape, tape);
  const auto av = a.data();
  auto ov = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), len * inner,
                ov.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  if (tape) {
    tape->record([a, out, inner, full, outer, start, len]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len * inner; ++j) ga[(o * full + start) * inner + j] += g[o * len * inner + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(ref));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i])
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(ref));
    total += s[axis];
  }
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  Shape shape = ref;
  shape[axis] = total;
  Tape<T>* tape = recording_tape<T>(parts);
  Tensor<T> out = detail::make_output<T>(shape, tape);
  auto ov = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                  ov.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
    offset += len;
  }
  if (tape) {
    tape->record([parts, out, inner, outer, total, axis]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t len = p.dim(axis);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < len * inner; ++j) gp[o * len * inner + j] += g[(o * total + offset) * inner + j];
        }
        offset += len;
      }
    });
  }
  return out;
}

/// Repeats `a` count times along a new leading axis.
template <typename T>
Tensor<T> repeat_leading(const Tensor<T>& a, std::size_t count) {
  Shape shape{count};
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = detail::make_output<T>(shape, tape);
  auto ov = out.data();
  for (std::size_t c = 0; c < count; ++c)
    std::copy(a.data().begin(), a.data().end(), ov.begin() + static_cast<std::ptrdiff_t>(c * a.size()));
  if (tape) {
    tape->record([a, out, count]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[c * ga.size() + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tape<T>* tape = recording_tape<T>({&a});
  Tensor<T> out = detail::make_output<T>(Shape{}, tape);
  T acc{0};
  for (T v : a.data()) acc += v;
  out[0] = acc;
  if (tape) {
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto ga = a.grad();
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

/// Forward value is `hard` (a constant); the adjoint passes straight through
/// to `soft`.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& hard, const Tensor<T>& soft) {
  if (hard.shape() != soft.shape())
    throw DimensionError("straight_through: " + shape_str(hard.shape()) + " vs " + shape_str(soft.shape()));
  Tape<T>* tape = recording_tape<T>({&soft});
  Tensor<T> out = detail::make_output<T>(hard.shape(), tape);
  std::copy(hard.data().begin(), hard.data().end(), out.data().begin());
  if (tape) {
    tape->record([soft, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto gs = soft.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace gatevit::nd
