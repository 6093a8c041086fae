#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "penrec/preprocess.hpp"
#include "penrec/rng.hpp"

// Small-tensor neural engine: 1D CNN forward pass, exact backpropagation and
// Adam, written directly against contiguous std::vector buffers. Templated on
// the scalar type: training uses float for speed, gradient verification
// instantiates the same code in double.

namespace penrec {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateBatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyDataset : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// conv(64,4) -> BN -> ReLU -> dropout, twice, then flatten,
// dense(100) -> BN -> ReLU, dense(classes).
struct ModelConfig {
  int input_len = 50;
  int input_channels = 13;
  int conv_filters = 64;
  int kernel_size = 4;
  int dense_hidden = 100;
  int classes = 26;
  double dropout_rate = 0.4;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  int conv1_len() const { return input_len - kernel_size + 1; }
  int conv2_len() const { return conv1_len() - kernel_size + 1; }
  int flat_dim() const { return conv2_len() * conv_filters; }

  void validate() const {
    if (input_len < 1 || input_channels < 1 || conv_filters < 1 || kernel_size < 1 ||
        dense_hidden < 1 || classes < 1) {
      throw ShapeMismatch("model dimensions must be positive");
    }
    if (conv2_len() < 1) {
      throw ShapeMismatch("input too short for two valid convolutions: " +
                          std::to_string(input_len) + " with kernel " +
                          std::to_string(kernel_size));
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ShapeMismatch("dropout_rate must be in [0, 1)");
    }
  }
};

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_acc;
  std::vector<double> val_acc;  // empty unless a validation set was given
};

namespace detail {

// ---- loop kernels; inner loops run over the contiguous last dimension ----

// Accumulator tile kept in registers across the reduction loops; sized for
// the default network (F = 64, two output rows) and a compile-time cap that
// still covers custom configs.
inline constexpr int kMaxAccWidth = 512;

// out[B][Lout][F] = x[B][Lin][C] (*) w[K][C][F] + b[F], valid cross-correlation
template <typename T>
void conv1d_forward_kernel(const T* __restrict x, int B, int lin, int C,
                           const T* __restrict w, const T* __restrict bias, int K, int F,
                           T* __restrict out) {
  const int lout = lin - K + 1;
  if (F <= kMaxAccWidth) {
    // two output rows at a time: each loaded weight row feeds two FMA tiles
    for (int b = 0; b < B; ++b) {
      const T* xb = x + static_cast<std::size_t>(b) * lin * C;
      T* ob = out + static_cast<std::size_t>(b) * lout * F;
      int t = 0;
      for (; t + 1 < lout; t += 2) {
        T acc0[kMaxAccWidth], acc1[kMaxAccWidth];
        for (int f = 0; f < F; ++f) acc0[f] = bias[f];
        for (int f = 0; f < F; ++f) acc1[f] = bias[f];
        for (int k = 0; k < K; ++k) {
          const T* wk = w + static_cast<std::size_t>(k) * C * F;
          const T* xr0 = xb + (t + k) * C;
          const T* xr1 = xr0 + C;
          for (int c = 0; c < C; ++c) {
            const T a0 = xr0[c];
            const T a1 = xr1[c];
            const T* wr = wk + c * F;
            for (int f = 0; f < F; ++f) {
              acc0[f] += a0 * wr[f];
              acc1[f] += a1 * wr[f];
            }
          }
        }
        T* orow = ob + static_cast<std::size_t>(t) * F;
        for (int f = 0; f < F; ++f) orow[f] = acc0[f];
        for (int f = 0; f < F; ++f) orow[F + f] = acc1[f];
      }
      for (; t < lout; ++t) {
        T acc0[kMaxAccWidth];
        for (int f = 0; f < F; ++f) acc0[f] = bias[f];
        for (int k = 0; k < K; ++k) {
          const T* wk = w + static_cast<std::size_t>(k) * C * F;
          const T* xr0 = xb + (t + k) * C;
          for (int c = 0; c < C; ++c) {
            const T a0 = xr0[c];
            const T* wr = wk + c * F;
            for (int f = 0; f < F; ++f) acc0[f] += a0 * wr[f];
          }
        }
        T* orow = ob + static_cast<std::size_t>(t) * F;
        for (int f = 0; f < F; ++f) orow[f] = acc0[f];
      }
    }
    return;
  }
  for (int b = 0; b < B; ++b) {
    T* ob = out + static_cast<std::size_t>(b) * lout * F;
    for (int t = 0; t < lout; ++t) {
      for (int f = 0; f < F; ++f) ob[t * F + f] = bias[f];
    }
    const T* xb = x + static_cast<std::size_t>(b) * lin * C;
    for (int k = 0; k < K; ++k) {
      for (int t = 0; t < lout; ++t) {
        const T* xr = xb + (t + k) * C;
        T* orow = ob + t * F;
        const T* wk = w + static_cast<std::size_t>(k) * C * F;
        for (int c = 0; c < C; ++c) {
          const T a = xr[c];
          const T* wr = wk + c * F;
          for (int f = 0; f < F; ++f) orow[f] += a * wr[f];
        }
      }
    }
  }
}

// dx += dout (*) w, using wt[K][F][C] (transposed weights). Gathered per input
// row u (dx[u] = sum_k dout[u-k] * wt[k]) so the accumulator stays in registers
// across the whole K x F reduction.
template <typename T>
void conv1d_backward_data(const T* __restrict dout, int B, int lout, int F,
                          const T* __restrict wt, int K, int C, int lin,
                          T* __restrict dx) {
  if (C <= kMaxAccWidth) {
    for (int b = 0; b < B; ++b) {
      const T* db = dout + static_cast<std::size_t>(b) * lout * F;
      T* dxb = dx + static_cast<std::size_t>(b) * lin * C;
      for (int u = 0; u < lin; ++u) {
        T acc[kMaxAccWidth];
        for (int c = 0; c < C; ++c) acc[c] = T(0);
        const int k_lo = u - (lout - 1) > 0 ? u - (lout - 1) : 0;
        const int k_hi = u < K - 1 ? u : K - 1;
        for (int k = k_lo; k <= k_hi; ++k) {
          const T* dr = db + static_cast<std::size_t>(u - k) * F;
          const T* wtk = wt + static_cast<std::size_t>(k) * F * C;
          for (int f = 0; f < F; ++f) {
            const T g = dr[f];
            const T* wr = wtk + f * C;
            for (int c = 0; c < C; ++c) acc[c] += g * wr[c];
          }
        }
        T* dxr = dxb + static_cast<std::size_t>(u) * C;
        for (int c = 0; c < C; ++c) dxr[c] += acc[c];
      }
    }
    return;
  }
  for (int b = 0; b < B; ++b) {
    const T* db = dout + static_cast<std::size_t>(b) * lout * F;
    T* dxb = dx + static_cast<std::size_t>(b) * lin * C;
    for (int k = 0; k < K; ++k) {
      const T* wtk = wt + static_cast<std::size_t>(k) * F * C;
      for (int t = 0; t < lout; ++t) {
        const T* dr = db + t * F;
        T* dxr = dxb + (t + k) * C;
        for (int f = 0; f < F; ++f) {
          const T g = dr[f];
          const T* wr = wtk + f * C;
          for (int c = 0; c < C; ++c) dxr[c] += g * wr[c];
        }
      }
    }
  }
}

template <typename T>
void conv1d_backward_weights(const T* __restrict x, const T* __restrict dout, int B,
                             int lin, int C, int lout, int F, int K, T* __restrict dw,
                             T* __restrict dbias) {
  for (int b = 0; b < B; ++b) {
    const T* xb = x + static_cast<std::size_t>(b) * lin * C;
    const T* db = dout + static_cast<std::size_t>(b) * lout * F;
    for (int k = 0; k < K; ++k) {
      T* dwk = dw + static_cast<std::size_t>(k) * C * F;
      // two time steps per pass: each dw row update amortizes over two FMAs
      int t = 0;
      for (; t + 1 < lout; t += 2) {
        const T* xr0 = xb + (t + k) * C;
        const T* xr1 = xr0 + C;
        const T* dr0 = db + t * F;
        const T* dr1 = dr0 + F;
        for (int c = 0; c < C; ++c) {
          const T a0 = xr0[c];
          const T a1 = xr1[c];
          T* dwr = dwk + c * F;
          for (int f = 0; f < F; ++f) dwr[f] += a0 * dr0[f] + a1 * dr1[f];
        }
      }
      for (; t < lout; ++t) {
        const T* xr = xb + (t + k) * C;
        const T* dr = db + t * F;
        for (int c = 0; c < C; ++c) {
          const T a = xr[c];
          T* dwr = dwk + c * F;
          for (int f = 0; f < F; ++f) dwr[f] += a * dr[f];
        }
      }
    }
    for (int t = 0; t < lout; ++t) {
      const T* dr = db + t * F;
      for (int f = 0; f < F; ++f) dbias[f] += dr[f];
    }
  }
}

// out[B][O] = x[B][I] * w[I][O] + b[O]
template <typename T>
void dense_forward_kernel(const T* __restrict x, int B, int I, const T* __restrict w,
                          const T* __restrict bias, int O, T* __restrict out) {
  if (O <= kMaxAccWidth) {
    int b = 0;
    for (; b + 1 < B; b += 2) {
      const T* x0 = x + static_cast<std::size_t>(b) * I;
      const T* x1 = x0 + I;
      T acc0[kMaxAccWidth], acc1[kMaxAccWidth];
      for (int o = 0; o < O; ++o) acc0[o] = bias[o];
      for (int o = 0; o < O; ++o) acc1[o] = bias[o];
      for (int i = 0; i < I; ++i) {
        const T a0 = x0[i];
        const T a1 = x1[i];
        const T* wr = w + static_cast<std::size_t>(i) * O;
        for (int o = 0; o < O; ++o) {
          acc0[o] += a0 * wr[o];
          acc1[o] += a1 * wr[o];
        }
      }
      T* ob = out + static_cast<std::size_t>(b) * O;
      for (int o = 0; o < O; ++o) ob[o] = acc0[o];
      for (int o = 0; o < O; ++o) ob[O + o] = acc1[o];
    }
    for (; b < B; ++b) {
      const T* xb = x + static_cast<std::size_t>(b) * I;
      T acc0[kMaxAccWidth];
      for (int o = 0; o < O; ++o) acc0[o] = bias[o];
      for (int i = 0; i < I; ++i) {
        const T a = xb[i];
        const T* wr = w + static_cast<std::size_t>(i) * O;
        for (int o = 0; o < O; ++o) acc0[o] += a * wr[o];
      }
      T* ob = out + static_cast<std::size_t>(b) * O;
      for (int o = 0; o < O; ++o) ob[o] = acc0[o];
    }
    return;
  }
  for (int b = 0; b < B; ++b) {
    const T* xb = x + static_cast<std::size_t>(b) * I;
    T* ob = out + static_cast<std::size_t>(b) * O;
    for (int o = 0; o < O; ++o) ob[o] = bias[o];
    for (int i = 0; i < I; ++i) {
      const T a = xb[i];
      const T* wr = w + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) ob[o] += a * wr[o];
    }
  }
}

template <typename T>
void dense_backward_data(const T* __restrict dout, int B, int O,
                         const T* __restrict wt /*[O][I]*/, int I, T* __restrict dx) {
  // wide rows: accumulate a register-sized chunk of dx over the whole O loop
  for (int b = 0; b < B; ++b) {
    const T* db = dout + static_cast<std::size_t>(b) * O;
    T* dxb = dx + static_cast<std::size_t>(b) * I;
    for (int i0 = 0; i0 < I; i0 += kMaxAccWidth) {
      const int w_ = I - i0 < kMaxAccWidth ? I - i0 : kMaxAccWidth;
      T acc[kMaxAccWidth];
      for (int i = 0; i < w_; ++i) acc[i] = T(0);
      for (int o = 0; o < O; ++o) {
        const T g = db[o];
        const T* wr = wt + static_cast<std::size_t>(o) * I + i0;
        for (int i = 0; i < w_; ++i) acc[i] += g * wr[i];
      }
      for (int i = 0; i < w_; ++i) dxb[i0 + i] += acc[i];
    }
  }
}

template <typename T>
void dense_backward_weights(const T* __restrict x, const T* __restrict dout, int B,
                            int I, int O, T* __restrict dw, T* __restrict dbias) {
  int b = 0;
  for (; b + 1 < B; b += 2) {
    const T* x0 = x + static_cast<std::size_t>(b) * I;
    const T* x1 = x0 + I;
    const T* d0 = dout + static_cast<std::size_t>(b) * O;
    const T* d1 = d0 + O;
    for (int i = 0; i < I; ++i) {
      const T a0 = x0[i];
      const T a1 = x1[i];
      T* dwr = dw + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) dwr[o] += a0 * d0[o] + a1 * d1[o];
    }
    for (int o = 0; o < O; ++o) dbias[o] += d0[o] + d1[o];
  }
  for (; b < B; ++b) {
    const T* xb = x + static_cast<std::size_t>(b) * I;
    const T* db = dout + static_cast<std::size_t>(b) * O;
    for (int i = 0; i < I; ++i) {
      const T a = xb[i];
      T* dwr = dw + static_cast<std::size_t>(i) * O;
      for (int o = 0; o < O; ++o) dwr[o] += a * db[o];
    }
    for (int o = 0; o < O; ++o) dbias[o] += db[o];
  }
}

template <typename T>
void transpose(const T* __restrict w, int rows, int cols, T* __restrict wt) {
  // 64x64 tiles keep both access streams inside L1 for large matrices
  constexpr int kTile = 64;
  for (int rb = 0; rb < rows; rb += kTile) {
    const int re = rb + kTile < rows ? rb + kTile : rows;
    for (int cb = 0; cb < cols; cb += kTile) {
      const int ce = cb + kTile < cols ? cb + kTile : cols;
      for (int r = rb; r < re; ++r) {
        for (int c = cb; c < ce; ++c) {
          wt[static_cast<std::size_t>(c) * rows + r] = w[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

}  // namespace detail

// Batch-norm state for one layer; feature count F, statistics taken over
// rows = batch (dense) or batch x time (conv).
template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta;
  // running statistics update as a side effect of train-mode forward
  mutable std::vector<T> run_mean, run_var;

  void init(int features) {
    gamma.assign(features, T(1));
    beta.assign(features, T(0));
    run_mean.assign(features, T(0));
    run_var.assign(features, T(1));
  }
};

// x: N x F rows (N = batch for dense, batch*time for conv). train mode
// normalizes with batch statistics and updates the running stats; infer mode
// uses the running stats. Statistics accumulate in double regardless of T.
template <typename T>
std::vector<T> batchnorm_forward(const std::vector<T>& x, int N, int F,
                                 const BatchNormParams<T>& bn, bool train,
                                 double momentum, double eps,
                                 std::vector<T>& mean_out, std::vector<T>& inv_std_out,
                                 std::vector<T>& xhat_out) {
  std::vector<T> y(x.size());
  if (!train) {
    std::vector<T> scale(F), shift(F);
    for (int f = 0; f < F; ++f) {
      const double is = 1.0 / std::sqrt(static_cast<double>(bn.run_var[f]) + eps);
      scale[f] = static_cast<T>(static_cast<double>(bn.gamma[f]) * is);
      shift[f] = static_cast<T>(static_cast<double>(bn.beta[f]) -
                                static_cast<double>(bn.gamma[f]) * is *
                                    static_cast<double>(bn.run_mean[f]));
    }
    for (int n = 0; n < N; ++n) {
      const T* xr = x.data() + static_cast<std::size_t>(n) * F;
      T* yr = y.data() + static_cast<std::size_t>(n) * F;
      for (int f = 0; f < F; ++f) yr[f] = xr[f] * scale[f] + shift[f];
    }
    return y;
  }
  if (N < 2) {
    throw DegenerateBatch("batch norm needs >= 2 effective elements, got " +
                          std::to_string(N));
  }
  std::vector<double> sum(F, 0.0), sumsq(F, 0.0);
  for (int n = 0; n < N; ++n) {
    const T* xr = x.data() + static_cast<std::size_t>(n) * F;
    for (int f = 0; f < F; ++f) {
      const double v = static_cast<double>(xr[f]);
      sum[f] += v;
      sumsq[f] += v * v;
    }
  }
  mean_out.resize(F);
  inv_std_out.resize(F);
  for (int f = 0; f < F; ++f) {
    const double mu = sum[f] / N;
    double var = sumsq[f] / N - mu * mu;
    if (var < 0.0) var = 0.0;  // rounding
    mean_out[f] = static_cast<T>(mu);
    inv_std_out[f] = static_cast<T>(1.0 / std::sqrt(var + eps));
    bn.run_mean[f] =
        static_cast<T>(momentum * static_cast<double>(bn.run_mean[f]) + (1.0 - momentum) * mu);
    bn.run_var[f] =
        static_cast<T>(momentum * static_cast<double>(bn.run_var[f]) + (1.0 - momentum) * var);
  }
  xhat_out.resize(x.size());
  for (int n = 0; n < N; ++n) {
    const T* xr = x.data() + static_cast<std::size_t>(n) * F;
    T* hr = xhat_out.data() + static_cast<std::size_t>(n) * F;
    T* yr = y.data() + static_cast<std::size_t>(n) * F;
    for (int f = 0; f < F; ++f) {
      const T h = static_cast<T>((xr[f] - mean_out[f]) * inv_std_out[f]);
      hr[f] = h;
      yr[f] = bn.gamma[f] * h + bn.beta[f];
    }
  }
  return y;
}

// dy -> dx through the batch statistics; accumulates dgamma/dbeta.
template <typename T>
std::vector<T> batchnorm_backward(const std::vector<T>& dy, int N, int F,
                                  const BatchNormParams<T>& bn,
                                  const std::vector<T>& xhat,
                                  const std::vector<T>& inv_std, std::vector<T>& dgamma,
                                  std::vector<T>& dbeta) {
  std::vector<double> sum_dy(F, 0.0), sum_dy_xhat(F, 0.0);
  for (int n = 0; n < N; ++n) {
    const T* dr = dy.data() + static_cast<std::size_t>(n) * F;
    const T* hr = xhat.data() + static_cast<std::size_t>(n) * F;
    for (int f = 0; f < F; ++f) {
      sum_dy[f] += static_cast<double>(dr[f]);
      sum_dy_xhat[f] += static_cast<double>(dr[f]) * static_cast<double>(hr[f]);
    }
  }
  for (int f = 0; f < F; ++f) {
    dgamma[f] = static_cast<T>(static_cast<double>(dgamma[f]) + sum_dy_xhat[f]);
    dbeta[f] = static_cast<T>(static_cast<double>(dbeta[f]) + sum_dy[f]);
  }
  std::vector<T> dx(dy.size());
  std::vector<T> k1(F), k2(F), k3(F);
  for (int f = 0; f < F; ++f) {
    const double gis = static_cast<double>(bn.gamma[f]) * static_cast<double>(inv_std[f]);
    k1[f] = static_cast<T>(gis);
    k2[f] = static_cast<T>(gis * sum_dy[f] / N);
    k3[f] = static_cast<T>(gis * sum_dy_xhat[f] / N);
  }
  for (int n = 0; n < N; ++n) {
    const T* dr = dy.data() + static_cast<std::size_t>(n) * F;
    const T* hr = xhat.data() + static_cast<std::size_t>(n) * F;
    T* dxr = dx.data() + static_cast<std::size_t>(n) * F;
    for (int f = 0; f < F; ++f) {
      dxr[f] = dr[f] * k1[f] - k2[f] - hr[f] * k3[f];
    }
  }
  return dx;
}

// Inverted dropout in place. train: zero with probability rate and scale
// survivors by 1/(1-rate); infer: identity. With reuse_mask the stored mask
// is applied again (frozen-mask gradient checks).
template <typename T>
void dropout_forward(std::vector<T>& v, double rate, bool train,
                     std::vector<std::uint8_t>& mask, bool reuse_mask, Rng* rng) {
  if (!train || rate == 0.0) {
    if (train) mask.assign(v.size(), 1);
    return;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  if (!reuse_mask) {
    if (rng == nullptr) {
      throw StateMismatch("train-mode dropout needs an rng or a frozen mask");
    }
    mask.resize(v.size());
    // integer threshold compare; equivalent to uniform() < rate but cheaper
    const std::uint64_t drop_below =
        static_cast<std::uint64_t>(rate * 18446744073709551616.0);
    for (auto& m : mask) m = rng->next_u64() < drop_below ? 0 : 1;
  }
  if (mask.size() != v.size()) throw StateMismatch("frozen dropout mask size");
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = mask[i] ? v[i] * scale : T(0);
  }
}

// One Adam step with bias correction on a single tensor; t is the 1-based
// step count. Moment state in m/v.
template <typename T>
void adam_update(std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m,
                 std::vector<T>& v, long long t, const TrainConfig& tc) {
  const double b1 = tc.beta1, b2 = tc.beta2;
  // per-step scalars in double; the vectorizable element loop runs in T
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T omb1 = static_cast<T>(1.0 - b1), omb2 = static_cast<T>(1.0 - b2);
  const T ic1 = static_cast<T>(1.0 / corr1), ic2 = static_cast<T>(1.0 / corr2);
  const T lr = static_cast<T>(tc.learning_rate), eps = static_cast<T>(tc.adam_eps);
  T* __restrict wp = w.data();
  const T* __restrict gp = g.data();
  T* __restrict mp = m.data();
  T* __restrict vp = v.data();
  const std::size_t n = w.size();
  for (std::size_t j = 0; j < n; ++j) {
    const T gj = gp[j];
    const T mj = tb1 * mp[j] + omb1 * gj;
    const T vj = tb2 * vp[j] + omb2 * gj * gj;
    mp[j] = mj;
    vp[j] = vj;
    wp[j] -= lr * (mj * ic1) / (std::sqrt(vj * ic2) + eps);
  }
}

// Cached intermediates of one training-mode forward pass, consumed by
// backward(). Dropout masks live here so a gradient check can freeze them.
template <typename T>
struct ForwardCache {
  int batch = 0;
  std::vector<T> x0;
  std::vector<T> xhat1, a1;  // conv1 normalized, post-relu-and-dropout
  std::vector<T> mean1, inv_std1;
  std::vector<std::uint8_t> mask1;
  std::vector<T> xhat2, a2;
  std::vector<T> mean2, inv_std2;
  std::vector<std::uint8_t> mask2;
  std::vector<T> xhat3, a3;  // dense hidden
  std::vector<T> mean3, inv_std3;
  bool has_masks = false;
};

template <typename T>
struct Gradients {
  std::vector<T> conv1_w, conv1_b, bn1_gamma, bn1_beta;
  std::vector<T> conv2_w, conv2_b, bn2_gamma, bn2_beta;
  std::vector<T> dense1_w, dense1_b, bn3_gamma, bn3_beta;
  std::vector<T> dense2_w, dense2_b;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
};

template <typename T>
class Model {
 public:
  Model() = default;

  // He-uniform weights, zero biases, unit-gamma batch norm.
  Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    const int K = cfg_.kernel_size, C = cfg_.input_channels, F = cfg_.conv_filters;
    Rng rng(init_seed);
    auto he_uniform = [&rng](std::vector<T>& w, std::size_t n, int fan_in) {
      const double limit = std::sqrt(6.0 / fan_in);
      w.resize(n);
      for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    };
    he_uniform(conv1_w, static_cast<std::size_t>(K) * C * F, K * C);
    conv1_b.assign(F, T(0));
    bn1.init(F);
    he_uniform(conv2_w, static_cast<std::size_t>(K) * F * F, K * F);
    conv2_b.assign(F, T(0));
    bn2.init(F);
    he_uniform(dense1_w, static_cast<std::size_t>(cfg_.flat_dim()) * cfg_.dense_hidden,
               cfg_.flat_dim());
    dense1_b.assign(cfg_.dense_hidden, T(0));
    bn3.init(cfg_.dense_hidden);
    he_uniform(dense2_w, static_cast<std::size_t>(cfg_.dense_hidden) * cfg_.classes,
               cfg_.dense_hidden);
    dense2_b.assign(cfg_.classes, T(0));
  }

  const ModelConfig& config() const { return cfg_; }
  long long step() const { return step_; }

  // x: B x input_len x input_channels, contiguous. Returns B x classes logits.
  // train mode: batch statistics, dropout. cache required in train mode; when
  // cache->has_masks is set the stored dropout masks are reused (rng unused),
  // otherwise fresh masks are drawn from rng.
  std::vector<T> forward(const std::vector<T>& x, int B, bool train,
                         ForwardCache<T>* cache = nullptr, Rng* rng = nullptr) const {
    const int L0 = cfg_.input_len, C = cfg_.input_channels, F = cfg_.conv_filters;
    const int K = cfg_.kernel_size, L1 = cfg_.conv1_len(), L2 = cfg_.conv2_len();
    const int H = cfg_.dense_hidden, CL = cfg_.classes;
    if (B < 1 || x.size() != static_cast<std::size_t>(B) * L0 * C) {
      throw ShapeMismatch("forward: input is not B x " + std::to_string(L0) + " x " +
                          std::to_string(C));
    }
    if (train && cache == nullptr) {
      throw StateMismatch("train-mode forward requires a cache");
    }
    ForwardCache<T> local;
    ForwardCache<T>& cc = cache ? *cache : local;
    cc.batch = B;
    if (train) cc.x0 = x;

    std::vector<T> z1(static_cast<std::size_t>(B) * L1 * F);
    detail::conv1d_forward_kernel(x.data(), B, L0, C, conv1_w.data(), conv1_b.data(), K,
                                  F, z1.data());
    std::vector<T> y1 = batchnorm_forward(z1, B * L1, F, bn1, train, cfg_.bn_momentum,
                                           cfg_.bn_eps, cc.mean1, cc.inv_std1, cc.xhat1);
    relu_inplace(y1);
    apply_dropout(y1, train, cc.mask1, cc.has_masks, rng);
    if (train) cc.a1 = y1;

    std::vector<T> z2(static_cast<std::size_t>(B) * L2 * F);
    detail::conv1d_forward_kernel(y1.data(), B, L1, F, conv2_w.data(), conv2_b.data(), K,
                                  F, z2.data());
    std::vector<T> y2 = batchnorm_forward(z2, B * L2, F, bn2, train, cfg_.bn_momentum,
                                           cfg_.bn_eps, cc.mean2, cc.inv_std2, cc.xhat2);
    relu_inplace(y2);
    apply_dropout(y2, train, cc.mask2, cc.has_masks, rng);
    if (train) cc.a2 = y2;

    // flatten is a no-op on the contiguous buffer: B x (L2*F)
    std::vector<T> z3(static_cast<std::size_t>(B) * H);
    detail::dense_forward_kernel(y2.data(), B, cfg_.flat_dim(), dense1_w.data(),
                                 dense1_b.data(), H, z3.data());
    std::vector<T> y3 = batchnorm_forward(z3, B, H, bn3, train, cfg_.bn_momentum,
                                           cfg_.bn_eps, cc.mean3, cc.inv_std3, cc.xhat3);
    relu_inplace(y3);
    if (train) cc.a3 = y3;

    std::vector<T> logits(static_cast<std::size_t>(B) * CL);
    detail::dense_forward_kernel(y3.data(), B, H, dense2_w.data(), dense2_b.data(), CL,
                                 logits.data());
    if (train) cc.has_masks = true;
    return logits;
  }

  // Exact gradients for every learnable array, including the batch-statistics
  // chain rule through the three batch-norm layers.
  Gradients<T> backward(const ForwardCache<T>& cc, const std::vector<T>& dlogits) const {
    const int B = cc.batch;
    const int C = cfg_.input_channels, F = cfg_.conv_filters, K = cfg_.kernel_size;
    const int L0 = cfg_.input_len, L1 = cfg_.conv1_len(), L2 = cfg_.conv2_len();
    const int H = cfg_.dense_hidden, CL = cfg_.classes;
    if (B == 0 || !cc.has_masks || cc.a3.size() != static_cast<std::size_t>(B) * H) {
      throw StateMismatch("backward without a matching train-mode forward");
    }
    if (dlogits.size() != static_cast<std::size_t>(B) * CL) {
      throw ShapeMismatch("backward: dlogits shape");
    }

    Gradients<T> g;
    g.conv1_w.assign(conv1_w.size(), T(0));
    g.conv1_b.assign(conv1_b.size(), T(0));
    g.bn1_gamma.assign(F, T(0));
    g.bn1_beta.assign(F, T(0));
    g.conv2_w.assign(conv2_w.size(), T(0));
    g.conv2_b.assign(conv2_b.size(), T(0));
    g.bn2_gamma.assign(F, T(0));
    g.bn2_beta.assign(F, T(0));
    g.dense1_w.assign(dense1_w.size(), T(0));
    g.dense1_b.assign(dense1_b.size(), T(0));
    g.bn3_gamma.assign(H, T(0));
    g.bn3_beta.assign(H, T(0));
    g.dense2_w.assign(dense2_w.size(), T(0));
    g.dense2_b.assign(dense2_b.size(), T(0));

    // dense2
    std::vector<T> da3(static_cast<std::size_t>(B) * H, T(0));
    {
      detail::dense_backward_weights(cc.a3.data(), dlogits.data(), B, H, CL,
                                     g.dense2_w.data(), g.dense2_b.data());
      std::vector<T> wt(dense2_w.size());
      detail::transpose(dense2_w.data(), H, CL, wt.data());
      detail::dense_backward_data(dlogits.data(), B, CL, wt.data(), H, da3.data());
    }
    // relu + bn3
    relu_backward_inplace(da3, cc.a3);
    std::vector<T> dz3 = batchnorm_backward(da3, B, H, bn3, cc.xhat3, cc.inv_std3,
                                            g.bn3_gamma, g.bn3_beta);
    // dense1
    std::vector<T> da2(static_cast<std::size_t>(B) * cfg_.flat_dim(), T(0));
    {
      detail::dense_backward_weights(cc.a2.data(), dz3.data(), B, cfg_.flat_dim(), H,
                                     g.dense1_w.data(), g.dense1_b.data());
      std::vector<T> wt(dense1_w.size());
      detail::transpose(dense1_w.data(), cfg_.flat_dim(), H, wt.data());
      detail::dense_backward_data(dz3.data(), B, H, wt.data(), cfg_.flat_dim(),
                                  da2.data());
    }
    // dropout2 + relu2 + bn2; after the dropout backward every masked entry is
    // zero, and the surviving entries share their relu sign with a2
    dropout_backward_inplace(da2, cc.mask2);
    relu_backward_inplace(da2, cc.a2);
    std::vector<T> dz2 = batchnorm_backward(da2, B * L2, F, bn2, cc.xhat2, cc.inv_std2,
                                            g.bn2_gamma, g.bn2_beta);
    // conv2
    std::vector<T> da1(static_cast<std::size_t>(B) * L1 * F, T(0));
    {
      detail::conv1d_backward_weights(cc.a1.data(), dz2.data(), B, L1, F, L2, F, K,
                                      g.conv2_w.data(), g.conv2_b.data());
      std::vector<T> wt(conv2_w.size());
      for (int k = 0; k < K; ++k) {
        detail::transpose(conv2_w.data() + static_cast<std::size_t>(k) * F * F, F, F,
                          wt.data() + static_cast<std::size_t>(k) * F * F);
      }
      detail::conv1d_backward_data(dz2.data(), B, L2, F, wt.data(), K, F, L1,
                                   da1.data());
    }
    // dropout1 + relu1 + bn1
    dropout_backward_inplace(da1, cc.mask1);
    relu_backward_inplace(da1, cc.a1);
    std::vector<T> dz1 = batchnorm_backward(da1, B * L1, F, bn1, cc.xhat1, cc.inv_std1,
                                            g.bn1_gamma, g.bn1_beta);
    // conv1 (no dx needed below the input)
    detail::conv1d_backward_weights(cc.x0.data(), dz1.data(), B, L0, C, L1, F, K,
                                    g.conv1_w.data(), g.conv1_b.data());
    return g;
  }

  // Standard Adam with bias correction; advances the shared step counter.
  void adam_step(const Gradients<T>& g, AdamState<T>& st, const TrainConfig& tc) {
    auto params = trainable_arrays();
    auto grads = gradient_arrays(const_cast<Gradients<T>&>(g));
    if (st.m.size() != params.size()) {
      st.m.resize(params.size());
      st.v.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i].assign(params[i].second->size(), T(0));
        st.v[i].assign(params[i].second->size(), T(0));
      }
    }
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam_update(*params[i].second, *grads[i].second, st.m[i], st.v[i], step_, tc);
    }
  }

  // (name, array) pairs in serialization order, trainable only.
  std::vector<std::pair<std::string, std::vector<T>*>> trainable_arrays() {
    return {{"conv1.w", &conv1_w},     {"conv1.b", &conv1_b},
            {"bn1.gamma", &bn1.gamma}, {"bn1.beta", &bn1.beta},
            {"conv2.w", &conv2_w},     {"conv2.b", &conv2_b},
            {"bn2.gamma", &bn2.gamma}, {"bn2.beta", &bn2.beta},
            {"dense1.w", &dense1_w},   {"dense1.b", &dense1_b},
            {"bn3.gamma", &bn3.gamma}, {"bn3.beta", &bn3.beta},
            {"dense2.w", &dense2_w},   {"dense2.b", &dense2_b}};
  }

  // Trainable arrays plus batch-norm running statistics.
  std::vector<std::pair<std::string, std::vector<T>*>> state_arrays() {
    auto v = trainable_arrays();
    v.push_back({"bn1.run_mean", &bn1.run_mean});
    v.push_back({"bn1.run_var", &bn1.run_var});
    v.push_back({"bn2.run_mean", &bn2.run_mean});
    v.push_back({"bn2.run_var", &bn2.run_var});
    v.push_back({"bn3.run_mean", &bn3.run_mean});
    v.push_back({"bn3.run_var", &bn3.run_var});
    return v;
  }

  static std::vector<std::pair<std::string, std::vector<T>*>> gradient_arrays(
      Gradients<T>& g) {
    return {{"conv1.w", &g.conv1_w},     {"conv1.b", &g.conv1_b},
            {"bn1.gamma", &g.bn1_gamma}, {"bn1.beta", &g.bn1_beta},
            {"conv2.w", &g.conv2_w},     {"conv2.b", &g.conv2_b},
            {"bn2.gamma", &g.bn2_gamma}, {"bn2.beta", &g.bn2_beta},
            {"dense1.w", &g.dense1_w},   {"dense1.b", &g.dense1_b},
            {"bn3.gamma", &g.bn3_gamma}, {"bn3.beta", &g.bn3_beta},
            {"dense2.w", &g.dense2_w},   {"dense2.b", &g.dense2_b}};
  }

  bool all_finite() {
    for (auto& [name, arr] : state_arrays()) {
      for (const T v : *arr) {
        if (!std::isfinite(static_cast<double>(v))) return false;
      }
    }
    return true;
  }

  void set_step(long long s) { step_ = s; }

  ModelConfig cfg_;
  std::vector<T> conv1_w, conv1_b;  // [K][C][F], [F]
  BatchNormParams<T> bn1;
  std::vector<T> conv2_w, conv2_b;  // [K][F][F]
  BatchNormParams<T> bn2;
  std::vector<T> dense1_w, dense1_b;  // [flat][H]
  BatchNormParams<T> bn3;
  std::vector<T> dense2_w, dense2_b;  // [H][classes]

 private:
  long long step_ = 0;

  static void relu_inplace(std::vector<T>& v) {
    for (auto& x : v) x = x > T(0) ? x : T(0);
  }

  // dv *= (pre-relu activation > 0); `post` is the relu output, which has the
  // same sign pattern.
  static void relu_backward_inplace(std::vector<T>& dv, const std::vector<T>& post) {
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (post[i] <= T(0)) dv[i] = T(0);
    }
  }

  void apply_dropout(std::vector<T>& v, bool train, std::vector<std::uint8_t>& mask,
                     bool reuse_masks, Rng* rng) const {
    dropout_forward(v, cfg_.dropout_rate, train, mask, reuse_masks, rng);
  }

  void dropout_backward_inplace(std::vector<T>& dv,
                                const std::vector<std::uint8_t>& mask) const {
    if (cfg_.dropout_rate == 0.0) return;
    const T scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout_rate));
    for (std::size_t i = 0; i < dv.size(); ++i) {
      dv[i] = mask[i] ? dv[i] * scale : T(0);
    }
  }

};

// Numerically stable softmax + mean cross-entropy; gradient is
// (softmax - onehot) / B.
template <typename T>
std::pair<double, std::vector<T>> softmax_xent(const std::vector<T>& logits, int B,
                                               int classes,
                                               const std::vector<int>& labels) {
  if (logits.size() != static_cast<std::size_t>(B) * classes ||
      labels.size() != static_cast<std::size_t>(B)) {
    throw ShapeMismatch("softmax_xent: shapes");
  }
  std::vector<T> dlogits(logits.size());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const T* lr = logits.data() + static_cast<std::size_t>(b) * classes;
    T* dr = dlogits.data() + static_cast<std::size_t>(b) * classes;
    if (labels[b] < 0 || labels[b] >= classes) {
      throw ShapeMismatch("label out of range: " + std::to_string(labels[b]));
    }
    double mx = static_cast<double>(lr[0]);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
    double denom = 0.0;
    for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(lr[c]) - mx);
    const double logdenom = std::log(denom);
    for (int c = 0; c < classes; ++c) {
      const double p = std::exp(static_cast<double>(lr[c]) - mx) / denom;
      dr[c] = static_cast<T>((p - (c == labels[b] ? 1.0 : 0.0)) / B);
    }
    loss += -(static_cast<double>(lr[labels[b]]) - mx - logdenom);
  }
  return {loss / B, std::move(dlogits)};
}

struct Prediction {
  std::vector<double> probs;
  int cls = 0;
};

// Infer-mode probabilities and argmax; each sample is independent of the rest
// of the batch (running-stat batch norm, no dropout).
template <typename T>
std::vector<Prediction> predict(const Model<T>& model,
                                const std::vector<const TensorSample*>& samples) {
  const ModelConfig& cfg = model.config();
  const int D = cfg.input_len * cfg.input_channels;
  std::vector<Prediction> out;
  out.reserve(samples.size());
  const int chunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const int B = static_cast<int>(std::min<std::size_t>(chunk, samples.size() - start));
    std::vector<T> x(static_cast<std::size_t>(B) * D);
    for (int b = 0; b < B; ++b) {
      const auto& s = *samples[start + b];
      if (static_cast<int>(s.x.size()) != D) throw ShapeMismatch("sample size");
      for (int i = 0; i < D; ++i) x[static_cast<std::size_t>(b) * D + i] = static_cast<T>(s.x[i]);
    }
    const std::vector<T> logits = model.forward(x, B, /*train=*/false);
    for (int b = 0; b < B; ++b) {
      const T* lr = logits.data() + static_cast<std::size_t>(b) * cfg.classes;
      Prediction p;
      p.probs.resize(cfg.classes);
      double mx = static_cast<double>(lr[0]);
      for (int c = 1; c < cfg.classes; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
      double denom = 0.0;
      for (int c = 0; c < cfg.classes; ++c) {
        p.probs[c] = std::exp(static_cast<double>(lr[c]) - mx);
        denom += p.probs[c];
      }
      int best = 0;
      for (int c = 0; c < cfg.classes; ++c) {
        p.probs[c] /= denom;
        if (p.probs[c] > p.probs[best]) best = c;
      }
      p.cls = best;
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <typename T>
struct TrainResult {
  Model<T> model;
  TrainHistory history;
};

// Seeded, fully deterministic training loop: per-epoch Fisher-Yates shuffle,
// mini-batches of batch_size (a trailing singleton is merged into the previous
// batch so batch norm never sees one element), Adam updates.
template <typename T>
TrainResult<T> train(const std::vector<const TensorSample*>& data,
                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const std::vector<const TensorSample*>* val_set = nullptr) {
  if (data.empty()) throw EmptyDataset("training set is empty");
  mcfg.validate();
  const int D = mcfg.input_len * mcfg.input_channels;
  const int N = static_cast<int>(data.size());

  TrainResult<T> result{Model<T>(mcfg, derive_seed(tcfg.seed, 2)), {}};
  Model<T>& model = result.model;
  Rng shuffle_rng(derive_seed(tcfg.seed, 0));
  Rng dropout_rng(derive_seed(tcfg.seed, 1));
  AdamState<T> adam;

  std::vector<int> order(data.size());
  for (int i = 0; i < N; ++i) order[i] = i;

  ForwardCache<T> cache;  // hoisted so the buffers keep their capacity
  std::vector<T> x;
  std::vector<int> labels;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int correct = 0;
    int pos = 0;
    while (pos < N) {
      int B = std::min(tcfg.batch_size, N - pos);
      if (N - pos - B == 1) B += 1;  // fold trailing singleton into this batch
      x.resize(static_cast<std::size_t>(B) * D);
      labels.resize(B);
      for (int b = 0; b < B; ++b) {
        const TensorSample& s = *data[static_cast<std::size_t>(order[pos + b])];
        for (int i = 0; i < D; ++i) {
          x[static_cast<std::size_t>(b) * D + i] = static_cast<T>(s.x[i]);
        }
        labels[b] = s.label_idx;
      }
      cache.has_masks = false;  // draw fresh dropout masks for this batch
      const std::vector<T> logits = model.forward(x, B, /*train=*/true, &cache,
                                                  &dropout_rng);
      auto [loss, dlogits] = softmax_xent(logits, B, mcfg.classes, labels);
      epoch_loss += loss * B;
      for (int b = 0; b < B; ++b) {
        const T* lr = logits.data() + static_cast<std::size_t>(b) * mcfg.classes;
        int best = 0;
        for (int c = 1; c < mcfg.classes; ++c) {
          if (lr[c] > lr[best]) best = c;
        }
        if (best == labels[b]) ++correct;
      }
      const Gradients<T> grads = model.backward(cache, dlogits);
      model.adam_step(grads, adam, tcfg);
      pos += B;
    }
    result.history.train_loss.push_back(epoch_loss / N);
    result.history.train_acc.push_back(static_cast<double>(correct) / N);
    if (val_set != nullptr && !val_set->empty()) {
      const auto preds = predict(model, *val_set);
      int vc = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].cls == (*val_set)[i]->label_idx) ++vc;
      }
      result.history.val_acc.push_back(static_cast<double>(vc) / preds.size());
    }
  }
  return result;
}

}  // namespace penrec
