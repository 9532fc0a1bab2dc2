#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "sillnet/rng.hpp"
#include "sillnet/tensor.hpp"

namespace sillnet {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Named handle to one trainable tensor and its gradient accumulator.
template <typename T>
struct ParamRefT {
  std::string name;
  TensorT<T>* value;
  TensorT<T>* grad;
};

// Named handle to a non-trainable state tensor (batch-norm running stats).
template <typename T>
struct BufferRefT {
  std::string name;
  TensorT<T>* value;
};

template <typename T>
void he_normal_init(TensorT<T>& w, int fan_in, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<T>(s * rng.normal());
}

template <typename T>
void normal_init(TensorT<T>& w, double stddev, Rng& rng) {
  for (auto& v : w) v = static_cast<T>(stddev * rng.normal());
}

// ---------------------------------------------------------------------------
// 2-d convolution, NCHW, square kernel. Forward and backward both run as
// im2col + one GEMM per sample chunk; the chunking keeps the column buffer
// bounded instead of materializing the whole batch at once.
// ---------------------------------------------------------------------------
template <typename T>
struct Conv2dT {
  int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
  TensorT<T> weight;  // [out_ch, in_ch, k, k]
  TensorT<T> bias;    // [out_ch]
  TensorT<T> grad_weight, grad_bias;

  struct Cache {
    TensorT<T> input;
  };

  Conv2dT() = default;
  Conv2dT(int in_c, int out_c, int k, int s, int p)
      : in_ch(in_c),
        out_ch(out_c),
        ksize(k),
        stride(s),
        pad(p),
        weight({out_c, in_c, k, k}),
        bias({out_c}),
        grad_weight({out_c, in_c, k, k}),
        grad_bias({out_c}) {}

  void init(Rng& rng) { he_normal_init(weight, in_ch * ksize * ksize, rng); }

  int out_extent(int in) const { return (in + 2 * pad - ksize) / stride + 1; }

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (x.dim(1) != in_ch) throw std::invalid_argument("Conv2d: channel mismatch");
    const int ho = out_extent(h), wo = out_extent(w);
    TensorT<T> y({n, out_ch, ho, wo});
    const int kk = in_ch * ksize * ksize;
    ConstRowMatMap<T> wmat(weight.data(), out_ch, kk);

    const int chunk = chunk_samples(kk, ho * wo);
    MatX<T> cols;
    for (int n0 = 0; n0 < n; n0 += chunk) {
      const int nc = std::min(chunk, n - n0);
      im2col(x, n0, nc, ho, wo, cols);
      MatX<T> out = wmat * cols;  // [out_ch, nc*ho*wo]
      for (int ni = 0; ni < nc; ++ni)
        for (int co = 0; co < out_ch; ++co) {
          const T b = bias(co);
          for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow)
              y(n0 + ni, co, oh, ow) = out(co, (ni * ho + oh) * wo + ow) + b;
        }
    }
    if (cache) cache->input = x;
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Cache& cache) {
    const TensorT<T>& x = cache.input;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = gy.dim(2), wo = gy.dim(3);
    const int kk = in_ch * ksize * ksize;
    TensorT<T> gx(x.shape());
    ConstRowMatMap<T> wmat(weight.data(), out_ch, kk);
    RowMatMap<T> gwmat(grad_weight.data(), out_ch, kk);

    const int chunk = chunk_samples(kk, ho * wo);
    MatX<T> cols, g;
    for (int n0 = 0; n0 < n; n0 += chunk) {
      const int nc = std::min(chunk, n - n0);
      im2col(x, n0, nc, ho, wo, cols);
      g.resize(out_ch, nc * ho * wo);
      for (int ni = 0; ni < nc; ++ni)
        for (int co = 0; co < out_ch; ++co)
          for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow)
              g(co, (ni * ho + oh) * wo + ow) = gy(n0 + ni, co, oh, ow);
      gwmat += g * cols.transpose();
      for (int co = 0; co < out_ch; ++co) grad_bias(co) += g.row(co).sum();
      MatX<T> gcols = wmat.transpose() * g;  // [kk, nc*ho*wo]
      col2im(gcols, n0, nc, h, w, ho, wo, gx);
    }
    return gx;
  }

  std::vector<ParamRefT<T>> params(const std::string& prefix) {
    return {{prefix + ".weight", &weight, &grad_weight},
            {prefix + ".bias", &bias, &grad_bias}};
  }

 private:
  static int chunk_samples(int kk, int hw) {
    const long budget = 4L << 20;  // elements in the column buffer
    const long per = std::max(1L, static_cast<long>(kk) * hw);
    return static_cast<int>(std::max(1L, budget / per));
  }

  void im2col(const TensorT<T>& x, int n0, int nc, int ho, int wo, MatX<T>& cols) const {
    const int h = x.dim(2), w = x.dim(3);
    const int kk = in_ch * ksize * ksize;
    cols.resize(kk, nc * ho * wo);
    for (int ni = 0; ni < nc; ++ni) {
      for (int ci = 0; ci < in_ch; ++ci)
        for (int kh = 0; kh < ksize; ++kh)
          for (int kw = 0; kw < ksize; ++kw) {
            const int row = (ci * ksize + kh) * ksize + kw;
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * stride - pad + kh;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * stride - pad + kw;
                const bool in = ih >= 0 && ih < h && iw >= 0 && iw < w;
                cols(row, (ni * ho + oh) * wo + ow) = in ? x(n0 + ni, ci, ih, iw) : T(0);
              }
            }
          }
    }
  }

  void col2im(const MatX<T>& gcols, int n0, int nc, int h, int w, int ho, int wo,
              TensorT<T>& gx) const {
    for (int ni = 0; ni < nc; ++ni) {
      for (int ci = 0; ci < in_ch; ++ci)
        for (int kh = 0; kh < ksize; ++kh)
          for (int kw = 0; kw < ksize; ++kw) {
            const int row = (ci * ksize + kh) * ksize + kw;
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= h) continue;
              for (int ow = 0; ow < wo; ++ow) {
                const int iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= w) continue;
                gx(n0 + ni, ci, ih, iw) += gcols(row, (ni * ho + oh) * wo + ow);
              }
            }
          }
    }
  }
};

// ---------------------------------------------------------------------------
// Batch normalization over N,H,W per channel. Biased variance everywhere, so
// training statistics and the running averages used at eval time agree.
// ---------------------------------------------------------------------------
template <typename T>
struct BatchNorm2dT {
  int channels = 0;
  T momentum = T(0.1);
  T eps = T(1e-5);
  bool affine = true;  // false: pure normalization, no trainable scale/shift
  TensorT<T> gamma, beta, grad_gamma, grad_beta;
  TensorT<T> running_mean, running_var;

  struct Cache {
    TensorT<T> xhat;
    std::vector<T> inv_std;
    bool batch_stats = true;  // false: normalized with frozen running statistics
  };

  BatchNorm2dT() = default;
  explicit BatchNorm2dT(int c, bool with_affine = true)
      : channels(c),
        affine(with_affine),
        gamma({c}),
        beta({c}),
        grad_gamma({c}),
        grad_beta({c}),
        running_mean({c}),
        running_var({c}) {
    gamma.fill(T(1));
    running_var.fill(T(1));
  }

  TensorT<T> forward(const TensorT<T>& x, bool training, Cache* cache) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != channels) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    TensorT<T> y(x.shape());
    if (training) {
      const double m = static_cast<double>(n) * h * w;
      if (cache) {
        cache->xhat = TensorT<T>(x.shape());
        cache->inv_std.assign(c, T(0));
      }
      for (int ci = 0; ci < c; ++ci) {
        double sum = 0.0, sq = 0.0;
        for (int ni = 0; ni < n; ++ni)
          for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi) {
              const double v = x(ni, ci, hi, wi);
              sum += v;
              sq += v * v;
            }
        const double mean = sum / m;
        const double var = std::max(0.0, sq / m - mean * mean);
        const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        for (int ni = 0; ni < n; ++ni)
          for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi) {
              const T xh = (x(ni, ci, hi, wi) - static_cast<T>(mean)) * istd;
              if (cache) cache->xhat(ni, ci, hi, wi) = xh;
              y(ni, ci, hi, wi) = gamma(ci) * xh + beta(ci);
            }
        if (cache) cache->inv_std[ci] = istd;
        running_mean(ci) = (T(1) - momentum) * running_mean(ci) + momentum * static_cast<T>(mean);
        running_var(ci) = (T(1) - momentum) * running_var(ci) + momentum * static_cast<T>(var);
      }
    } else {
      if (cache) {
        cache->xhat = TensorT<T>(x.shape());
        cache->inv_std.assign(c, T(0));
        cache->batch_stats = false;
      }
      for (int ci = 0; ci < c; ++ci) {
        const T istd = static_cast<T>(
            1.0 / std::sqrt(static_cast<double>(running_var(ci)) + static_cast<double>(eps)));
        const T mu = running_mean(ci);
        if (cache) cache->inv_std[ci] = istd;
        for (int ni = 0; ni < n; ++ni)
          for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi) {
              const T xh = (x(ni, ci, hi, wi) - mu) * istd;
              if (cache) cache->xhat(ni, ci, hi, wi) = xh;
              y(ni, ci, hi, wi) = gamma(ci) * xh + beta(ci);
            }
      }
    }
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Cache& cache) {
    const int n = gy.dim(0), c = gy.dim(1), h = gy.dim(2), w = gy.dim(3);
    const double m = static_cast<double>(n) * h * w;
    TensorT<T> gx(gy.shape());
    for (int ci = 0; ci < c; ++ci) {
      double dg = 0.0, db = 0.0;
      for (int ni = 0; ni < n; ++ni)
        for (int hi = 0; hi < h; ++hi)
          for (int wi = 0; wi < w; ++wi) {
            const double g = gy(ni, ci, hi, wi);
            dg += g * cache.xhat(ni, ci, hi, wi);
            db += g;
          }
      grad_gamma(ci) += static_cast<T>(dg);
      grad_beta(ci) += static_cast<T>(db);
      if (cache.batch_stats) {
        const double k = static_cast<double>(gamma(ci)) * cache.inv_std[ci] / m;
        for (int ni = 0; ni < n; ++ni)
          for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi)
              gx(ni, ci, hi, wi) = static_cast<T>(
                  k * (m * gy(ni, ci, hi, wi) - db - cache.xhat(ni, ci, hi, wi) * dg));
      } else {
        // Frozen statistics: the normalization is an affine map of x alone.
        const T k = gamma(ci) * cache.inv_std[ci];
        for (int ni = 0; ni < n; ++ni)
          for (int hi = 0; hi < h; ++hi)
            for (int wi = 0; wi < w; ++wi) gx(ni, ci, hi, wi) = k * gy(ni, ci, hi, wi);
      }
    }
    return gx;
  }

  std::vector<ParamRefT<T>> params(const std::string& prefix) {
    if (!affine) return {};
    return {{prefix + ".gamma", &gamma, &grad_gamma}, {prefix + ".beta", &beta, &grad_beta}};
  }
  std::vector<BufferRefT<T>> buffers(const std::string& prefix) {
    return {{prefix + ".running_mean", &running_mean}, {prefix + ".running_var", &running_var}};
  }
};

// ---------------------------------------------------------------------------
// Fully connected layer on [N, in] matrices.
// ---------------------------------------------------------------------------
template <typename T>
struct LinearT {
  int in_dim = 0, out_dim = 0;
  TensorT<T> weight;  // [out, in]
  TensorT<T> bias;    // [out]
  TensorT<T> grad_weight, grad_bias;

  struct Cache {
    TensorT<T> input;
  };

  LinearT() = default;
  LinearT(int in, int out)
      : in_dim(in),
        out_dim(out),
        weight({out, in}),
        bias({out}),
        grad_weight({out, in}),
        grad_bias({out}) {}

  void init(Rng& rng) { he_normal_init(weight, in_dim, rng); }

  TensorT<T> forward(const TensorT<T>& x, Cache* cache) const {
    const int n = x.dim(0);
    if (x.dim(1) != in_dim) throw std::invalid_argument("Linear: input width mismatch");
    TensorT<T> y({n, out_dim});
    ConstRowMatMap<T> xm(x.data(), n, in_dim);
    ConstRowMatMap<T> wm(weight.data(), out_dim, in_dim);
    RowMatMap<T> ym(y.data(), n, out_dim);
    ym = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_dim; ++o) y(i, o) += bias(o);
    if (cache) cache->input = x;
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Cache& cache) {
    const int n = gy.dim(0);
    TensorT<T> gx({n, in_dim});
    ConstRowMatMap<T> gm(gy.data(), n, out_dim);
    ConstRowMatMap<T> xm(cache.input.data(), n, in_dim);
    ConstRowMatMap<T> wm(weight.data(), out_dim, in_dim);
    RowMatMap<T> gwm(grad_weight.data(), out_dim, in_dim);
    RowMatMap<T> gxm(gx.data(), n, in_dim);
    gwm += gm.transpose() * xm;
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_dim; ++o) grad_bias(o) += gy(i, o);
    gxm = gm * wm;
    return gx;
  }

  std::vector<ParamRefT<T>> params(const std::string& prefix) {
    return {{prefix + ".weight", &weight, &grad_weight},
            {prefix + ".bias", &bias, &grad_bias}};
  }
};

// --------------------------------------------------------------------------
// Activations and pooling (stateless; backward takes what it needs).
// --------------------------------------------------------------------------
template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& gy, const TensorT<T>& y) {
  TensorT<T> gx(gy.shape());
  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
  return gx;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      const T e = std::exp(-v);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& gy, const TensorT<T>& y) {
  TensorT<T> gx(gy.shape());
  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
  return gx;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorT<T> y({n, c});
  const T inv = T(1) / static_cast<T>(h * w);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      T s = T(0);
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) s += x(ni, ci, hi, wi);
      y(ni, ci) = s * inv;
    }
  return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& gy, const std::vector<int>& in_shape) {
  TensorT<T> gx(in_shape);
  const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
  const T inv = T(1) / static_cast<T>(h * w);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const T g = gy(ni, ci) * inv;
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) gx(ni, ci, hi, wi) = g;
    }
  return gx;
}

// ---------------------------------------------------------------------------
// Adam over an explicit parameter list. Moments are keyed by list order, which
// is stable because params() visitation order is fixed per module. Decoupled
// weight decay applies to conv/linear weights only (never biases or batch-norm
// affine terms); it is what keeps the feature norms bounded against loss terms
// that reward unbounded growth.
// ---------------------------------------------------------------------------
template <typename T>
struct AdamT {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  long step_count = 0;

  struct Slot {
    TensorT<T>* value;
    TensorT<T>* grad;
    TensorT<double> m, v;
    bool decay = false;
  };
  std::vector<Slot> slots;

  void attach(const std::vector<ParamRefT<T>>& refs) {
    for (const auto& r : refs) {
      Slot s;
      s.value = r.value;
      s.grad = r.grad;
      s.m = TensorT<double>(r.value->shape());
      s.v = TensorT<double>(r.value->shape());
      s.decay = r.name.size() >= 6 && r.name.compare(r.name.size() - 6, 6, "weight") == 0;
      slots.push_back(std::move(s));
    }
  }

  void zero_grads() {
    for (auto& s : slots) s.grad->zero();
  }

  void step() {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& s : slots) {
      const double wd = s.decay ? weight_decay : 0.0;
      for (std::size_t i = 0; i < s.value->size(); ++i) {
        const double g = static_cast<double>((*s.grad)[i]);
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        const double prev = static_cast<double>((*s.value)[i]);
        (*s.value)[i] -= static_cast<T>(lr * (mhat / (std::sqrt(vhat) + eps) + wd * prev));
      }
    }
  }
};

}  // namespace sillnet
