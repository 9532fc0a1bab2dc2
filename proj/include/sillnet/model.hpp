#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sillnet/nn.hpp"
#include "sillnet/spatial.hpp"
#include "sillnet/tensor.hpp"

namespace sillnet {

// A feature grid split down the channel axis: the first C channels carry the
// semantic content, the last C the illumination.
template <typename T>
struct SplitFeatureT {
  TensorT<T> sem;
  TensorT<T> illu;
};
using SplitFeature = SplitFeatureT<float>;

// Six coefficients of a 2x3 affine map in normalized coordinates, row-major
// (a11, a12, tx, a21, a22, ty).
template <typename T>
struct AffineParamsT {
  std::array<T, 6> coeff{T(1), T(0), T(0), T(0), T(1), T(0)};
};
using AffineParams = AffineParamsT<float>;

struct ModelConfig {
  int C = 32;          // channels per half; the encoder emits 2C
  int image_size = 32; // square inputs
  int M = 0;           // classifier output width: train and test classes together
  std::uint64_t seed = 0;
  int version = 1;
};

// Splits [N,2C,H,W] into two [N,C,H,W] halves (copies).
template <typename T>
SplitFeatureT<T> split_channels(const TensorT<T>& z) {
  const int n = z.dim(0), c2 = z.dim(1), h = z.dim(2), w = z.dim(3);
  if (c2 % 2 != 0) throw std::invalid_argument("split_channels: odd channel count");
  const int c = c2 / 2;
  SplitFeatureT<T> out{TensorT<T>({n, c, h, w}), TensorT<T>({n, c, h, w})};
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) {
          out.sem(ni, ci, hi, wi) = z(ni, ci, hi, wi);
          out.illu(ni, ci, hi, wi) = z(ni, c + ci, hi, wi);
        }
  return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (!a.same_shape(b)) throw std::invalid_argument("concat_channels: halves disagree");
  TensorT<T> z({n, 2 * c, h, w});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci)
      for (int hi = 0; hi < h; ++hi)
        for (int wi = 0; wi < w; ++wi) {
          z(ni, ci, hi, wi) = a(ni, ci, hi, wi);
          z(ni, c + ci, hi, wi) = b(ni, ci, hi, wi);
        }
  return z;
}

template <typename T>
TensorT<T> make_batch1(const TensorT<T>& t) {
  std::vector<int> s = t.shape();
  s.insert(s.begin(), 1);
  TensorT<T> out(s);
  std::copy(t.begin(), t.end(), out.begin());
  return out;
}

template <typename T>
TensorT<T> drop_batch1(const TensorT<T>& t) {
  std::vector<int> s(t.shape().begin() + 1, t.shape().end());
  TensorT<T> out(s);
  std::copy(t.begin(), t.end(), out.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Feature extractor: four stride-1 same-padding 3x3 convolutions with batch
// norm + ReLU between them. No downsampling anywhere, so the feature grid
// keeps the input's spatial extent; the final layer emits 2C channels through
// a plain (non-affine) batch norm and no nonlinearity — both halves need the
// full real line, but at a bounded per-channel scale, since the dispersion
// objective on the illumination half rewards unbounded feature growth and
// would otherwise drown the mixed features it feeds.
// ---------------------------------------------------------------------------
template <typename T>
struct EncoderT {
  Conv2dT<T> c1, c2, c3, c4;
  BatchNorm2dT<T> b1, b2, b3, b4;

  struct Cache {
    typename Conv2dT<T>::Cache c1, c2, c3, c4;
    typename BatchNorm2dT<T>::Cache b1, b2, b3, b4;
    TensorT<T> r1, r2, r3;
  };

  EncoderT() = default;
  explicit EncoderT(int c_half) {
    const int wide = 2 * c_half;
    c1 = Conv2dT<T>(3, wide, 3, 1, 1);
    c2 = Conv2dT<T>(wide, wide, 3, 1, 1);
    c3 = Conv2dT<T>(wide, wide, 3, 1, 1);
    c4 = Conv2dT<T>(wide, wide, 3, 1, 1);
    b1 = BatchNorm2dT<T>(wide);
    b2 = BatchNorm2dT<T>(wide);
    b3 = BatchNorm2dT<T>(wide);
    b4 = BatchNorm2dT<T>(wide, /*with_affine=*/false);
  }

  void init(Rng& rng) {
    c1.init(rng);
    c2.init(rng);
    c3.init(rng);
    c4.init(rng);
  }

  TensorT<T> forward(const TensorT<T>& x, bool training, Cache* k) {
    auto h1 = relu(b1.forward(c1.forward(x, k ? &k->c1 : nullptr), training, k ? &k->b1 : nullptr));
    if (k) k->r1 = h1;
    auto h2 =
        relu(b2.forward(c2.forward(h1, k ? &k->c2 : nullptr), training, k ? &k->b2 : nullptr));
    if (k) k->r2 = h2;
    auto h3 =
        relu(b3.forward(c3.forward(h2, k ? &k->c3 : nullptr), training, k ? &k->b3 : nullptr));
    if (k) k->r3 = h3;
    return b4.forward(c4.forward(h3, k ? &k->c4 : nullptr), training, k ? &k->b4 : nullptr);
  }

  TensorT<T> backward(const TensorT<T>& gz, const Cache& k) {
    auto g4 = b4.backward(gz, k.b4);
    auto g3 = b3.backward(relu_backward(c4.backward(g4, k.c4), k.r3), k.b3);
    auto g2 = b2.backward(relu_backward(c3.backward(g3, k.c3), k.r2), k.b2);
    auto g1 = b1.backward(relu_backward(c2.backward(g2, k.c2), k.r1), k.b1);
    return c1.backward(g1, k.c1);
  }

  std::vector<ParamRefT<T>> params(const std::string& p) {
    std::vector<ParamRefT<T>> out;
    for (auto& r : c1.params(p + ".conv1")) out.push_back(r);
    for (auto& r : b1.params(p + ".bn1")) out.push_back(r);
    for (auto& r : c2.params(p + ".conv2")) out.push_back(r);
    for (auto& r : b2.params(p + ".bn2")) out.push_back(r);
    for (auto& r : c3.params(p + ".conv3")) out.push_back(r);
    for (auto& r : b3.params(p + ".bn3")) out.push_back(r);
    for (auto& r : c4.params(p + ".conv4")) out.push_back(r);
    return out;
  }
  std::vector<BufferRefT<T>> buffers(const std::string& p) {
    std::vector<BufferRefT<T>> out;
    for (auto& r : b1.buffers(p + ".bn1")) out.push_back(r);
    for (auto& r : b2.buffers(p + ".bn2")) out.push_back(r);
    for (auto& r : b3.buffers(p + ".bn3")) out.push_back(r);
    for (auto& r : b4.buffers(p + ".bn4")) out.push_back(r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Localization head: predicts the six affine coefficients from a semantic
// grid. Two stride-2 convs + GAP + linear; the linear layer starts at exactly
// zero weight with the identity map in its bias, so rectification begins as a
// no-op and drifts away only when the matching pressure asks it to.
// ---------------------------------------------------------------------------
template <typename T>
struct LocNetT {
  Conv2dT<T> c1, c2;
  LinearT<T> fc;

  struct Cache {
    typename Conv2dT<T>::Cache c1, c2;
    TensorT<T> r1, r2;
    std::vector<int> pre_pool_shape;
    typename LinearT<T>::Cache fc;
  };

  LocNetT() = default;
  explicit LocNetT(int c_in) {
    const int wide = 2 * c_in;
    c1 = Conv2dT<T>(c_in, wide, 3, 2, 1);
    c2 = Conv2dT<T>(wide, wide, 3, 2, 1);
    fc = LinearT<T>(wide, 6);
  }

  void init(Rng& rng) {
    c1.init(rng);
    c2.init(rng);
    fc.weight.zero();
    fc.bias(0) = T(1);
    fc.bias(1) = T(0);
    fc.bias(2) = T(0);
    fc.bias(3) = T(0);
    fc.bias(4) = T(1);
    fc.bias(5) = T(0);
  }

  TensorT<T> forward(const TensorT<T>& x, Cache* k) {
    auto h1 = relu(c1.forward(x, k ? &k->c1 : nullptr));
    if (k) k->r1 = h1;
    auto h2 = relu(c2.forward(h1, k ? &k->c2 : nullptr));
    if (k) {
      k->r2 = h2;
      k->pre_pool_shape = h2.shape();
    }
    return fc.forward(global_avg_pool(h2), k ? &k->fc : nullptr);
  }

  TensorT<T> backward(const TensorT<T>& gtheta, const Cache& k) {
    auto gpool = fc.backward(gtheta, k.fc);
    auto g2 = relu_backward(global_avg_pool_backward(gpool, k.pre_pool_shape), k.r2);
    auto g1 = relu_backward(c2.backward(g2, k.c2), k.r1);
    return c1.backward(g1, k.c1);
  }

  std::vector<ParamRefT<T>> params(const std::string& p) {
    std::vector<ParamRefT<T>> out;
    for (auto& r : c1.params(p + ".conv1")) out.push_back(r);
    for (auto& r : c2.params(p + ".conv2")) out.push_back(r);
    for (auto& r : fc.params(p + ".fc")) out.push_back(r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Pixel decoder: three stride-1 convs ending in 3 channels + sigmoid. Used
// twice: from a rectified semantic grid back to the class template, and (with
// a 2C input) from a full split feature back to the photograph.
// ---------------------------------------------------------------------------
template <typename T>
struct DecoderT {
  Conv2dT<T> c1, c2, c3;

  struct Cache {
    typename Conv2dT<T>::Cache c1, c2, c3;
    TensorT<T> r1, r2, out;
  };

  DecoderT() = default;
  DecoderT(int c_in, int wide) {
    c1 = Conv2dT<T>(c_in, wide, 3, 1, 1);
    c2 = Conv2dT<T>(wide, wide, 3, 1, 1);
    c3 = Conv2dT<T>(wide, 3, 3, 1, 1);
  }

  void init(Rng& rng) {
    c1.init(rng);
    c2.init(rng);
    c3.init(rng);
  }

  TensorT<T> forward(const TensorT<T>& x, Cache* k) {
    auto h1 = relu(c1.forward(x, k ? &k->c1 : nullptr));
    if (k) k->r1 = h1;
    auto h2 = relu(c2.forward(h1, k ? &k->c2 : nullptr));
    if (k) k->r2 = h2;
    auto y = sigmoid(c3.forward(h2, k ? &k->c3 : nullptr));
    if (k) k->out = y;
    return y;
  }

  TensorT<T> backward(const TensorT<T>& gy, const Cache& k) {
    auto g3 = c3.backward(sigmoid_backward(gy, k.out), k.c3);
    auto g2 = relu_backward(g3, k.r2);
    auto g1 = relu_backward(c2.backward(g2, k.c2), k.r1);
    return c1.backward(g1, k.c1);
  }

  std::vector<ParamRefT<T>> params(const std::string& p) {
    std::vector<ParamRefT<T>> out;
    for (auto& r : c1.params(p + ".conv1")) out.push_back(r);
    for (auto& r : c2.params(p + ".conv2")) out.push_back(r);
    for (auto& r : c3.params(p + ".conv3")) out.push_back(r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Classifier head on a C-channel (mixed) grid: two stride-2 convs + GAP +
// linear to M logits. The final layer starts near zero so an untrained head
// scores all classes evenly.
// ---------------------------------------------------------------------------
template <typename T>
struct ClassifierT {
  Conv2dT<T> c1, c2;
  LinearT<T> fc;

  struct Cache {
    typename Conv2dT<T>::Cache c1, c2;
    TensorT<T> r1, r2;
    std::vector<int> pre_pool_shape;
    typename LinearT<T>::Cache fc;
  };

  ClassifierT() = default;
  ClassifierT(int c_in, int m) {
    const int wide = 4 * c_in;  // pooled width is the head's bottleneck
    c1 = Conv2dT<T>(c_in, wide, 3, 2, 1);
    c2 = Conv2dT<T>(wide, wide, 3, 2, 1);
    fc = LinearT<T>(wide, m);
  }

  void init(Rng& rng) {
    c1.init(rng);
    c2.init(rng);
    normal_init(fc.weight, 0.01, rng);
    fc.bias.zero();
  }

  TensorT<T> forward(const TensorT<T>& x, Cache* k) {
    auto h1 = relu(c1.forward(x, k ? &k->c1 : nullptr));
    if (k) k->r1 = h1;
    auto h2 = relu(c2.forward(h1, k ? &k->c2 : nullptr));
    if (k) {
      k->r2 = h2;
      k->pre_pool_shape = h2.shape();
    }
    return fc.forward(global_avg_pool(h2), k ? &k->fc : nullptr);
  }

  TensorT<T> backward(const TensorT<T>& glogits, const Cache& k) {
    auto gpool = fc.backward(glogits, k.fc);
    auto g2 = relu_backward(global_avg_pool_backward(gpool, k.pre_pool_shape), k.r2);
    auto g1 = relu_backward(c2.backward(g2, k.c2), k.r1);
    return c1.backward(g1, k.c1);
  }

  std::vector<ParamRefT<T>> params(const std::string& p) {
    std::vector<ParamRefT<T>> out;
    for (auto& r : c1.params(p + ".conv1")) out.push_back(r);
    for (auto& r : c2.params(p + ".conv2")) out.push_back(r);
    for (auto& r : fc.params(p + ".fc")) out.push_back(r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// The full separation model.
// ---------------------------------------------------------------------------
template <typename T>
struct SillModelT {
  ModelConfig cfg;
  EncoderT<T> encoder;
  LocNetT<T> locnet;
  DecoderT<T> template_decoder;
  DecoderT<T> real_decoder;
  ClassifierT<T> classifier;
  bool classifier_trained = false;

  SillModelT() = default;
  explicit SillModelT(const ModelConfig& config)
      : cfg(config),
        encoder(config.C),
        locnet(config.C),
        template_decoder(config.C, 2 * config.C),
        real_decoder(2 * config.C, 2 * config.C),
        classifier(config.C, config.M) {
    if (config.C <= 0 || config.image_size <= 0 || config.M <= 0)
      throw std::invalid_argument("model config: C, image_size and M must be positive");
    Rng rng(Rng::derive(config.seed, 0x5111));
    encoder.init(rng);
    locnet.init(rng);
    template_decoder.init(rng);
    real_decoder.init(rng);
    classifier.init(rng);
  }

  // --- single-image entry points (eval-mode batch internals of size 1) ---

  SplitFeatureT<T> encode(const TensorT<T>& image) {
    check_image(image, "encode");
    auto z = encoder.forward(make_batch1(image), /*training=*/false, nullptr);
    auto halves = split_channels(z);
    return {drop_batch1(halves.sem), drop_batch1(halves.illu)};
  }

  std::pair<TensorT<T>, AffineParamsT<T>> rectify(const TensorT<T>& sem) {
    check_grid(sem, "rectify");
    auto batch = make_batch1(sem);
    auto theta = locnet.forward(batch, nullptr);
    AffineParamsT<T> params;
    for (int k = 0; k < 6; ++k) {
      if (!std::isfinite(static_cast<double>(theta(0, k))))
        throw std::runtime_error("rectify: degenerate (non-finite) predicted affine params");
      params.coeff[static_cast<std::size_t>(k)] = theta(0, k);
    }
    return {drop_batch1(affine_sample(batch, theta)), params};
  }

  TensorT<T> reconstruct_template(const TensorT<T>& rectified_sem) {
    check_grid(rectified_sem, "reconstruct_template");
    return drop_batch1(template_decoder.forward(make_batch1(rectified_sem), nullptr));
  }

  std::vector<T> classify(const TensorT<T>& mixed) {
    check_grid(mixed, "classify");
    auto logits = classifier.forward(make_batch1(mixed), nullptr);
    std::vector<T> out(static_cast<std::size_t>(cfg.M));
    for (int j = 0; j < cfg.M; ++j) out[static_cast<std::size_t>(j)] = logits(0, j);
    return out;
  }

  TensorT<T> reconstruct_real(const SplitFeatureT<T>& split) {
    check_grid(split.sem, "reconstruct_real");
    check_grid(split.illu, "reconstruct_real");
    auto z = concat_channels(make_batch1(split.sem), make_batch1(split.illu));
    return drop_batch1(real_decoder.forward(z, nullptr));
  }

  // --- parameter visitation ---

  std::vector<ParamRefT<T>> all_params() {
    std::vector<ParamRefT<T>> out;
    append(out, encoder.params("encoder"));
    append(out, locnet.params("locnet"));
    append(out, template_decoder.params("template_decoder"));
    append(out, real_decoder.params("real_decoder"));
    append(out, classifier.params("classifier"));
    return out;
  }
  std::vector<ParamRefT<T>> separation_params() {
    std::vector<ParamRefT<T>> out;
    append(out, encoder.params("encoder"));
    append(out, locnet.params("locnet"));
    append(out, template_decoder.params("template_decoder"));
    append(out, classifier.params("classifier"));
    return out;
  }
  std::vector<BufferRefT<T>> all_buffers() { return encoder.buffers("encoder"); }

  void zero_all_grads() {
    for (auto& p : all_params()) p.grad->zero();
  }

 private:
  static void append(std::vector<ParamRefT<T>>& to, std::vector<ParamRefT<T>> from) {
    for (auto& r : from) to.push_back(std::move(r));
  }
  void check_image(const TensorT<T>& t, const char* who) const {
    if (t.rank() != 3 || t.dim(0) != 3 || t.dim(1) != cfg.image_size || t.dim(2) != cfg.image_size)
      throw std::invalid_argument(std::string(who) + ": expected a [3," +
                                  std::to_string(cfg.image_size) + "," +
                                  std::to_string(cfg.image_size) + "] image");
    if (!all_finite(t)) throw std::invalid_argument(std::string(who) + ": non-finite input");
  }
  void check_grid(const TensorT<T>& t, const char* who) const {
    if (t.rank() != 3 || t.dim(0) != cfg.C || t.dim(1) != cfg.image_size ||
        t.dim(2) != cfg.image_size)
      throw std::invalid_argument(std::string(who) + ": expected a [" + std::to_string(cfg.C) +
                                  "," + std::to_string(cfg.image_size) + "," +
                                  std::to_string(cfg.image_size) + "] feature grid");
  }
};

using SillModel = SillModelT<float>;

}  // namespace sillnet
