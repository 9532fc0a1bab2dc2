#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sillnet/tensor.hpp"

namespace sillnet {

// Per-batch breakdown of the separation objective. `illumination` is the
// signed term that enters the sum (it is -PIDA scaled by batch size, hence
// never positive); `total` is the plain unit-weighted sum of the four parts.
struct LossReport {
  double exchange = 0.0;
  double match = 0.0;
  double template_recon = 0.0;
  double illumination = 0.0;
  double total = 0.0;
};

inline LossReport total_separation_loss(double exchange, double match, double template_recon,
                                        double illumination) {
  auto guard = [](double v, const char* part) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("separation loss: non-finite ") + part + " term");
  };
  guard(exchange, "exchange");
  guard(match, "match");
  guard(template_recon, "template reconstruction");
  guard(illumination, "illumination");
  LossReport r;
  r.exchange = exchange;
  r.match = match;
  r.template_recon = template_recon;
  r.illumination = illumination;
  r.total = exchange + match + template_recon + illumination;
  return r;
}

template <typename T>
struct CrossEntropyResult {
  double value = 0.0;
  TensorT<T> grad_logits;  // same shape as logits
};

// Mean softmax cross entropy over the batch, computed in the shifted
// log-sum-exp form so finite logits always give finite loss and gradients.
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const TensorT<T>& logits,
                                            const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("cross entropy: logits must be [N, M]");
  const int n = logits.dim(0), m = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("cross entropy: batch/label count mismatch");
  CrossEntropyResult<T> out;
  out.grad_logits = TensorT<T>(logits.shape());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= m) throw std::invalid_argument("cross entropy: label out of range");
    double mx = logits(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, static_cast<double>(logits(i, j)));
    double lse = 0.0;
    for (int j = 0; j < m; ++j) lse += std::exp(static_cast<double>(logits(i, j)) - mx);
    const double log_z = mx + std::log(lse);
    total += log_z - static_cast<double>(logits(i, y));
    for (int j = 0; j < m; ++j) {
      const double p = std::exp(static_cast<double>(logits(i, j)) - log_z);
      out.grad_logits(i, j) = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / n);
    }
  }
  out.value = total / n;
  return out;
}

// The exchange loss of the separation phase and the augmentation loss of the
// one-shot phase are both mean cross entropy on mixed-feature logits; keeping
// named entry points makes call sites say which phase they belong to.
template <typename T>
CrossEntropyResult<T> exchange_loss(const TensorT<T>& logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(logits, labels);
}
template <typename T>
CrossEntropyResult<T> augmentation_loss(const TensorT<T>& logits, const std::vector<int>& labels) {
  return softmax_cross_entropy(logits, labels);
}

template <typename T>
struct MseResult {
  double value = 0.0;
  TensorT<T> grad_a;  // d value / d a; the gradient w.r.t. b is its negation
};

// Mean squared error over every element (batch and grid alike).
template <typename T>
MseResult<T> match_loss(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("match loss: shape mismatch");
  if (a.size() == 0) throw std::invalid_argument("match loss: empty input");
  MseResult<T> out;
  out.grad_a = TensorT<T>(a.shape());
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    total += d * d;
    out.grad_a[i] = static_cast<T>(2.0 * d * inv);
  }
  out.value = total * inv;
  return out;
}

template <typename T>
struct BceResult {
  double value = 0.0;
  TensorT<T> grad_pred;
  long clamped = 0;  // elements that touched {0,1} and were clamped to [eps,1-eps]
};

// Mean binary cross entropy between a predicted image and a target image,
// both expected in [0,1]. Predictions exactly at the endpoints are clamped to
// [eps, 1-eps] and counted, so the loss and gradient stay finite.
template <typename T>
BceResult<T> bce_image_loss(const TensorT<T>& pred, const TensorT<T>& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("bce loss: shape mismatch");
  if (pred.size() == 0) throw std::invalid_argument("bce loss: empty input");
  constexpr double kEps = 1e-7;
  BceResult<T> out;
  out.grad_pred = TensorT<T>(pred.shape());
  const double inv = 1.0 / static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double p = static_cast<double>(pred[i]);
    const double t = static_cast<double>(target[i]);
    if (p <= 0.0 || p >= 1.0) {
      p = std::min(1.0 - kEps, std::max(kEps, p));
      ++out.clamped;
    }
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    out.grad_pred[i] = static_cast<T>((p - t) / (p * (1.0 - p)) * inv);
  }
  out.value = total * inv;
  return out;
}

template <typename T>
struct PidaResult {
  double value = 0.0;
  // grads[c][i] is d value / d member i of class group c.
  std::vector<std::vector<TensorT<T>>> grads;
};

// Pseudo intra-class distance: for each class group, the sum of Euclidean
// distances (over the flattened grid) from each member to the group mean.
// Adding a constant grid to every member of a group leaves it unchanged, and
// it is zero exactly when each group has collapsed onto its mean. The mean is
// a function of the members, so the gradient carries both the direct term and
// the through-the-mean term.
template <typename T>
PidaResult<T> pida(const std::vector<std::vector<TensorT<T>>>& groups) {
  if (groups.empty()) throw std::invalid_argument("pida: empty grouping");
  PidaResult<T> out;
  out.grads.resize(groups.size());
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const auto& g = groups[c];
    if (g.empty()) throw std::invalid_argument("pida: group with no members");
    const std::size_t numel = g[0].size();
    for (const auto& z : g)
      if (z.size() != numel) throw std::invalid_argument("pida: member shape mismatch");

    std::vector<double> mean(numel, 0.0);
    for (const auto& z : g)
      for (std::size_t k = 0; k < numel; ++k) mean[k] += static_cast<double>(z[k]);
    for (auto& v : mean) v /= static_cast<double>(g.size());

    // Unit directions (z_i - mu)/||z_i - mu||; zero where a member sits on the
    // mean exactly (that member contributes no distance and no gradient).
    std::vector<std::vector<double>> dirs(g.size(), std::vector<double>(numel, 0.0));
    std::vector<double> dir_sum(numel, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < numel; ++k) {
        const double d = static_cast<double>(g[i][k]) - mean[k];
        dirs[i][k] = d;
        sq += d * d;
      }
      const double norm = std::sqrt(sq);
      out.value += norm;
      if (norm > 0.0) {
        for (std::size_t k = 0; k < numel; ++k) {
          dirs[i][k] /= norm;
          dir_sum[k] += dirs[i][k];
        }
      } else {
        std::fill(dirs[i].begin(), dirs[i].end(), 0.0);
      }
    }
    out.grads[c].reserve(g.size());
    const double inv_n = 1.0 / static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      TensorT<T> grad(g[i].shape());
      for (std::size_t k = 0; k < numel; ++k)
        grad[k] = static_cast<T>(dirs[i][k] - inv_n * dir_sum[k]);
      out.grads[c].push_back(std::move(grad));
    }
  }
  return out;
}

}  // namespace sillnet
