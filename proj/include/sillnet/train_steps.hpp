#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include "sillnet/losses.hpp"
#include "sillnet/model.hpp"
#include "sillnet/spatial.hpp"

namespace sillnet {

// Which parts of the separation objective are active. Disabling a part removes
// both its loss value and its gradient contribution entirely.
struct SeparationToggles {
  bool exchange = true;
  bool match = true;
  bool recon = true;
  bool illu = true;
};

// One separation batch with all randomness resolved by the caller (partner
// choice), so a step is a deterministic function of (model, batch). Templates
// are deduplicated: tpl_of maps each sample to its class template's row.
template <typename T>
struct SeparationBatchT {
  TensorT<T> images;        // [B,3,S,S]
  std::vector<int> labels;  // size B
  TensorT<T> templates;     // [K,3,S,S], one row per distinct class in the batch
  std::vector<int> tpl_of;  // size B, row index into templates
  std::vector<int> partners;  // size B, illumination donor for the exchange set
};

using SeparationBatch = SeparationBatchT<float>;

namespace detail {

template <typename T>
void copy_plane(const TensorT<T>& src, int row, TensorT<T>& dst, int dst_row) {
  const std::size_t plane = src.size() / static_cast<std::size_t>(src.dim(0));
  for (std::size_t k = 0; k < plane; ++k)
    dst[static_cast<std::size_t>(dst_row) * plane + k] =
        src[static_cast<std::size_t>(row) * plane + k];
}

template <typename T>
TensorT<T> take_plane(const TensorT<T>& src, int row) {
  std::vector<int> shape(src.shape().begin() + 1, src.shape().end());
  TensorT<T> out(shape);
  const std::size_t plane = out.size();
  for (std::size_t k = 0; k < plane; ++k)
    out[k] = src[static_cast<std::size_t>(row) * plane + k];
  return out;
}

template <typename T>
void validate_batch(const SillModelT<T>& model, const SeparationBatchT<T>& batch) {
  const int s = model.cfg.image_size;
  if (batch.images.rank() != 4 || batch.images.dim(1) != 3 || batch.images.dim(2) != s ||
      batch.images.dim(3) != s)
    throw std::invalid_argument("separation step: images must be [B,3,S,S]");
  const int b = batch.images.dim(0);
  if (b < 1) throw std::invalid_argument("separation step: empty batch");
  if (static_cast<int>(batch.labels.size()) != b ||
      static_cast<int>(batch.tpl_of.size()) != b ||
      static_cast<int>(batch.partners.size()) != b)
    throw std::invalid_argument("separation step: per-sample lists must match batch size");
  if (batch.templates.rank() != 4 || batch.templates.dim(1) != 3 ||
      batch.templates.dim(2) != s || batch.templates.dim(3) != s)
    throw std::invalid_argument("separation step: templates must be [K,3,S,S]");
  const int k = batch.templates.dim(0);
  for (int i = 0; i < b; ++i) {
    if (batch.labels[i] < 0 || batch.labels[i] >= model.cfg.M)
      throw std::invalid_argument("separation step: label outside classifier range");
    if (batch.tpl_of[i] < 0 || batch.tpl_of[i] >= k)
      throw std::invalid_argument("separation step: template index out of range");
    if (batch.partners[i] < 0 || batch.partners[i] >= b)
      throw std::invalid_argument("separation step: partner index out of range");
  }
}

}  // namespace detail

// Forward + backward of one separation batch. Gradients accumulate into the
// model's parameter grads (the caller zeroes and applies the optimizer step).
// Throws on a non-finite objective so the trainer can fall back to its last
// good checkpoint.
template <typename T>
LossReport separation_step(SillModelT<T>& model, const SeparationBatchT<T>& batch,
                           const SeparationToggles& tg, T r) {
  detail::validate_batch(model, batch);
  if (!(r > T(0) && r <= T(1)))
    throw std::invalid_argument("separation step: r must lie in (0,1]");
  const int b = batch.images.dim(0);

  // Encode the photographs with gradient tracking. The templates act as
  // fixed anchors: their semantic halves are targets the photograph branch is
  // pulled toward, never the other way round — letting gradients flow into
  // the template branch would let the encoder shrink the anchors toward the
  // photographs and collapse every class onto one point.
  typename EncoderT<T>::Cache ek_x;
  auto z_x = model.encoder.forward(batch.images, true, &ek_x);
  auto hx = split_channels(z_x);
  auto z_t = model.encoder.forward(batch.templates, true, nullptr);
  auto ht = split_channels(z_t);

  const std::size_t plane = hx.sem.size() / static_cast<std::size_t>(b);

  // Exchange: each sample keeps its semantics, takes a partner's illumination.
  double exchange_val = 0.0;
  CrossEntropyResult<T> ce;
  typename ClassifierT<T>::Cache ck;
  if (tg.exchange) {
    TensorT<T> mixed(hx.sem.shape());
    const T q = T(1) - r;
    for (int i = 0; i < b; ++i) {
      const std::size_t di = static_cast<std::size_t>(i) * plane;
      const std::size_t dj = static_cast<std::size_t>(batch.partners[i]) * plane;
      for (std::size_t k = 0; k < plane; ++k)
        mixed[di + k] = r * hx.sem[di + k] + q * hx.illu[dj + k];
    }
    auto logits = model.classifier.forward(mixed, &ck);
    ce = exchange_loss(logits, batch.labels);
    exchange_val = ce.value;
  }

  // Rectification feeds both the match loss and the template reconstruction.
  typename LocNetT<T>::Cache lk;
  TensorT<T> theta, rect;
  const bool need_rect = tg.match || tg.recon;
  if (need_rect) {
    theta = model.locnet.forward(hx.sem, &lk);
    if (!all_finite(theta))
      throw std::runtime_error("separation step: non-finite affine parameters");
    rect = affine_sample(hx.sem, theta);
  }

  TensorT<T> tpl_sem, tpl_img;
  if (need_rect) {
    tpl_sem = TensorT<T>(hx.sem.shape());
    tpl_img = TensorT<T>(batch.images.shape());
    for (int i = 0; i < b; ++i) {
      detail::copy_plane(ht.sem, batch.tpl_of[i], tpl_sem, i);
      detail::copy_plane(batch.templates, batch.tpl_of[i], tpl_img, i);
    }
  }

  double match_val = 0.0;
  MseResult<T> mres;
  if (tg.match) {
    mres = match_loss(rect, tpl_sem);
    match_val = mres.value;
  }

  double recon_val = 0.0;
  BceResult<T> bres;
  typename DecoderT<T>::Cache dk;
  if (tg.recon) {
    auto pred = model.template_decoder.forward(rect, &dk);
    bres = bce_image_loss(pred, tpl_img);
    recon_val = bres.value;
  }

  // Illumination dispersion: -PIDA over the batch's per-class groups, scaled
  // by batch size.
  double illu_val = 0.0;
  PidaResult<T> pres;
  std::vector<std::vector<int>> group_members;
  if (tg.illu) {
    std::map<int, std::vector<int>> by_label;
    for (int i = 0; i < b; ++i) by_label[batch.labels[i]].push_back(i);
    std::vector<std::vector<TensorT<T>>> groups;
    for (auto& [label, members] : by_label) {
      std::vector<TensorT<T>> g;
      g.reserve(members.size());
      for (int i : members) g.push_back(detail::take_plane(hx.illu, i));
      groups.push_back(std::move(g));
      group_members.push_back(members);
    }
    pres = pida(groups);
    illu_val = -pres.value / b;
  }

  const LossReport report =
      total_separation_loss(exchange_val, match_val, recon_val, illu_val);

  // ---- backward ----

  TensorT<T> gsem(hx.sem.shape());
  TensorT<T> gillu(hx.illu.shape());

  if (tg.exchange) {
    auto gmix = model.classifier.backward(ce.grad_logits, ck);
    const T q = T(1) - r;
    for (int i = 0; i < b; ++i) {
      const std::size_t di = static_cast<std::size_t>(i) * plane;
      const std::size_t dj = static_cast<std::size_t>(batch.partners[i]) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        gsem[di + k] += r * gmix[di + k];
        gillu[dj + k] += q * gmix[di + k];
      }
    }
  }

  if (need_rect) {
    TensorT<T> grect(rect.shape());
    if (tg.match) grect.add_scaled(mres.grad_a, T(1));
    if (tg.recon) grect.add_scaled(model.template_decoder.backward(bres.grad_pred, dk), T(1));

    TensorT<T> gsem_sample(hx.sem.shape());
    TensorT<T> gtheta({b, 6});
    affine_sample_backward(hx.sem, theta, grect, &gsem_sample, &gtheta);
    gsem.add_scaled(gsem_sample, T(1));
    gsem.add_scaled(model.locnet.backward(gtheta, lk), T(1));
  }

  if (tg.illu) {
    const T s = T(-1) / static_cast<T>(b);
    for (std::size_t c = 0; c < group_members.size(); ++c)
      for (std::size_t m = 0; m < group_members[c].size(); ++m) {
        const std::size_t di = static_cast<std::size_t>(group_members[c][m]) * plane;
        const auto& g = pres.grads[c][m];
        for (std::size_t k = 0; k < plane; ++k) gillu[di + k] += s * g[k];
      }
  }

  model.encoder.backward(concat_channels(gsem, gillu), ek_x);
  return report;
}

// One classifier step on a batch of already-mixed feature grids (the
// augmentation phase with a frozen encoder). Gradients stop at the grid.
template <typename T>
double augmentation_step(SillModelT<T>& model, const TensorT<T>& mixed,
                         const std::vector<int>& labels) {
  if (mixed.rank() != 4) throw std::invalid_argument("augmentation step: grids must be [B,C,S,S]");
  typename ClassifierT<T>::Cache ck;
  auto logits = model.classifier.forward(mixed, &ck);
  auto ce = augmentation_loss(logits, labels);
  if (!std::isfinite(ce.value))
    throw std::runtime_error("augmentation step: non-finite loss");
  model.classifier.backward(ce.grad_logits, ck);
  return ce.value;
}

// Augmentation step that keeps the encoder in the graph (freeze_encoder off).
// The support images are encoded with frozen batch-norm statistics; the
// illumination half of the mix comes from the repository, so encoder
// gradients flow only through the semantic half.
template <typename T>
double augmentation_step_with_encoder(SillModelT<T>& model, const TensorT<T>& images,
                                      const TensorT<T>& illu_bank,
                                      const std::vector<int>& labels, T r) {
  typename EncoderT<T>::Cache ek;
  auto z = model.encoder.forward(images, /*training=*/false, &ek);
  auto h = split_channels(z);
  if (!h.sem.same_shape(illu_bank))
    throw std::invalid_argument("augmentation step: illumination bank shape mismatch");
  TensorT<T> mixed(h.sem.shape());
  const T q = T(1) - r;
  for (std::size_t k = 0; k < mixed.size(); ++k) mixed[k] = r * h.sem[k] + q * illu_bank[k];

  typename ClassifierT<T>::Cache ck;
  auto logits = model.classifier.forward(mixed, &ck);
  auto ce = augmentation_loss(logits, labels);
  if (!std::isfinite(ce.value))
    throw std::runtime_error("augmentation step: non-finite loss");
  auto gmix = model.classifier.backward(ce.grad_logits, ck);
  TensorT<T> gsem(gmix.shape());
  gsem.add_scaled(gmix, r);
  TensorT<T> gillu(gmix.shape());
  model.encoder.backward(concat_channels(gsem, gillu), ek);
  return ce.value;
}

// One step of the real-image reconstructor: both halves of the (frozen)
// encoding are decoded back to the photograph under pixel BCE.
template <typename T>
double reconstruction_step(SillModelT<T>& model, const TensorT<T>& images) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("reconstruction step: images must be [B,3,S,S]");
  auto z = model.encoder.forward(images, /*training=*/false, nullptr);
  typename DecoderT<T>::Cache dk;
  auto pred = model.real_decoder.forward(z, &dk);
  auto bce = bce_image_loss(pred, images);
  if (!std::isfinite(bce.value))
    throw std::runtime_error("reconstruction step: non-finite loss");
  model.real_decoder.backward(bce.grad_pred, dk);
  return bce.value;
}

}  // namespace sillnet
