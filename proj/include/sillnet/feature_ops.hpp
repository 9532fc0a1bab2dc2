#pragma once

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sillnet/model.hpp"
#include "sillnet/repository.hpp"
#include "sillnet/rng.hpp"
#include "sillnet/tensor.hpp"

namespace sillnet {

// Channel-wise convex blend of a semantic half with an illumination half:
// r * sem + (1 - r) * illu. The endpoints are exact: r = 1 returns sem
// unchanged, r = 0 returns illu unchanged.
template <typename T>
TensorT<T> mix(const TensorT<T>& sem, const TensorT<T>& illu, T r) {
  if (!sem.same_shape(illu)) throw std::invalid_argument("mix: halves differ in shape");
  if (!(r >= T(0) && r <= T(1))) throw std::invalid_argument("mix: r must lie in [0,1]");
  TensorT<T> out(sem.shape());
  const T q = T(1) - r;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r * sem[i] + q * illu[i];
  return out;
}

// A mixed grid plus the provenance needed to audit it: which element donated
// the semantics (and hence the label), which donated the illumination, and
// the blend proportion.
struct MixedFeature {
  Tensor grid;
  int label = -1;
  int sem_source = -1;
  int illu_source = -1;
  float r = 0.5f;
};

// One uniformly drawn illumination partner per element (self-pairing allowed).
// Shared by the exchange-batch builder and the Phase-1 training loop so both
// draw pairs the same way.
inline std::vector<int> draw_partners(std::size_t n, std::uint64_t pairing_seed) {
  Rng rng(Rng::derive(pairing_seed, 0xE8C));
  std::vector<int> partners(n);
  for (auto& p : partners) p = rng.uniform_int(static_cast<int>(n));
  return partners;
}

// The exchange set of a separation batch: element i keeps its own semantics
// (and label) and takes the illumination of a random partner.
inline std::vector<MixedFeature> build_exchange_batch(const std::vector<SplitFeature>& features,
                                                      const std::vector<int>& labels, float r,
                                                      std::uint64_t pairing_seed) {
  if (features.empty()) throw std::invalid_argument("exchange batch: empty feature list");
  if (features.size() != labels.size())
    throw std::invalid_argument("exchange batch: feature/label count mismatch");
  const auto partners = draw_partners(features.size(), pairing_seed);
  std::vector<MixedFeature> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int j = partners[i];
    MixedFeature mf;
    mf.grid = mix(features[i].sem, features[static_cast<std::size_t>(j)].illu, r);
    mf.label = labels[i];
    mf.sem_source = static_cast<int>(i);
    mf.illu_source = j;
    mf.r = r;
    out.push_back(std::move(mf));
  }
  return out;
}

// Lazy view over the cross product {support sems} x {repository features}.
// Iteration order is support-major, repository-minor; nothing is materialized
// until at() is called, so a 40k-feature bank costs no memory here. A slot may
// hold several semantic variants of the same support template, cycled by
// repository index -- the product cardinality stays slots x |repo| either way.
class AugmentedStream {
 public:
  AugmentedStream(std::vector<std::vector<Tensor>> variants_per_slot, std::vector<int> labels,
                  const IlluminationRepository* repo, float r)
      : variants_(std::move(variants_per_slot)), labels_(std::move(labels)), repo_(repo), r_(r) {
    if (variants_.size() != labels_.size())
      throw std::invalid_argument("augmented set: slot/label count mismatch");
    for (const auto& vs : variants_) {
      if (vs.empty()) throw std::invalid_argument("augmented set: slot with no semantic variant");
      for (const auto& v : vs)
        if (v.dim(0) != repo_->channels() || v.dim(1) != repo_->height() ||
            v.dim(2) != repo_->width())
          throw std::invalid_argument(
              "augmented set: support sem channels do not match repository features");
    }
    if (repo_->empty())
      std::cerr << "[sillnet] warning: augmented set built over an empty repository; "
                   "the stream is empty\n";
  }

  std::size_t size() const { return variants_.size() * repo_->size(); }
  bool empty() const { return size() == 0; }

  MixedFeature at(std::size_t idx) const {
    if (idx >= size()) throw std::out_of_range("augmented set: index past the end");
    const std::size_t slot = idx / repo_->size();
    const std::size_t j = idx % repo_->size();
    const auto& vs = variants_[slot];
    MixedFeature mf;
    mf.grid = mix(vs[j % vs.size()], repo_->feature(j), r_);
    mf.label = labels_[slot];
    mf.sem_source = static_cast<int>(slot);
    mf.illu_source = static_cast<int>(j);
    mf.r = r_;
    return mf;
  }

 private:
  std::vector<std::vector<Tensor>> variants_;
  std::vector<int> labels_;
  const IlluminationRepository* repo_;
  float r_;
};

// The augmentation product for one support set: every support semantic half
// against every stored illumination feature.
inline AugmentedStream build_augmented_set(const std::vector<std::pair<Tensor, int>>& support_sems,
                                           const IlluminationRepository& repo, float r) {
  std::vector<std::vector<Tensor>> variants;
  std::vector<int> labels;
  variants.reserve(support_sems.size());
  for (const auto& [sem, label] : support_sems) {
    variants.push_back({sem});
    labels.push_back(label);
  }
  return AugmentedStream(std::move(variants), std::move(labels), &repo, r);
}

}  // namespace sillnet
