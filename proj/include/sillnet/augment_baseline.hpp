#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sillnet/data.hpp"
#include "sillnet/eval.hpp"
#include "sillnet/tensor.hpp"
#include "sillnet/training.hpp"

namespace sillnet {

// A conventional image-augmentation recipe: each enabled family draws its
// parameters per call from the configured range. Zero-width ranges at the
// identity value (rotation 0, crop fraction 1, factor 1, radius 0, magnitude
// 0, flip probability 0) make that family a no-op.
struct AugPolicy {
  bool warp = false;
  bool crop = false;
  bool rotate = false;
  bool flip = false;
  bool enhance = false;
  bool blur = false;

  double warp_magnitude = 0.08;    // corner jitter, fraction of the side
  Range crop_fraction{0.75, 1.0};  // retained side fraction
  Range rotation_deg{-15.0, 15.0};
  double flip_prob = 0.5;
  Range enhance_factor{0.7, 1.3};  // brightness/color/contrast/sharpness
  Range blur_radius{0.0, 1.5};     // pixels

  std::uint64_t seed = 0;
};

// Throws std::invalid_argument unless at least one family is enabled and the
// ranges are sane.
void validate_policy(const AugPolicy& policy);

// Applies the enabled families in a fixed order (warp, crop, rotate, flip,
// enhance, blur) with parameters drawn deterministically from (policy.seed,
// seed). Output stays [0,1] at the input size.
Tensor apply_policy(const Tensor& image, const AugPolicy& policy, std::uint64_t seed);

// The eight comparison arms, in row order: one arm per augmentation family,
// the all-families arm, and the illumination-repository arm (with template
// processing disabled so both sides augment from the same bare templates).
// Every arm shares the same separation-phase model, seed, epochs and splits;
// only the augmentation source differs.
std::vector<EvalReport> run_comparison(const OneShotTask& task, const TrainConfig& base_config);

}  // namespace sillnet
