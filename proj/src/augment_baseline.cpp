#include "sillnet/augment_baseline.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "sillnet/image_ops.hpp"
#include "sillnet/rng.hpp"

namespace sillnet {

namespace {

void check_range(const Range& r, double lo_floor, const char* who) {
  if (!(r.lo <= r.hi) || r.lo < lo_floor)
    throw std::invalid_argument(std::string("augmentation policy: bad ") + who + " range");
}

}  // namespace

void validate_policy(const AugPolicy& policy) {
  if (!(policy.warp || policy.crop || policy.rotate || policy.flip || policy.enhance ||
        policy.blur))
    throw std::invalid_argument("augmentation policy: at least one family must be enabled");
  if (policy.warp_magnitude < 0.0)
    throw std::invalid_argument("augmentation policy: warp magnitude must be non-negative");
  check_range(policy.crop_fraction, 1e-6, "crop fraction");
  if (policy.crop_fraction.hi > 1.0)
    throw std::invalid_argument("augmentation policy: crop fraction cannot exceed 1");
  if (!(policy.rotation_deg.lo <= policy.rotation_deg.hi))
    throw std::invalid_argument("augmentation policy: bad rotation range");
  if (!(policy.flip_prob >= 0.0 && policy.flip_prob <= 1.0))
    throw std::invalid_argument("augmentation policy: flip probability must lie in [0,1]");
  check_range(policy.enhance_factor, 0.0, "enhancement factor");
  check_range(policy.blur_radius, 0.0, "blur radius");
}

Tensor apply_policy(const Tensor& image, const AugPolicy& policy, std::uint64_t seed) {
  validate_policy(policy);
  Rng rng(Rng::derive(policy.seed, seed ^ 0xA96D));
  Tensor out = image;
  if (policy.warp) {
    std::array<double, 8> offsets{};
    for (double& d : offsets) d = rng.uniform(-policy.warp_magnitude, policy.warp_magnitude);
    out = perspective_warp(out, offsets);
  }
  if (policy.crop) {
    const double f = rng.uniform(policy.crop_fraction.lo, policy.crop_fraction.hi);
    const double margin = 1.0 - f;
    const double x0 = rng.uniform(0.0, margin);
    const double y0 = rng.uniform(0.0, margin);
    out = crop_resize(out, x0, y0, f, f);
  }
  if (policy.rotate)
    out = warp_affine(out, rng.uniform(policy.rotation_deg.lo, policy.rotation_deg.hi), 1.0, 0.0,
                      0.0);
  if (policy.flip && rng.uniform() < policy.flip_prob) out = flip_horizontal(out);
  if (policy.enhance) {
    out = adjust_brightness(out, rng.uniform(policy.enhance_factor.lo, policy.enhance_factor.hi));
    out = adjust_color(out, rng.uniform(policy.enhance_factor.lo, policy.enhance_factor.hi));
    out = adjust_contrast(out, rng.uniform(policy.enhance_factor.lo, policy.enhance_factor.hi));
    out = adjust_sharpness(out, rng.uniform(policy.enhance_factor.lo, policy.enhance_factor.hi));
  }
  if (policy.blur) out = gaussian_blur(out, rng.uniform(policy.blur_radius.lo, policy.blur_radius.hi));
  return out;
}

namespace {

AugPolicy family_policy(const std::string& name, std::uint64_t seed) {
  AugPolicy p;
  p.seed = seed;
  if (name == "warp" || name == "all-aug") p.warp = true;
  if (name == "crop" || name == "all-aug") p.crop = true;
  if (name == "rotate" || name == "all-aug") p.rotate = true;
  if (name == "flip" || name == "all-aug") p.flip = true;
  if (name == "enhance" || name == "all-aug") p.enhance = true;
  if (name == "blur" || name == "all-aug") p.blur = true;
  return p;
}

}  // namespace

std::vector<EvalReport> run_comparison(const OneShotTask& task, const TrainConfig& base_config) {
  if (!task.train || !task.test)
    throw std::invalid_argument("comparison run: task is missing its splits");
  TrainConfig base = base_config;
  if (base.n_total_classes == 0) {
    int m = 0;
    for (int c : task.train_class_ids) m = std::max(m, c + 1);
    for (int c : task.support_ids) m = std::max(m, c + 1);
    base.n_total_classes = m;
  }

  const SeparationResult phase1 = train_separation(*task.train, base);
  // Every arm trains on the same number of augmented features per epoch: the
  // standard arms encode one policy-augmented template per banked
  // illumination feature, so the optimizer-step budgets match exactly.
  const std::size_t bank = apply_repo_recipe(phase1.repo, base).size();

  static const char* kFamilies[7] = {"warp", "crop",    "rotate", "flip",
                                     "enhance", "blur", "all-aug"};
  std::vector<EvalReport> rows;
  for (const char* name : kFamilies) {
    TrainConfig cfg = base;
    cfg.use_illum_augmentation = false;
    cfg.template_variants = static_cast<int>(bank);
    const AugPolicy pol = family_policy(name, base.seed);
    const VariantFn fn = [pol](const Tensor& tpl, int klass, int v, int epoch) {
      const std::uint64_t s = (static_cast<std::uint64_t>(epoch) << 48) ^
                              (static_cast<std::uint64_t>(klass) << 32) ^
                              static_cast<std::uint64_t>(v);
      return apply_policy(tpl, pol, s);
    };
    rows.push_back(run_one_shot(phase1, task, cfg, &fn, name));
  }
  {
    TrainConfig cfg = base;
    cfg.template_processing = false;  // both sides augment from the bare templates
    rows.push_back(run_one_shot(phase1, task, cfg, nullptr, "illu-aug"));
  }
  return rows;
}

}  // namespace sillnet
