#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sillnet/data.hpp"
#include "sillnet/model.hpp"
#include "sillnet/repository.hpp"
#include "sillnet/train_steps.hpp"

namespace sillnet {

struct TrainConfig {
  int model_channels = 32;  // C: channels per feature half
  float r = 0.5f;           // separation-phase mix proportion
  float r_phase2 = 0.5f;    // augmentation-phase (and inference) mix proportion
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, conv/linear weights only
  int batch_size = 64;
  int epochs_phase1 = 10;
  int epochs_phase2 = 10;
  int epochs_recon = 5;
  std::uint64_t seed = 0;

  // Ablation toggles.
  bool exchange = true;
  bool match = true;
  bool recon = true;
  bool illu = true;
  bool template_processing = true;

  // Phase-2 shape.
  bool use_illum_augmentation = true;  // off: classifier trains on bare semantic halves
  bool freeze_encoder_phase2 = true;
  int template_variants = 4;  // distinct processed variants per support template per epoch

  // Repository recipe applied before augmentation (0 leaves the bank raw).
  int repo_k = 0;
  int repo_n_exp = 0;

  // Classifier width. 0 infers max(label, template class) + 1 from the
  // training set; one-shot runs must state the full train+test class count
  // here since phase 1 never sees test-class labels.
  int n_total_classes = 0;

  std::string checkpoint_dir;  // when set, phase 1 writes its final checkpoint here
};

void validate_train_config(const TrainConfig& cfg);

SeparationToggles toggles_of(const TrainConfig& cfg);

struct SeparationResult {
  SillModel model;
  IlluminationRepository repo;
  std::vector<LossReport> epoch_reports;
  bool diverged = false;
  int completed_epochs = 0;
};

// Phase 1: learn the split. Per batch it encodes images and their class
// templates, builds the exchange set, applies the active loss parts, and
// steps the optimizer on their sum; after the last epoch the illumination
// repository is built from a full pass over the training set. A non-finite
// loss aborts training and returns the last epoch-end state.
SeparationResult train_separation(const Dataset& dataset, const TrainConfig& config);

// Builds the raw repository from a trained model: one illumination feature per
// training sample, in dataset order.
IlluminationRepository build_repository_from_model(SillModel& model, const Dataset& dataset,
                                                   std::uint64_t seed);

// Optional custom variant source for the augmentation phase (the standard-
// augmentation comparison arms swap in their own policies here). Arguments:
// base template, class id, variant index, epoch.
using VariantFn = std::function<Tensor(const Tensor&, int, int, int)>;

struct AugmentationResult {
  SillModel model;
  std::vector<double> epoch_losses;
  std::size_t features_per_epoch = 0;
  int variants_per_template = 0;
};

// Phase 2: re-initialize the classifier and train it on the product of
// support-template semantic halves with the illumination repository. Only
// template images (and their processed variants) are ever encoded; the test
// split itself is never touched.
AugmentationResult train_augmentation(const SillModel& model, const IlluminationRepository& repo,
                                      const std::map<int, std::vector<Tensor>>& support_templates,
                                      const std::vector<int>& support_class_ids,
                                      const TrainConfig& config,
                                      const VariantFn* custom_variant = nullptr);

struct ReconTrainResult {
  SillModel model;
  std::vector<double> epoch_losses;
  bool diverged = false;
};

// Trains the real-image reconstructor on top of the frozen encoder.
ReconTrainResult train_real_reconstructor(const SillModel& model, const Dataset& dataset,
                                          const TrainConfig& config);

}  // namespace sillnet
