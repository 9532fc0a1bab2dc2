#include "sillnet/training.hpp"

#include <algorithm>
#include <iostream>
#include <optional>
#include <set>

#include "sillnet/checkpoint.hpp"
#include "sillnet/feature_ops.hpp"

namespace sillnet {

namespace {

template <typename V>
void shuffle_vec(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
}

void put_row(const Tensor& item, Tensor& batch, int row) {
  const std::size_t plane = item.size();
  for (std::size_t k = 0; k < plane; ++k)
    batch[static_cast<std::size_t>(row) * plane + k] = item[k];
}

// Class-balanced batch order: samples enter the stream in same-class pairs so
// every class present in a batch has at least two members (what the
// illumination-dispersion term needs). With an even batch size the chunking
// never splits a pair. Classes left with a single unused sample drop it for
// the epoch.
std::vector<std::vector<int>> balanced_batches(const std::vector<int>& labels, int batch_size,
                                               Rng& rng) {
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(static_cast<int>(i));
  std::vector<int> class_order;
  for (const auto& [c, v] : by_class) class_order.push_back(c);
  shuffle_vec(class_order, rng);
  std::map<int, std::size_t> cursor;
  for (int c : class_order) shuffle_vec(by_class[c], rng);

  std::vector<int> stream;
  bool progressed = true;
  while (progressed) {
    progressed = false;
    for (int c : class_order) {
      auto& v = by_class[c];
      auto& cur = cursor[c];
      if (v.size() - cur >= 2) {
        stream.push_back(v[cur]);
        stream.push_back(v[cur + 1]);
        cur += 2;
        progressed = true;
      }
    }
  }

  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < stream.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(stream.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(i),
                         stream.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

SeparationBatch build_batch(const Dataset& ds, const std::vector<int>& indices, int m,
                            std::uint64_t pairing_seed) {
  const int b = static_cast<int>(indices.size());
  const int s = ds.image_size();
  SeparationBatch batch;
  batch.images = Tensor({b, 3, s, s});
  batch.labels.resize(indices.size());
  for (int i = 0; i < b; ++i) {
    put_row(ds.image(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])),
            batch.images, i);
    batch.labels[static_cast<std::size_t>(i)] =
        ds.label(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]));
    if (batch.labels[static_cast<std::size_t>(i)] >= m)
      throw std::invalid_argument("train_separation: label exceeds configured class count");
  }
  std::set<int> distinct(batch.labels.begin(), batch.labels.end());
  std::map<int, int> tpl_row;
  batch.templates = Tensor({static_cast<int>(distinct.size()), 3, s, s});
  int row = 0;
  for (int label : distinct) {
    put_row(ds.template_image(label), batch.templates, row);
    tpl_row[label] = row++;
  }
  batch.tpl_of.resize(indices.size());
  for (int i = 0; i < b; ++i)
    batch.tpl_of[static_cast<std::size_t>(i)] = tpl_row[batch.labels[static_cast<std::size_t>(i)]];
  batch.partners = draw_partners(indices.size(), pairing_seed);
  return batch;
}

struct ModelSnapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
  bool classifier_trained = false;
};

ModelSnapshot take_snapshot(SillModel& m) {
  ModelSnapshot s;
  for (const auto& p : m.all_params()) s.params.push_back(*p.value);
  for (const auto& b : m.all_buffers()) s.buffers.push_back(*b.value);
  s.classifier_trained = m.classifier_trained;
  return s;
}

void restore_snapshot(SillModel& m, const ModelSnapshot& s) {
  auto params = m.all_params();
  auto buffers = m.all_buffers();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = s.params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].value = s.buffers[i];
  m.classifier_trained = s.classifier_trained;
}

void check_positive_range(float r, const char* who) {
  if (!(r > 0.0f && r <= 1.0f))
    throw std::invalid_argument(std::string(who) + " must lie in (0,1]");
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  check_positive_range(cfg.r, "train config: r");
  check_positive_range(cfg.r_phase2, "train config: r_phase2");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
  if (cfg.weight_decay < 0.0)
    throw std::invalid_argument("train config: weight decay must be non-negative");
  if (cfg.batch_size < 4 || cfg.batch_size % 2 != 0)
    throw std::invalid_argument("train config: batch size must be even and at least 4");
  if (cfg.epochs_phase1 < 1 || cfg.epochs_phase2 < 1 || cfg.epochs_recon < 1)
    throw std::invalid_argument("train config: epoch counts must be positive");
  if (cfg.model_channels < 1)
    throw std::invalid_argument("train config: model_channels must be positive");
  if (cfg.template_variants < 1)
    throw std::invalid_argument("train config: template_variants must be positive");
  if (cfg.repo_k < 0 || cfg.repo_n_exp < 0)
    throw std::invalid_argument("train config: repository recipe values must be non-negative");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0 && cfg.adam_beta2 >= 0.0 &&
        cfg.adam_beta2 < 1.0 && cfg.adam_eps > 0.0))
    throw std::invalid_argument("train config: bad optimizer hyperparameters");
  if (cfg.n_total_classes < 0)
    throw std::invalid_argument("train config: n_total_classes must be non-negative");
}

SeparationToggles toggles_of(const TrainConfig& cfg) {
  return SeparationToggles{cfg.exchange, cfg.match, cfg.recon, cfg.illu};
}

SeparationResult train_separation(const Dataset& dataset, const TrainConfig& config) {
  validate_train_config(config);
  if (dataset.size() == 0)
    throw std::invalid_argument("train_separation: dataset has no samples");
  int max_class = 0;
  for (int label : dataset.class_ids()) {
    if (!dataset.has_template(label))
      throw std::invalid_argument("train_separation: class " + std::to_string(label) +
                                  " has no template");
    max_class = std::max(max_class, label);
  }
  for (int label : dataset.template_class_ids()) max_class = std::max(max_class, label);
  const int m = config.n_total_classes > 0 ? config.n_total_classes : max_class + 1;

  ModelConfig mc;
  mc.C = config.model_channels;
  mc.image_size = dataset.image_size();
  mc.M = m;
  mc.seed = config.seed;
  SillModel model(mc);

  AdamT<float> adam;
  adam.lr = config.lr;
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.eps = config.adam_eps;
  adam.weight_decay = config.weight_decay;
  auto sep_params = model.separation_params();
  adam.attach(sep_params);

  const SeparationToggles toggles = toggles_of(config);
  ModelSnapshot last_good = take_snapshot(model);
  std::vector<LossReport> reports;
  bool diverged = false;
  int completed = 0;

  for (int epoch = 0; epoch < config.epochs_phase1; ++epoch) {
    Rng erng(Rng::derive(config.seed, 0xBA7C00ULL + static_cast<std::uint64_t>(epoch)));
    const auto batches = balanced_batches(dataset.labels(), config.batch_size, erng);
    LossReport sum;
    std::size_t nb = 0;
    try {
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const std::uint64_t pairing_seed =
            Rng::derive(config.seed, 0x9A12900000ULL ^
                                         (static_cast<std::uint64_t>(epoch) << 20) ^ bi);
        auto batch = build_batch(dataset, batches[bi], m, pairing_seed);
        adam.zero_grads();
        const LossReport rep = separation_step(model, batch, toggles, config.r);
        adam.step();
        sum.exchange += rep.exchange;
        sum.match += rep.match;
        sum.template_recon += rep.template_recon;
        sum.illumination += rep.illumination;
        sum.total += rep.total;
        ++nb;
      }
    } catch (const std::runtime_error& e) {
      std::cerr << "[sillnet] separation training diverged in epoch " << epoch + 1 << ": "
                << e.what() << "; restoring last epoch-end state\n";
      restore_snapshot(model, last_good);
      diverged = true;
      break;
    }
    if (nb > 0) {
      const double inv = 1.0 / static_cast<double>(nb);
      sum.exchange *= inv;
      sum.match *= inv;
      sum.template_recon *= inv;
      sum.illumination *= inv;
      sum.total *= inv;
    }
    reports.push_back(sum);
    last_good = take_snapshot(model);
    completed = epoch + 1;
  }

  model.classifier_trained = config.exchange && completed > 0;
  if (!config.checkpoint_dir.empty())
    save_checkpoint(model, config.checkpoint_dir + "/separation.ckpt");

  IlluminationRepository repo = build_repository_from_model(model, dataset, config.seed);
  return SeparationResult{std::move(model), std::move(repo), std::move(reports), diverged,
                          completed};
}

IlluminationRepository build_repository_from_model(SillModel& model, const Dataset& dataset,
                                                   std::uint64_t seed) {
  if (dataset.size() == 0)
    throw std::invalid_argument("build repository: dataset has no samples");
  std::vector<SplitFeature> features;
  features.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    features.push_back(model.encode(dataset.image(i)));
  return build_repository(features, "train:" + dataset.name(), seed);
}

AugmentationResult train_augmentation(const SillModel& base, const IlluminationRepository& repo,
                                      const std::map<int, std::vector<Tensor>>& support_templates,
                                      const std::vector<int>& support_class_ids,
                                      const TrainConfig& config,
                                      const VariantFn* custom_variant) {
  validate_train_config(config);
  if (support_class_ids.empty())
    throw std::invalid_argument("train_augmentation: empty support class list");
  std::vector<int> ids(support_class_ids);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int id : ids) {
    auto it = support_templates.find(id);
    if (it == support_templates.end() || it->second.empty())
      throw std::invalid_argument("train_augmentation: support set is missing class " +
                                  std::to_string(id));
    if (id < 0 || id >= base.cfg.M)
      throw std::invalid_argument("train_augmentation: class " + std::to_string(id) +
                                  " is outside the classifier's range");
  }
  if (config.use_illum_augmentation) {
    if (repo.size() == 0)
      throw std::invalid_argument("train_augmentation: illumination repository is empty");
    if (repo.channels() != base.cfg.C || repo.height() != base.cfg.image_size ||
        repo.width() != base.cfg.image_size)
      throw std::invalid_argument(
          "train_augmentation: repository features do not match the model grid");
  }

  AugmentationResult result{base, {}, 0, 0};
  SillModel& net = result.model;
  net.classifier = ClassifierT<float>(net.cfg.C, net.cfg.M);
  Rng crng(Rng::derive(config.seed, 0xC1A55));
  net.classifier.init(crng);
  net.classifier_trained = false;

  AdamT<float> adam;
  adam.lr = config.lr;
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.eps = config.adam_eps;
  adam.weight_decay = config.weight_decay;
  std::vector<ParamRefT<float>> refs = net.classifier.params("classifier");
  if (!config.freeze_encoder_phase2)
    for (auto& p : net.encoder.params("encoder")) refs.push_back(p);
  adam.attach(refs);

  const int s = net.cfg.image_size;
  const int c_half = net.cfg.C;

  bool stepped = false;
  for (int epoch = 0; epoch < config.epochs_phase2; ++epoch) {
    // Fresh support variants each epoch; their semantic halves are the slots
    // of the augmentation product.
    std::vector<std::vector<Tensor>> slot_sems, slot_images;
    std::vector<int> slot_labels;
    for (int id : ids) {
      const auto& tpls = support_templates.at(id);
      const bool processed = custom_variant != nullptr || config.template_processing;
      const int vcount =
          processed ? std::max(1, config.template_variants) : static_cast<int>(tpls.size());
      std::vector<Tensor> sems, imgs;
      for (int v = 0; v < vcount; ++v) {
        const Tensor& base_tpl = tpls[static_cast<std::size_t>(v) % tpls.size()];
        Tensor img;
        if (custom_variant) {
          img = (*custom_variant)(base_tpl, id, v, epoch);
        } else if (config.template_processing) {
          const std::uint64_t vseed =
              Rng::derive(config.seed, 0xAB0000000000ULL ^
                                           (static_cast<std::uint64_t>(epoch) << 28) ^
                                           (static_cast<std::uint64_t>(id) << 8) ^
                                           static_cast<std::uint64_t>(v));
          img = process_template(base_tpl, vseed);
        } else {
          img = base_tpl;
        }
        sems.push_back(net.encode(img).sem);
        if (!config.freeze_encoder_phase2) imgs.push_back(std::move(img));
      }
      result.variants_per_template = static_cast<int>(sems.size());
      slot_sems.push_back(std::move(sems));
      slot_images.push_back(std::move(imgs));
      slot_labels.push_back(id);
    }

    // Assemble this epoch's feature pass.
    std::vector<std::size_t> order;
    std::size_t pass_size = 0;
    const float r2 = config.use_illum_augmentation ? config.r_phase2 : 1.0f;
    std::optional<AugmentedStream> stream;
    if (config.use_illum_augmentation) {
      stream.emplace(slot_sems, slot_labels, &repo, r2);
      pass_size = stream->size();
    } else {
      for (std::size_t slot = 0; slot < slot_sems.size(); ++slot)
        pass_size += slot_sems[slot].size();
    }
    result.features_per_epoch = pass_size;
    order.resize(pass_size);
    for (std::size_t i = 0; i < pass_size; ++i) order[i] = i;
    Rng srng(Rng::derive(config.seed, 0xF00D00ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_vec(order, srng);

    // Index decoding for the bare-semantics arm: slot-major over variants.
    std::vector<std::pair<std::size_t, std::size_t>> bare_items;
    if (!config.use_illum_augmentation) {
      for (std::size_t slot = 0; slot < slot_sems.size(); ++slot)
        for (std::size_t v = 0; v < slot_sems[slot].size(); ++v) bare_items.push_back({slot, v});
    }

    double epoch_loss = 0.0;
    std::size_t nb = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const int b = static_cast<int>(end - start);
      std::vector<int> labels(static_cast<std::size_t>(b));

      if (config.freeze_encoder_phase2) {
        Tensor mixed({b, c_half, s, s});
        for (int i = 0; i < b; ++i) {
          const std::size_t idx = order[start + static_cast<std::size_t>(i)];
          if (config.use_illum_augmentation) {
            MixedFeature mf = stream->at(idx);
            put_row(mf.grid, mixed, i);
            labels[static_cast<std::size_t>(i)] = mf.label;
          } else {
            const auto [slot, v] = bare_items[idx];
            // r = 1 keeps the classifier's input pattern on the shared path
            // while contributing no illumination.
            put_row(mix(slot_sems[slot][v], slot_sems[slot][v], 1.0f), mixed, i);
            labels[static_cast<std::size_t>(i)] = slot_labels[slot];
          }
        }
        adam.zero_grads();
        epoch_loss += augmentation_step(net, mixed, labels);
      } else {
        Tensor images({b, 3, s, s});
        Tensor bank({b, c_half, s, s});
        for (int i = 0; i < b; ++i) {
          const std::size_t idx = order[start + static_cast<std::size_t>(i)];
          if (config.use_illum_augmentation) {
            const std::size_t slot = idx / repo.size();
            const std::size_t j = idx % repo.size();
            put_row(slot_images[slot][j % slot_images[slot].size()], images, i);
            put_row(repo.feature(j), bank, i);
            labels[static_cast<std::size_t>(i)] = slot_labels[slot];
          } else {
            const auto [slot, v] = bare_items[idx];
            put_row(slot_images[slot][v], images, i);
            labels[static_cast<std::size_t>(i)] = slot_labels[slot];
          }
        }
        adam.zero_grads();
        epoch_loss += augmentation_step_with_encoder(net, images, bank, labels, r2);
      }
      adam.step();
      stepped = true;
      ++nb;
    }
    result.epoch_losses.push_back(nb > 0 ? epoch_loss / static_cast<double>(nb) : 0.0);
  }

  net.classifier_trained = stepped;
  return result;
}

ReconTrainResult train_real_reconstructor(const SillModel& base, const Dataset& dataset,
                                          const TrainConfig& config) {
  validate_train_config(config);
  if (dataset.size() == 0)
    throw std::invalid_argument("train_real_reconstructor: dataset has no samples");

  ReconTrainResult result{base, {}, false};
  SillModel& model = result.model;
  AdamT<float> adam;
  adam.lr = config.lr;
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.eps = config.adam_eps;
  adam.weight_decay = config.weight_decay;
  auto refs = model.real_decoder.params("real_decoder");
  adam.attach(refs);

  ModelSnapshot last_good = take_snapshot(model);
  const int s = model.cfg.image_size;

  for (int epoch = 0; epoch < config.epochs_recon; ++epoch) {
    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng erng(Rng::derive(config.seed, 0x2ECC00ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_vec(order, erng);

    double epoch_loss = 0.0;
    std::size_t nb = 0;
    try {
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        const int b = static_cast<int>(end - start);
        Tensor images({b, 3, s, s});
        for (int i = 0; i < b; ++i)
          put_row(dataset.image(static_cast<std::size_t>(
                      order[start + static_cast<std::size_t>(i)])),
                  images, i);
        adam.zero_grads();
        epoch_loss += reconstruction_step(model, images);
        adam.step();
        ++nb;
      }
    } catch (const std::runtime_error& e) {
      std::cerr << "[sillnet] reconstructor training diverged in epoch " << epoch + 1 << ": "
                << e.what() << "; restoring last epoch-end state\n";
      restore_snapshot(model, last_good);
      result.diverged = true;
      break;
    }
    result.epoch_losses.push_back(nb > 0 ? epoch_loss / static_cast<double>(nb) : 0.0);
    last_good = take_snapshot(model);
  }
  return result;
}

}  // namespace sillnet
