#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sillnet/rng.hpp"
#include "sillnet/tensor.hpp"

namespace sillnet {

// Every image access goes through Dataset::image(), which records the read
// here. The one-shot protocol tests assert that no test-class photograph is
// ever read during either training phase; this log is the evidence.
struct AccessLog {
  struct Event {
    std::string dataset;
    std::size_t index;
    int label;
  };
  std::vector<Event> image_reads;
  std::vector<Event> template_reads;

  std::size_t image_reads_from(const std::string& dataset_name) const {
    std::size_t n = 0;
    for (const auto& e : image_reads)
      if (e.dataset == dataset_name) ++n;
    return n;
  }
  std::size_t image_reads_with_labels(const std::set<int>& labels) const {
    std::size_t n = 0;
    for (const auto& e : image_reads)
      if (labels.count(e.label)) ++n;
    return n;
  }
};

class Dataset {
 public:
  Dataset(std::string name, int image_size, std::shared_ptr<AccessLog> log)
      : name_(std::move(name)), image_size_(image_size), log_(std::move(log)) {
    if (image_size_ < 4) throw std::invalid_argument("dataset image size too small");
    if (!log_) log_ = std::make_shared<AccessLog>();
  }

  void add_sample(Tensor image, int label);
  void set_template(int label, Tensor tpl);

  std::size_t size() const { return images_.size(); }
  int label(std::size_t i) const { return labels_.at(i); }
  const std::vector<int>& labels() const { return labels_; }

  // Logged accessors — the only way to the pixels.
  const Tensor& image(std::size_t i) const;
  const Tensor& template_image(int label) const;

  bool has_template(int label) const { return templates_.count(label) > 0; }
  std::vector<int> class_ids() const;  // sorted distinct labels
  std::vector<int> template_class_ids() const;

  const std::string& name() const { return name_; }
  int image_size() const { return image_size_; }
  const std::shared_ptr<AccessLog>& access_log() const { return log_; }

  int warnings = 0;  // unreadable files skipped during folder ingestion

 private:
  std::string name_;
  int image_size_;
  std::shared_ptr<AccessLog> log_;
  std::vector<Tensor> images_;
  std::vector<int> labels_;
  std::map<int, Tensor> templates_;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SyntheticConfig {
  int n_classes = 10;
  int samples_per_class = 50;
  int test_samples_per_class = 0;  // 0: one-shot uses samples_per_class, traditional uses /5
  int image_size = 32;
  std::uint64_t seed = 0;
  bool one_shot = false;
  int n_test_classes = 0;  // one-shot only: the last n_test_classes ids form the test set

  // Illumination overlay knobs.
  Range gradient_strength{0.3, 0.85};
  int light_spot_count = 2;
  Range light_spot_intensity{0.25, 0.7};
  int shadow_count = 2;
  Range shadow_opacity{0.35, 0.75};
  Range gamma{0.5, 1.8};

  // Glyph deformation knobs.
  Range rotation_deg{-15.0, 15.0};
  Range scale{0.8, 1.2};
  Range translation_frac{-0.1, 0.1};
};

struct SyntheticDataset {
  Dataset train;
  Dataset test;
  std::map<int, Tensor> templates;
};

// The number of distinct glyph/palette combinations the renderer can produce.
int synthetic_class_capacity();

// Deterministic canonical template for a class: a flat-background sign glyph.
Tensor render_template(const SyntheticConfig& cfg, int class_id);

// Per-sample generation stages, exposed so tests can compose them. The RNG is
// consumed in a fixed order: deformation, background, then illumination.
Rng sample_rng(const SyntheticConfig& cfg, int split_tag, int class_id, int index);
Tensor render_composite(const SyntheticConfig& cfg, int class_id, Rng& rng);
Tensor apply_illumination(const Tensor& image, Rng& rng, const SyntheticConfig& cfg);

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg);

// Writes class-named folders of PNGs plus templates/ and template_map.json,
// loadable again by load_image_folder.
void export_dataset(const Dataset& ds, const std::string& dir);

// Class ids are id_base + the class name's position in sorted template-map
// order; a nonzero base lets two folders (say a train split and a disjoint
// test split) share one label space.
Dataset load_image_folder(const std::string& root, const std::string& template_map_path,
                          int image_size = 32, std::shared_ptr<AccessLog> log = nullptr,
                          int id_base = 0);

struct TemplateAugRanges {
  Range rotation_deg{-15.0, 15.0};
  Range scale{0.8, 1.2};
  Range translation_frac{-0.1, 0.1};
  Range enhance_factor{0.7, 1.3};  // brightness/contrast/color/sharpness, each drawn separately
  Range blur_radius{0.0, 1.5};
};

// Randomized template variant: geometric transform, photometric enhancement,
// then blur, each with independently sampled parameters. Zero-width ranges
// reproduce the input exactly.
Tensor process_template(const Tensor& tpl, std::uint64_t seed,
                        const TemplateAugRanges& ranges = TemplateAugRanges{});

}  // namespace sillnet
