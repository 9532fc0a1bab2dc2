#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "sillnet/data.hpp"
#include "sillnet/image_ops.hpp"
#include "sillnet/rng.hpp"
#include "sillnet/tensor.hpp"

using namespace sillnet;

namespace {

SyntheticConfig tiny_config() {
  SyntheticConfig cfg;
  cfg.n_classes = 6;
  cfg.samples_per_class = 4;
  cfg.image_size = 16;
  cfg.seed = 5;
  return cfg;
}

SyntheticConfig identity_illumination(SyntheticConfig cfg) {
  cfg.gradient_strength = {0.0, 0.0};
  cfg.light_spot_count = 0;
  cfg.shadow_count = 0;
  cfg.gamma = {1.0, 1.0};
  return cfg;
}

bool in_unit_range(const Tensor& img) {
  for (const auto& v : img)
    if (v < 0.0f || v > 1.0f) return false;
  return true;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

TEST_CASE("a traditional split has the configured cardinalities and templates") {
  auto cfg = tiny_config();
  auto ds = generate_synthetic_dataset(cfg);
  CHECK(ds.train.size() == 6 * 4);
  CHECK(ds.test.size() == 6 * 1);  // default test count: max(1, samples/5)
  CHECK(ds.templates.size() == 6);
  CHECK(ds.train.class_ids() == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(ds.test.class_ids() == std::vector<int>{0, 1, 2, 3, 4, 5});
  for (int c = 0; c < 6; ++c) CHECK(ds.train.has_template(c));

  cfg.test_samples_per_class = 3;
  auto ds2 = generate_synthetic_dataset(cfg);
  CHECK(ds2.test.size() == 6 * 3);
}

TEST_CASE("a one-shot split puts the last classes in a disjoint test set") {
  auto cfg = tiny_config();
  cfg.one_shot = true;
  cfg.n_test_classes = 2;
  auto ds = generate_synthetic_dataset(cfg);
  CHECK(ds.train.class_ids() == std::vector<int>{0, 1, 2, 3});
  CHECK(ds.test.class_ids() == std::vector<int>{4, 5});
  CHECK(ds.test.size() == 2 * 4);  // one-shot default: full samples_per_class

  std::set<int> train_set, test_set;
  for (int c : ds.train.class_ids()) train_set.insert(c);
  for (int c : ds.test.class_ids()) test_set.insert(c);
  for (int c : test_set) CHECK(train_set.count(c) == 0);

  // Templates exist for every class, including the unseen ones.
  CHECK(ds.templates.size() == 6);
}

TEST_CASE("generation is a pure function of the config") {
  auto cfg = tiny_config();
  auto a = generate_synthetic_dataset(cfg);
  auto b = generate_synthetic_dataset(cfg);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(bit_equal(a.train.image(i), b.train.image(i)));
    CHECK(a.train.label(i) == b.train.label(i));
  }

  cfg.seed = 6;
  auto c = generate_synthetic_dataset(cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.train.size(); ++i)
    if (!bit_equal(a.train.image(i), c.train.image(i))) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("all rendered pixels stay inside the unit interval") {
  auto cfg = tiny_config();
  auto ds = generate_synthetic_dataset(cfg);
  for (std::size_t i = 0; i < ds.train.size(); ++i) CHECK(in_unit_range(ds.train.image(i)));
  for (const auto& [c, tpl] : ds.templates) {
    CHECK(in_unit_range(tpl));
    CHECK(tpl.shape() == std::vector<int>{3, 16, 16});
  }
}

TEST_CASE("zeroed illumination knobs reproduce the bare composite") {
  auto cfg = identity_illumination(tiny_config());
  auto ds = generate_synthetic_dataset(cfg);
  // Regenerate each sample through the exposed stages: with identity
  // illumination the stored image must equal the bare composite.
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    const int c = ds.train.label(i);
    const int idx = static_cast<int>(i) % cfg.samples_per_class;
    auto rng = sample_rng(cfg, 0, c, idx);
    auto composite = render_composite(cfg, c, rng);
    CHECK(max_abs_diff(ds.train.image(i), composite) < 1e-6);
  }
}

TEST_CASE("illumination with default knobs actually changes the composite") {
  auto cfg = tiny_config();
  auto rng = sample_rng(cfg, 0, 1, 2);
  auto composite = render_composite(cfg, 1, rng);
  auto lit = apply_illumination(composite, rng, cfg);
  CHECK(lit.shape() == composite.shape());
  CHECK(in_unit_range(lit));
  CHECK(max_abs_diff(lit, composite) > 1e-3);
}

TEST_CASE("templates are deterministic, distinct per class, and flat-backed") {
  auto cfg = tiny_config();
  auto t1 = render_template(cfg, 0);
  auto t2 = render_template(cfg, 0);
  CHECK(bit_equal(t1, t2));
  auto t3 = render_template(cfg, 1);
  CHECK(max_abs_diff(t1, t3) > 1e-3);
}

TEST_CASE("the renderer's class capacity bounds the config") {
  CHECK(synthetic_class_capacity() >= 30);  // the bench needs at least this
  auto cfg = tiny_config();
  cfg.n_classes = synthetic_class_capacity() + 1;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), std::invalid_argument);

  cfg = tiny_config();
  cfg.n_classes = 3;  // too few to mean anything
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), std::invalid_argument);

  cfg = tiny_config();
  cfg.image_size = 4;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), std::invalid_argument);

  cfg = tiny_config();
  cfg.one_shot = true;
  cfg.n_test_classes = 0;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), std::invalid_argument);
  cfg.n_test_classes = cfg.n_classes;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// access logging
// ---------------------------------------------------------------------------

TEST_CASE("every image and template read lands in the shared access log") {
  auto log = std::make_shared<AccessLog>();
  Dataset ds("unit", 8, log);
  Tensor img({3, 8, 8});
  ds.add_sample(img, 3);
  ds.add_sample(img, 5);
  ds.set_template(3, img);

  CHECK(log->image_reads.empty());
  ds.image(0);
  ds.image(1);
  ds.image(0);
  ds.template_image(3);
  CHECK(log->image_reads.size() == 3);
  CHECK(log->template_reads.size() == 1);
  CHECK(log->image_reads_from("unit") == 3);
  CHECK(log->image_reads_from("other") == 0);
  CHECK(log->image_reads_with_labels({3}) == 2);
  CHECK(log->image_reads_with_labels({5}) == 1);
  CHECK(log->image_reads_with_labels({4}) == 0);
  CHECK(log->image_reads[0].label == 3);
  CHECK(log->image_reads[1].index == 1);

  CHECK_THROWS_AS(ds.image(2), std::out_of_range);
  CHECK_THROWS_AS(ds.template_image(9), std::out_of_range);
}

// ---------------------------------------------------------------------------
// export / ingest round trip
// ---------------------------------------------------------------------------

TEST_CASE("an exported dataset reloads with the same labels and close pixels") {
  auto cfg = tiny_config();
  cfg.n_classes = 4;
  cfg.samples_per_class = 2;
  auto ds = generate_synthetic_dataset(cfg);

  const auto dir = temp_dir("sillnet_export_rt");
  export_dataset(ds.train, dir.string());
  CHECK(std::filesystem::exists(dir / "template_map.json"));
  CHECK(std::filesystem::exists(dir / "templates"));

  auto back = load_image_folder(dir.string(), (dir / "template_map.json").string(), 16);
  REQUIRE(back.size() == ds.train.size());
  CHECK(back.class_ids() == ds.train.class_ids());
  CHECK(back.warnings == 0);

  // PNG quantization costs at most half a level per channel.
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.label(i) == ds.train.label(i));
    CHECK(max_abs_diff(back.image(i), ds.train.image(i)) < 1.0f / 255.0f);
  }
  for (int c : back.template_class_ids())
    CHECK(max_abs_diff(back.template_image(c), ds.train.template_image(c)) < 1.0f / 255.0f);

  std::filesystem::remove_all(dir);
}

TEST_CASE("a nonzero id base shifts every loaded label") {
  auto cfg = tiny_config();
  cfg.n_classes = 4;
  cfg.samples_per_class = 2;
  auto ds = generate_synthetic_dataset(cfg);
  const auto dir = temp_dir("sillnet_idbase");
  export_dataset(ds.train, dir.string());

  auto back = load_image_folder(dir.string(), (dir / "template_map.json").string(), 16, nullptr,
                                100);
  CHECK(back.class_ids() == std::vector<int>{100, 101, 102, 103});
  CHECK(back.has_template(100));
  CHECK_FALSE(back.has_template(0));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a class folder missing from the template map is named in the error") {
  auto cfg = tiny_config();
  cfg.n_classes = 4;
  cfg.samples_per_class = 1;
  auto ds = generate_synthetic_dataset(cfg);
  const auto dir = temp_dir("sillnet_badmap");
  export_dataset(ds.train, dir.string());

  // Rewrite the map without one of the classes.
  std::string map_text;
  {
    std::ifstream in(dir / "template_map.json");
    map_text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const auto pos = map_text.find("\"class_0002\"");
  REQUIRE(pos != std::string::npos);
  const auto end = map_text.find(',', pos);
  REQUIRE(end != std::string::npos);
  map_text.erase(pos, end - pos + 1);
  {
    std::ofstream out(dir / "trimmed_map.json");
    out << map_text;
  }

  CHECK_THROWS_WITH_AS(
      load_image_folder(dir.string(), (dir / "trimmed_map.json").string(), 16),
      doctest::Contains("class_0002"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unreadable image files are skipped and counted, not fatal") {
  auto cfg = tiny_config();
  cfg.n_classes = 4;
  cfg.samples_per_class = 2;
  auto ds = generate_synthetic_dataset(cfg);
  const auto dir = temp_dir("sillnet_badpng");
  export_dataset(ds.train, dir.string());
  {
    std::ofstream out(dir / "class_0000" / "sample_junk.png", std::ios::binary);
    out << "this is not a png";
  }
  auto back = load_image_folder(dir.string(), (dir / "template_map.json").string(), 16);
  CHECK(back.warnings == 1);
  CHECK(back.size() == ds.train.size());  // the junk file contributed nothing
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// template processing
// ---------------------------------------------------------------------------

TEST_CASE("template variants are deterministic per seed and mostly distinct") {
  auto cfg = tiny_config();
  auto tpl = render_template(cfg, 2);
  CHECK(bit_equal(process_template(tpl, 9), process_template(tpl, 9)));

  std::vector<Tensor> variants;
  for (int v = 0; v < 100; ++v) variants.push_back(process_template(tpl, 1000 + v));
  int distinct = 0;
  for (int v = 1; v < 100; ++v)
    if (max_abs_diff(variants[0], variants[static_cast<std::size_t>(v)]) > 1e-4) ++distinct;
  CHECK(distinct == 99);
  for (const auto& v : variants) {
    CHECK(v.shape() == tpl.shape());
    CHECK(in_unit_range(v));
  }
}

TEST_CASE("zero-width processing ranges reproduce the template exactly") {
  auto cfg = tiny_config();
  auto tpl = render_template(cfg, 3);
  TemplateAugRanges still;
  still.rotation_deg = {0.0, 0.0};
  still.scale = {1.0, 1.0};
  still.translation_frac = {0.0, 0.0};
  still.enhance_factor = {1.0, 1.0};
  still.blur_radius = {0.0, 0.0};
  auto out = process_template(tpl, 7, still);
  CHECK(max_abs_diff(out, tpl) < 1e-5);
}

// ---------------------------------------------------------------------------
// image operations used by the pipelines
// ---------------------------------------------------------------------------

TEST_CASE("identity parameters leave images unchanged across all operations") {
  auto cfg = tiny_config();
  auto img = render_template(cfg, 1);

  CHECK(max_abs_diff(warp_affine(img, 0.0, 1.0, 0.0, 0.0), img) < 1e-5);
  CHECK(max_abs_diff(crop_resize(img, 0.0, 0.0, 1.0, 1.0), img) < 1e-5);
  CHECK(max_abs_diff(perspective_warp(img, {0, 0, 0, 0, 0, 0, 0, 0}), img) < 1e-5);
  CHECK(max_abs_diff(adjust_brightness(img, 1.0), img) < 1e-6);
  CHECK(max_abs_diff(adjust_contrast(img, 1.0), img) < 1e-6);
  CHECK(max_abs_diff(adjust_color(img, 1.0), img) < 1e-6);
  CHECK(max_abs_diff(adjust_sharpness(img, 1.0), img) < 1e-6);
  CHECK(max_abs_diff(gaussian_blur(img, 0.0), img) < 1e-6);
}

TEST_CASE("horizontal flip is an involution that really flips") {
  auto cfg = tiny_config();
  auto img = render_template(cfg, 4);
  auto flipped = flip_horizontal(img);
  CHECK(max_abs_diff(flip_horizontal(flipped), img) < 1e-6);
  CHECK(max_abs_diff(flipped, img) > 1e-3);
  CHECK(flipped(0, 3, 0) == doctest::Approx(img(0, 3, 15)).epsilon(1e-6));
}

TEST_CASE("photometric adjustments move pixels in the expected direction") {
  auto cfg = tiny_config();
  auto img = render_template(cfg, 0);
  auto bright = adjust_brightness(img, 1.5);
  double sum_in = 0, sum_out = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    sum_in += img[i];
    sum_out += bright[i];
  }
  CHECK(sum_out > sum_in);

  // Zero-factor contrast collapses to the mean-luminance gray image.
  auto flat = adjust_contrast(img, 0.0);
  for (std::size_t i = 1; i < flat.size(); ++i)
    CHECK(flat[i] == doctest::Approx(flat[0]).epsilon(1e-4));

  // Zero-factor color collapses channels to the per-pixel gray value.
  auto gray = adjust_color(img, 0.0);
  const int hw = 16 * 16;
  for (int p = 0; p < hw; ++p) {
    CHECK(gray[p] == doctest::Approx(gray[hw + p]).epsilon(1e-4));
    CHECK(gray[p] == doctest::Approx(gray[2 * hw + p]).epsilon(1e-4));
  }

  auto blurred = gaussian_blur(img, 2.0);
  CHECK(max_abs_diff(blurred, img) > 1e-3);
}

TEST_CASE("png write/read round trip preserves pixels to quantization") {
  auto cfg = tiny_config();
  auto img = render_template(cfg, 5);
  const auto path = std::filesystem::temp_directory_path() / "sillnet_png_rt.png";
  write_png(img, path.string());
  auto back = read_image(path.string());
  REQUIRE(back.shape() == img.shape());
  CHECK(max_abs_diff(back, img) < 1.0f / 255.0f);

  auto resized = read_image(path.string(), 8);
  CHECK(resized.shape() == std::vector<int>{3, 8, 8});
  std::filesystem::remove(path);
}
