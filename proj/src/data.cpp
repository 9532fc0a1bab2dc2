#include "sillnet/data.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sillnet/image_ops.hpp"

namespace sillnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

void Dataset::add_sample(Tensor image, int label) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image_size_ ||
      image.dim(2) != image_size_)
    throw std::invalid_argument("dataset " + name_ + ": sample image has wrong shape");
  if (label < 0) throw std::invalid_argument("dataset " + name_ + ": negative label");
  images_.push_back(std::move(image));
  labels_.push_back(label);
}

void Dataset::set_template(int label, Tensor tpl) {
  if (tpl.rank() != 3 || tpl.dim(0) != 3 || tpl.dim(1) != image_size_ ||
      tpl.dim(2) != image_size_)
    throw std::invalid_argument("dataset " + name_ + ": template has wrong shape");
  templates_[label] = std::move(tpl);
}

const Tensor& Dataset::image(std::size_t i) const {
  if (i >= images_.size())
    throw std::out_of_range("dataset " + name_ + ": sample index out of range");
  log_->image_reads.push_back({name_, i, labels_[i]});
  return images_[i];
}

const Tensor& Dataset::template_image(int label) const {
  auto it = templates_.find(label);
  if (it == templates_.end())
    throw std::out_of_range("dataset " + name_ + ": no template for class " +
                            std::to_string(label));
  log_->template_reads.push_back({name_, 0, label});
  return it->second;
}

std::vector<int> Dataset::class_ids() const {
  std::set<int> s(labels_.begin(), labels_.end());
  return {s.begin(), s.end()};
}

std::vector<int> Dataset::template_class_ids() const {
  std::vector<int> out;
  for (const auto& [label, tpl] : templates_) out.push_back(label);
  return out;
}

// --- glyph rendering ---------------------------------------------------------

namespace {

struct Palette {
  cv::Scalar bg, fg, accent;  // RGB order; mats here stay RGB until PNG export
};

const std::vector<Palette>& palettes() {
  static const std::vector<Palette> p = {
      {{0.92, 0.92, 0.92}, {0.80, 0.10, 0.12}, {0.15, 0.15, 0.18}},
      {{0.93, 0.93, 0.90}, {0.10, 0.25, 0.70}, {0.85, 0.70, 0.10}},
      {{0.95, 0.85, 0.20}, {0.10, 0.10, 0.12}, {0.75, 0.15, 0.10}},
      {{0.12, 0.30, 0.65}, {0.95, 0.95, 0.95}, {0.90, 0.65, 0.10}},
      {{0.70, 0.12, 0.10}, {0.96, 0.96, 0.96}, {0.10, 0.10, 0.14}},
      {{0.15, 0.15, 0.15}, {0.95, 0.80, 0.15}, {0.90, 0.90, 0.92}},
  };
  return p;
}

constexpr int kNumShapes = 22;  // 5 polygons, disc, 4 arrows, 10 digits, 2 two-tone signs

std::vector<cv::Point> regular_polygon(cv::Point2d center, double radius, int n,
                                       double start_deg) {
  std::vector<cv::Point> pts;
  for (int i = 0; i < n; ++i) {
    const double a = (start_deg + 360.0 * i / n) * CV_PI / 180.0;
    pts.emplace_back(static_cast<int>(std::lround(center.x + radius * std::cos(a))),
                     static_cast<int>(std::lround(center.y + radius * std::sin(a))));
  }
  return pts;
}

std::vector<cv::Point> arrow_polygon(cv::Point2d center, double radius, int direction) {
  // Unit arrow pointing up (-y), rotated by 90-degree steps.
  const std::vector<cv::Point2d> unit = {{0.0, -1.0},  {0.55, -0.25}, {0.22, -0.25},
                                         {0.22, 0.95}, {-0.22, 0.95}, {-0.22, -0.25},
                                         {-0.55, -0.25}};
  const double a = direction * CV_PI / 2.0;
  const double ca = std::cos(a), sa = std::sin(a);
  std::vector<cv::Point> pts;
  for (const auto& u : unit) {
    const double x = u.x * ca - u.y * sa, y = u.x * sa + u.y * ca;
    pts.emplace_back(static_cast<int>(std::lround(center.x + radius * x)),
                     static_cast<int>(std::lround(center.y + radius * y)));
  }
  return pts;
}

void draw_centered_digit(cv::Mat& canvas, int digit, const cv::Scalar& color) {
  const std::string text(1, static_cast<char>('0' + digit));
  const int font = cv::FONT_HERSHEY_DUPLEX;
  const int thickness = std::max(2, canvas.rows / 24);
  int baseline = 0;
  const cv::Size base = cv::getTextSize(text, font, 1.0, thickness, &baseline);
  const double scale = 0.62 * canvas.rows / std::max(1, base.height);
  const cv::Size sz = cv::getTextSize(text, font, scale, thickness, &baseline);
  const cv::Point org((canvas.cols - sz.width) / 2, (canvas.rows + sz.height) / 2);
  cv::putText(canvas, text, org, font, scale, color, thickness, cv::LINE_AA);
}

void draw_glyph(cv::Mat& canvas, int shape, const Palette& pal) {
  const cv::Point2d c(canvas.cols / 2.0, canvas.rows / 2.0);
  const double r = 0.40 * canvas.rows;
  auto fill = [&](const std::vector<cv::Point>& pts, const cv::Scalar& col) {
    std::vector<std::vector<cv::Point>> polys{pts};
    cv::fillPoly(canvas, polys, col, cv::LINE_AA);
  };
  if (shape < 5) {
    static const int ngon[5] = {3, 4, 5, 6, 8};
    fill(regular_polygon(c, r, ngon[shape], -90.0), pal.fg);
  } else if (shape == 5) {
    cv::circle(canvas, cv::Point(static_cast<int>(c.x), static_cast<int>(c.y)),
               static_cast<int>(r), pal.fg, cv::FILLED, cv::LINE_AA);
  } else if (shape < 10) {
    fill(arrow_polygon(c, r, shape - 6), pal.fg);
  } else if (shape < 20) {
    draw_centered_digit(canvas, shape - 10, pal.fg);
  } else if (shape == 20) {
    cv::circle(canvas, cv::Point(static_cast<int>(c.x), static_cast<int>(c.y)),
               static_cast<int>(r), pal.fg, cv::FILLED, cv::LINE_AA);
    cv::circle(canvas, cv::Point(static_cast<int>(c.x), static_cast<int>(c.y)),
               static_cast<int>(0.55 * r), pal.accent, cv::FILLED, cv::LINE_AA);
  } else {
    fill(regular_polygon(c, r, 3, -90.0), pal.fg);
    fill(regular_polygon(c, 0.52 * r, 3, -90.0), pal.accent);
  }
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi))
    throw std::invalid_argument(std::string("synthetic config: range ") + name +
                                " has lo > hi");
}

double draw(Rng& rng, const Range& r) { return rng.uniform(r.lo, r.hi); }

}  // namespace

int synthetic_class_capacity() {
  return kNumShapes * static_cast<int>(palettes().size());
}

Tensor render_template(const SyntheticConfig& cfg, int class_id) {
  if (class_id < 0 || class_id >= synthetic_class_capacity())
    throw std::invalid_argument("render_template: class id beyond glyph inventory");
  const int shape = class_id % kNumShapes;
  const Palette& pal = palettes()[class_id / kNumShapes];
  const int ss = 4;  // supersampled draw, area-downscaled for clean small glyphs
  cv::Mat canvas(cfg.image_size * ss, cfg.image_size * ss, CV_32FC3, pal.bg);
  draw_glyph(canvas, shape, pal);
  cv::Mat small;
  cv::resize(canvas, small, cv::Size(cfg.image_size, cfg.image_size), 0, 0, cv::INTER_AREA);
  return clamp01(mat_to_tensor(small));
}

Rng sample_rng(const SyntheticConfig& cfg, int split_tag, int class_id, int index) {
  const std::uint64_t stream = (static_cast<std::uint64_t>(split_tag) << 44) ^
                               (static_cast<std::uint64_t>(class_id) << 22) ^
                               static_cast<std::uint64_t>(index) ^ 0xDA7A5E7ULL;
  return Rng(Rng::derive(cfg.seed, stream));
}

Tensor render_composite(const SyntheticConfig& cfg, int class_id, Rng& rng) {
  const int S = cfg.image_size;
  Tensor tpl = render_template(cfg, class_id);

  // Deform the glyph plate.
  const double angle = draw(rng, cfg.rotation_deg);
  const double sc = draw(rng, cfg.scale);
  const double tx = draw(rng, cfg.translation_frac);
  const double ty = draw(rng, cfg.translation_frac);
  Tensor plate = warp_affine(tpl, angle, sc, tx, ty);

  // Background: a two-color gradient scene with light pixel noise.
  double c1[3], c2[3];
  for (double& v : c1) v = rng.uniform(0.1, 0.9);
  for (double& v : c2) v = rng.uniform(0.1, 0.9);
  const double phi = rng.uniform(0.0, 2.0 * CV_PI);
  const double dx = std::cos(phi), dy = std::sin(phi);
  const double paste = rng.uniform(0.72, 0.92);

  Tensor out({3, S, S});
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double px = S > 1 ? static_cast<double>(x) / (S - 1) - 0.5 : 0.0;
      const double py = S > 1 ? static_cast<double>(y) / (S - 1) - 0.5 : 0.0;
      const double t = std::clamp(0.5 + px * dx + py * dy, 0.0, 1.0);
      for (int c = 0; c < 3; ++c)
        out(c, y, x) = static_cast<float>(c1[c] + t * (c2[c] - c1[c]) + 0.02 * rng.normal());
    }

  // Paste the plate centered at its sampled scale.
  const int ps = std::max(2, static_cast<int>(std::lround(paste * S)));
  cv::Mat plate_mat = tensor_to_mat(plate);
  cv::Mat shrunk;
  cv::resize(plate_mat, shrunk, cv::Size(ps, ps), 0, 0, cv::INTER_AREA);
  const int off = (S - ps) / 2;
  for (int y = 0; y < ps; ++y) {
    const auto* row = shrunk.ptr<cv::Vec3f>(y);
    for (int x = 0; x < ps; ++x)
      for (int c = 0; c < 3; ++c) out(c, y + off, x + off) = row[x][c];
  }
  return clamp01(std::move(out));
}

Tensor apply_illumination(const Tensor& image, Rng& rng, const SyntheticConfig& cfg) {
  const int S = image.dim(1);
  Tensor out = image;

  // Linear brightness gradient: one side keeps full brightness, the other is
  // scaled down by the sampled strength.
  const double phi = rng.uniform(0.0, 2.0 * CV_PI);
  const double s = draw(rng, cfg.gradient_strength);
  const double dx = std::cos(phi), dy = std::sin(phi);
  double pmin = 1e9, pmax = -1e9;
  for (int cy = 0; cy <= 1; ++cy)
    for (int cx = 0; cx <= 1; ++cx) {
      const double p = (cx - 0.5) * dx + (cy - 0.5) * dy;
      pmin = std::min(pmin, p);
      pmax = std::max(pmax, p);
    }
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double px = S > 1 ? static_cast<double>(x) / (S - 1) - 0.5 : 0.0;
      const double py = S > 1 ? static_cast<double>(y) / (S - 1) - 0.5 : 0.0;
      const double t = pmax > pmin ? (px * dx + py * dy - pmin) / (pmax - pmin) : 0.0;
      const float m = static_cast<float>(1.0 - s * t);
      for (int c = 0; c < 3; ++c) out(c, y, x) *= m;
    }

  // Additive white light spots.
  const int n_spots = cfg.light_spot_count > 0 ? rng.uniform_int(cfg.light_spot_count + 1) : 0;
  for (int k = 0; k < n_spots; ++k) {
    const double cx = rng.uniform(0.0, 1.0) * (S - 1);
    const double cy = rng.uniform(0.0, 1.0) * (S - 1);
    const double sigma = rng.uniform(0.10, 0.30) * S;
    const double a = draw(rng, cfg.light_spot_intensity);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const float add = static_cast<float>(a * std::exp(-d2 / (2.0 * sigma * sigma)));
        for (int c = 0; c < 3; ++c) out(c, y, x) += add;
      }
  }
  for (auto& v : out) v = std::min(v, 1.0f);

  // Polygonal cast shadows with softened edges.
  const int n_shadows = cfg.shadow_count > 0 ? rng.uniform_int(cfg.shadow_count + 1) : 0;
  for (int k = 0; k < n_shadows; ++k) {
    const int nv = 3 + rng.uniform_int(4);
    const double cx = rng.uniform(0.0, 1.0) * (S - 1);
    const double cy = rng.uniform(0.0, 1.0) * (S - 1);
    std::vector<cv::Point> pts;
    for (int v = 0; v < nv; ++v) {
      const double base = 2.0 * CV_PI * v / nv;
      const double jitter = rng.uniform(-0.3, 0.3) * 2.0 * CV_PI / nv;
      const double rad = rng.uniform(0.25, 0.55) * S;
      pts.emplace_back(static_cast<int>(std::lround(cx + rad * std::cos(base + jitter))),
                       static_cast<int>(std::lround(cy + rad * std::sin(base + jitter))));
    }
    const double o = draw(rng, cfg.shadow_opacity);
    cv::Mat mask = cv::Mat::zeros(S, S, CV_32FC1);
    std::vector<std::vector<cv::Point>> polys{pts};
    cv::fillPoly(mask, polys, cv::Scalar(1.0));
    cv::GaussianBlur(mask, mask, cv::Size(5, 5), 1.0, 1.0, cv::BORDER_REPLICATE);
    for (int y = 0; y < S; ++y) {
      const float* mrow = mask.ptr<float>(y);
      for (int x = 0; x < S; ++x) {
        const float m = static_cast<float>(1.0 - o * mrow[x]);
        for (int c = 0; c < 3; ++c) out(c, y, x) *= m;
      }
    }
  }

  // Global gamma shift.
  const double g = draw(rng, cfg.gamma);
  if (g != 1.0)
    for (auto& v : out) v = std::pow(std::max(v, 0.0f), static_cast<float>(g));
  return clamp01(std::move(out));
}

// --- dataset assembly --------------------------------------------------------

namespace {

void validate_config(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 4)
    throw std::invalid_argument("synthetic config: need at least 4 classes");
  if (cfg.n_classes > synthetic_class_capacity())
    throw std::invalid_argument(
        "synthetic config: too few distinguishable glyphs for " +
        std::to_string(cfg.n_classes) + " classes (capacity " +
        std::to_string(synthetic_class_capacity()) + ")");
  if (cfg.samples_per_class < 1)
    throw std::invalid_argument("synthetic config: samples_per_class must be positive");
  if (cfg.image_size < 8)
    throw std::invalid_argument("synthetic config: image_size must be at least 8");
  if (cfg.one_shot && (cfg.n_test_classes < 1 || cfg.n_test_classes >= cfg.n_classes))
    throw std::invalid_argument(
        "synthetic config: one-shot mode needs 0 < n_test_classes < n_classes");
  check_range(cfg.gradient_strength, "gradient_strength");
  check_range(cfg.light_spot_intensity, "light_spot_intensity");
  check_range(cfg.shadow_opacity, "shadow_opacity");
  check_range(cfg.gamma, "gamma");
  check_range(cfg.rotation_deg, "rotation_deg");
  check_range(cfg.scale, "scale");
  check_range(cfg.translation_frac, "translation_frac");
  if (cfg.scale.lo <= 0.0)
    throw std::invalid_argument("synthetic config: scale range must be positive");
  if (cfg.light_spot_count < 0 || cfg.shadow_count < 0)
    throw std::invalid_argument("synthetic config: overlay counts must be non-negative");
}

Tensor make_sample(const SyntheticConfig& cfg, int split_tag, int class_id, int index) {
  Rng rng = sample_rng(cfg, split_tag, class_id, index);
  Tensor img = render_composite(cfg, class_id, rng);
  return apply_illumination(img, rng, cfg);
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
  validate_config(cfg);
  auto log = std::make_shared<AccessLog>();
  SyntheticDataset out{Dataset("train", cfg.image_size, log),
                       Dataset("test", cfg.image_size, log),
                       {}};

  for (int c = 0; c < cfg.n_classes; ++c) out.templates[c] = render_template(cfg, c);

  const int n_train_classes = cfg.one_shot ? cfg.n_classes - cfg.n_test_classes : cfg.n_classes;
  const int default_test_count =
      cfg.one_shot ? cfg.samples_per_class : std::max(1, cfg.samples_per_class / 5);
  const int test_count =
      cfg.test_samples_per_class > 0 ? cfg.test_samples_per_class : default_test_count;

  for (int c = 0; c < n_train_classes; ++c) {
    out.train.set_template(c, out.templates[c]);
    for (int i = 0; i < cfg.samples_per_class; ++i)
      out.train.add_sample(make_sample(cfg, 0, c, i), c);
  }
  const int test_class_lo = cfg.one_shot ? n_train_classes : 0;
  for (int c = test_class_lo; c < cfg.n_classes; ++c) {
    out.test.set_template(c, out.templates[c]);
    for (int i = 0; i < test_count; ++i) out.test.add_sample(make_sample(cfg, 1, c, i), c);
  }

  if (cfg.one_shot) {
    // Protocol invariant: no class id may appear in both splits.
    std::set<int> train_ids(out.train.labels().begin(), out.train.labels().end());
    for (int label : out.test.labels())
      if (train_ids.count(label))
        throw std::logic_error("one-shot split construction produced overlapping classes");
  }
  return out;
}

// --- folder export / ingestion ------------------------------------------------

namespace {

std::string class_dir_name(int label) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class_%04d", label);
  return buf;
}

}  // namespace

void export_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  fs::create_directories(fs::path(dir) / "templates");
  std::map<int, int> counters;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int label = ds.label(i);
    const fs::path cls_dir = fs::path(dir) / class_dir_name(label);
    fs::create_directories(cls_dir);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.png", counters[label]++);
    write_png(ds.image(i), (cls_dir / name).string());
  }
  json map = json::object();
  for (int label : ds.template_class_ids()) {
    const std::string rel = "templates/" + class_dir_name(label) + ".png";
    write_png(ds.template_image(label), (fs::path(dir) / rel).string());
    map[class_dir_name(label)] = rel;
  }
  std::ofstream out(fs::path(dir) / "template_map.json");
  out << map.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed to write template map in " + dir);
}

Dataset load_image_folder(const std::string& root, const std::string& template_map_path,
                          int image_size, std::shared_ptr<AccessLog> log, int id_base) {
  std::ifstream map_in(template_map_path);
  if (!map_in) throw std::runtime_error("cannot open template map " + template_map_path);
  json map;
  try {
    map = json::parse(map_in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("unparseable template map " + template_map_path + ": " + e.what());
  }
  if (!map.is_object()) throw std::runtime_error("template map must be a JSON object");

  std::vector<std::string> class_names;
  for (auto it = map.begin(); it != map.end(); ++it) class_names.push_back(it.key());
  std::sort(class_names.begin(), class_names.end());
  std::map<std::string, int> class_id;
  for (std::size_t i = 0; i < class_names.size(); ++i)
    class_id[class_names[i]] = id_base + static_cast<int>(i);

  Dataset ds(fs::path(root).filename().string(), image_size, std::move(log));

  const fs::path map_dir = fs::path(template_map_path).parent_path();
  for (const auto& name : class_names) {
    fs::path tpl_path = map.at(name).get<std::string>();
    if (tpl_path.is_relative()) tpl_path = map_dir / tpl_path;
    ds.set_template(class_id[name], read_image(tpl_path.string(), image_size));
  }

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && entry.path().filename() != "templates")
      class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  for (const auto& dir : class_dirs) {
    const std::string name = dir.filename().string();
    auto it = class_id.find(name);
    if (it == class_id.end())
      throw std::runtime_error("image folder class '" + name + "' has no template map entry");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      try {
        ds.add_sample(read_image(file.string(), image_size), it->second);
      } catch (const std::exception& e) {
        std::cerr << "warning: skipping unreadable file " << file.string() << ": " << e.what()
                  << "\n";
        ++ds.warnings;
      }
    }
  }
  return ds;
}

// --- template processing -------------------------------------------------------

Tensor process_template(const Tensor& tpl, std::uint64_t seed, const TemplateAugRanges& ranges) {
  check_range(ranges.rotation_deg, "rotation_deg");
  check_range(ranges.scale, "scale");
  check_range(ranges.translation_frac, "translation_frac");
  check_range(ranges.enhance_factor, "enhance_factor");
  check_range(ranges.blur_radius, "blur_radius");

  Rng rng(Rng::derive(seed, 0x7E41));
  const double angle = draw(rng, ranges.rotation_deg);
  const double sc = draw(rng, ranges.scale);
  const double tx = draw(rng, ranges.translation_frac);
  const double ty = draw(rng, ranges.translation_frac);
  Tensor out = warp_affine(tpl, angle, sc, tx, ty);
  out = adjust_brightness(out, draw(rng, ranges.enhance_factor));
  out = adjust_color(out, draw(rng, ranges.enhance_factor));
  out = adjust_contrast(out, draw(rng, ranges.enhance_factor));
  out = adjust_sharpness(out, draw(rng, ranges.enhance_factor));
  return gaussian_blur(out, draw(rng, ranges.blur_radius));
}

}  // namespace sillnet
