#include "sillnet/image_ops.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace sillnet {

namespace {

void check_image(const Tensor& t, const char* who) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw std::invalid_argument(std::string(who) + ": expected a [3,H,W] image tensor");
}

}  // namespace

cv::Mat tensor_to_mat(const Tensor& image) {
  check_image(image, "tensor_to_mat");
  const int h = image.dim(1), w = image.dim(2);
  cv::Mat m(h, w, CV_32FC3);
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x)
      row[x] = {image(0, y, x), image(1, y, x), image(2, y, x)};
  }
  return m;
}

Tensor mat_to_tensor(const cv::Mat& m) {
  if (m.type() != CV_32FC3) throw std::invalid_argument("mat_to_tensor: expected CV_32FC3");
  Tensor t({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < m.cols; ++x) {
      t(0, y, x) = row[x][0];
      t(1, y, x) = row[x][1];
      t(2, y, x) = row[x][2];
    }
  }
  return t;
}

void write_png(const Tensor& image, const std::string& path) {
  check_image(image, "write_png");
  cv::Mat rgb = tensor_to_mat(image);
  cv::Mat bgr8;
  cv::cvtColor(rgb, rgb, cv::COLOR_RGB2BGR);
  rgb.convertTo(bgr8, CV_8UC3, 255.0);
  if (!cv::imwrite(path, bgr8)) throw std::runtime_error("failed to write PNG " + path);
}

Tensor read_image(const std::string& path, int size) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path);
  if (size > 0 && (bgr.rows != size || bgr.cols != size))
    cv::resize(bgr, bgr, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat rgbf;
  rgb.convertTo(rgbf, CV_32FC3, 1.0 / 255.0);
  return mat_to_tensor(rgbf);
}

Tensor warp_affine(const Tensor& image, double angle_deg, double scale, double tx_frac,
                   double ty_frac) {
  check_image(image, "warp_affine");
  if (angle_deg == 0.0 && scale == 1.0 && tx_frac == 0.0 && ty_frac == 0.0) return image;
  cv::Mat src = tensor_to_mat(image);
  const cv::Point2f center(static_cast<float>(src.cols) / 2.0f,
                           static_cast<float>(src.rows) / 2.0f);
  cv::Mat m = cv::getRotationMatrix2D(center, angle_deg, scale);
  m.at<double>(0, 2) += tx_frac * src.cols;
  m.at<double>(1, 2) += ty_frac * src.rows;
  cv::Mat dst;
  cv::warpAffine(src, dst, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return clamp01(mat_to_tensor(dst));
}

Tensor crop_resize(const Tensor& image, double x0_frac, double y0_frac, double w_frac,
                   double h_frac) {
  check_image(image, "crop_resize");
  if (x0_frac == 0.0 && y0_frac == 0.0 && w_frac == 1.0 && h_frac == 1.0) return image;
  cv::Mat src = tensor_to_mat(image);
  const int w = src.cols, h = src.rows;
  int x0 = static_cast<int>(std::lround(x0_frac * w));
  int y0 = static_cast<int>(std::lround(y0_frac * h));
  int cw = static_cast<int>(std::lround(w_frac * w));
  int ch = static_cast<int>(std::lround(h_frac * h));
  x0 = std::clamp(x0, 0, w - 1);
  y0 = std::clamp(y0, 0, h - 1);
  cw = std::clamp(cw, 1, w - x0);
  ch = std::clamp(ch, 1, h - y0);
  cv::Mat roi = src(cv::Rect(x0, y0, cw, ch));
  cv::Mat dst;
  cv::resize(roi, dst, src.size(), 0, 0, cv::INTER_LINEAR);
  return clamp01(mat_to_tensor(dst));
}

Tensor flip_horizontal(const Tensor& image) {
  check_image(image, "flip_horizontal");
  const int h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = image(c, y, w - 1 - x);
  return out;
}

Tensor perspective_warp(const Tensor& image, const std::array<double, 8>& corner_offsets) {
  check_image(image, "perspective_warp");
  bool all_zero = true;
  for (double d : corner_offsets) all_zero = all_zero && d == 0.0;
  if (all_zero) return image;
  cv::Mat src = tensor_to_mat(image);
  const auto fw = static_cast<float>(src.cols - 1);
  const auto fh = static_cast<float>(src.rows - 1);
  const cv::Point2f corners[4] = {{0.0f, 0.0f}, {fw, 0.0f}, {fw, fh}, {0.0f, fh}};
  cv::Point2f from[4];
  for (int k = 0; k < 4; ++k)
    from[k] = {corners[k].x + static_cast<float>(corner_offsets[2 * k] * src.cols),
               corners[k].y + static_cast<float>(corner_offsets[2 * k + 1] * src.rows)};
  const cv::Mat m = cv::getPerspectiveTransform(from, corners);
  cv::Mat dst;
  cv::warpPerspective(src, dst, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return clamp01(mat_to_tensor(dst));
}

Tensor adjust_brightness(const Tensor& image, double factor) {
  check_image(image, "adjust_brightness");
  if (factor == 1.0) return image;
  Tensor out = image;
  for (auto& v : out) v = static_cast<float>(v * factor);
  return clamp01(std::move(out));
}

namespace {

// Rec. 601 luma, the usual grayscale projection for photometric jitter.
float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace

Tensor adjust_contrast(const Tensor& image, double factor) {
  check_image(image, "adjust_contrast");
  if (factor == 1.0) return image;
  const int h = image.dim(1), w = image.dim(2);
  double mean = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mean += luma(image(0, y, x), image(1, y, x), image(2, y, x));
  mean /= static_cast<double>(h) * w;
  Tensor out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(mean + factor * (image[i] - mean));
  return clamp01(std::move(out));
}

Tensor adjust_color(const Tensor& image, double factor) {
  check_image(image, "adjust_color");
  if (factor == 1.0) return image;
  const int h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float g = luma(image(0, y, x), image(1, y, x), image(2, y, x));
      for (int c = 0; c < 3; ++c)
        out(c, y, x) = static_cast<float>(g + factor * (image(c, y, x) - g));
    }
  return clamp01(std::move(out));
}

Tensor adjust_sharpness(const Tensor& image, double factor) {
  check_image(image, "adjust_sharpness");
  if (factor == 1.0) return image;
  cv::Mat src = tensor_to_mat(image);
  cv::Mat smooth;
  cv::GaussianBlur(src, smooth, cv::Size(3, 3), 0.8, 0.8, cv::BORDER_REPLICATE);
  cv::Mat dst = smooth + factor * (src - smooth);
  return clamp01(mat_to_tensor(dst));
}

Tensor gaussian_blur(const Tensor& image, double radius_px) {
  check_image(image, "gaussian_blur");
  if (radius_px <= 0.0) return image;
  cv::Mat src = tensor_to_mat(image);
  const int k = 2 * static_cast<int>(std::ceil(3.0 * radius_px)) + 1;
  cv::Mat dst;
  cv::GaussianBlur(src, dst, cv::Size(k, k), radius_px, radius_px, cv::BORDER_REPLICATE);
  return clamp01(mat_to_tensor(dst));
}

Tensor clamp01(Tensor image) {
  for (auto& v : image) v = std::clamp(v, 0.0f, 1.0f);
  return image;
}

}  // namespace sillnet
