#pragma once

#include <opencv2/core.hpp>

#include <array>
#include <string>

#include "sillnet/tensor.hpp"

namespace sillnet {

// Image tensors are [3,H,W] float32, RGB, values in [0,1]. OpenCV mats cross
// this boundary only inside the conversion helpers; everything downstream of
// data loading works on tensors.

cv::Mat tensor_to_mat(const Tensor& image);   // CV_32FC3, RGB channel order
Tensor mat_to_tensor(const cv::Mat& m);       // from CV_32FC3 RGB

void write_png(const Tensor& image, const std::string& path);
Tensor read_image(const std::string& path, int size = 0);  // size>0 resizes to size x size

// Geometric transforms. Rotation is counter-clockwise about the image center,
// translation is a fraction of the side length. Output matches input size;
// uncovered pixels take the nearest edge value.
Tensor warp_affine(const Tensor& image, double angle_deg, double scale, double tx_frac,
                   double ty_frac);
Tensor crop_resize(const Tensor& image, double x0_frac, double y0_frac, double w_frac,
                   double h_frac);
Tensor flip_horizontal(const Tensor& image);

// Perspective distortion: the sampling quad's corners (TL, TR, BR, BL order)
// are displaced by the given offsets, each a (dx, dy) pair in units of the
// side length. All-zero offsets return the image unchanged.
Tensor perspective_warp(const Tensor& image, const std::array<double, 8>& corner_offsets);

// Photometric adjustments; factor 1.0 is the identity for each.
Tensor adjust_brightness(const Tensor& image, double factor);
Tensor adjust_contrast(const Tensor& image, double factor);
Tensor adjust_color(const Tensor& image, double factor);
Tensor adjust_sharpness(const Tensor& image, double factor);
Tensor gaussian_blur(const Tensor& image, double radius_px);

Tensor clamp01(Tensor image);

}  // namespace sillnet
