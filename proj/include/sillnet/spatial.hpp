#pragma once

#include <cmath>
#include <stdexcept>

#include "sillnet/tensor.hpp"

namespace sillnet {

// Affine grid resampling for the rectification module.
//
// theta is [N,6], row-major (a11, a12, tx, a21, a22, ty), acting in normalized
// coordinates where both axes span [-1, 1] across the pixel centers
// (align-corners convention). For every output pixel the source location is
//   xs = a11*xn + a12*yn + tx,   ys = a21*xn + a22*yn + ty,
// sampled bilinearly with zeros outside the source grid. Identity is
// (1,0,0,0,1,0). Output size equals input size.

template <typename T>
TensorT<T> affine_sample(const TensorT<T>& x, const TensorT<T>& theta) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (theta.dim(0) != n || theta.dim(1) != 6)
    throw std::invalid_argument("affine_sample: theta must be [N,6]");
  TensorT<T> y({n, c, h, w});
  const double sx = w > 1 ? 2.0 / (w - 1) : 0.0;
  const double sy = h > 1 ? 2.0 / (h - 1) : 0.0;
  for (int ni = 0; ni < n; ++ni) {
    const double a11 = theta(ni, 0), a12 = theta(ni, 1), tx = theta(ni, 2);
    const double a21 = theta(ni, 3), a22 = theta(ni, 4), ty = theta(ni, 5);
    for (int oh = 0; oh < h; ++oh) {
      const double yn = h > 1 ? -1.0 + sy * oh : 0.0;
      for (int ow = 0; ow < w; ++ow) {
        const double xn = w > 1 ? -1.0 + sx * ow : 0.0;
        const double xs = a11 * xn + a12 * yn + tx;
        const double ys = a21 * xn + a22 * yn + ty;
        const double u = (xs + 1.0) * (w - 1) / 2.0;
        const double v = (ys + 1.0) * (h - 1) / 2.0;
        const int u0 = static_cast<int>(std::floor(u));
        const int v0 = static_cast<int>(std::floor(v));
        const double au = u - u0, av = v - v0;
        for (int ci = 0; ci < c; ++ci) {
          auto pix = [&](int vi, int ui) -> double {
            return (vi >= 0 && vi < h && ui >= 0 && ui < w)
                       ? static_cast<double>(x(ni, ci, vi, ui))
                       : 0.0;
          };
          const double val = (1 - au) * (1 - av) * pix(v0, u0) + au * (1 - av) * pix(v0, u0 + 1) +
                             (1 - au) * av * pix(v0 + 1, u0) + au * av * pix(v0 + 1, u0 + 1);
          y(ni, ci, oh, ow) = static_cast<T>(val);
        }
      }
    }
  }
  return y;
}

// Accumulates dL/dx into gx and dL/dtheta into gtheta (either may be null).
template <typename T>
void affine_sample_backward(const TensorT<T>& x, const TensorT<T>& theta, const TensorT<T>& gy,
                            TensorT<T>* gx, TensorT<T>* gtheta) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double sx = w > 1 ? 2.0 / (w - 1) : 0.0;
  const double sy = h > 1 ? 2.0 / (h - 1) : 0.0;
  const double du_dxs = (w - 1) / 2.0;
  const double dv_dys = (h - 1) / 2.0;
  for (int ni = 0; ni < n; ++ni) {
    const double a11 = theta(ni, 0), a12 = theta(ni, 1), tx = theta(ni, 2);
    const double a21 = theta(ni, 3), a22 = theta(ni, 4), ty = theta(ni, 5);
    double gt[6] = {0, 0, 0, 0, 0, 0};
    for (int oh = 0; oh < h; ++oh) {
      const double yn = h > 1 ? -1.0 + sy * oh : 0.0;
      for (int ow = 0; ow < w; ++ow) {
        const double xn = w > 1 ? -1.0 + sx * ow : 0.0;
        const double xs = a11 * xn + a12 * yn + tx;
        const double ys = a21 * xn + a22 * yn + ty;
        const double u = (xs + 1.0) * du_dxs;
        const double v = (ys + 1.0) * dv_dys;
        const int u0 = static_cast<int>(std::floor(u));
        const int v0 = static_cast<int>(std::floor(v));
        const double au = u - u0, av = v - v0;
        double dl_du = 0.0, dl_dv = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          const double g = gy(ni, ci, oh, ow);
          auto pix = [&](int vi, int ui) -> double {
            return (vi >= 0 && vi < h && ui >= 0 && ui < w)
                       ? static_cast<double>(x(ni, ci, vi, ui))
                       : 0.0;
          };
          if (gx) {
            auto scatter = [&](int vi, int ui, double wgt) {
              if (vi >= 0 && vi < h && ui >= 0 && ui < w)
                (*gx)(ni, ci, vi, ui) += static_cast<T>(g * wgt);
            };
            scatter(v0, u0, (1 - au) * (1 - av));
            scatter(v0, u0 + 1, au * (1 - av));
            scatter(v0 + 1, u0, (1 - au) * av);
            scatter(v0 + 1, u0 + 1, au * av);
          }
          dl_du += g * ((1 - av) * (pix(v0, u0 + 1) - pix(v0, u0)) +
                        av * (pix(v0 + 1, u0 + 1) - pix(v0 + 1, u0)));
          dl_dv += g * ((1 - au) * (pix(v0 + 1, u0) - pix(v0, u0)) +
                        au * (pix(v0 + 1, u0 + 1) - pix(v0, u0 + 1)));
        }
        const double gxs = dl_du * du_dxs;
        const double gys = dl_dv * dv_dys;
        gt[0] += gxs * xn;
        gt[1] += gxs * yn;
        gt[2] += gxs;
        gt[3] += gys * xn;
        gt[4] += gys * yn;
        gt[5] += gys;
      }
    }
    if (gtheta)
      for (int k = 0; k < 6; ++k) (*gtheta)(ni, k) += static_cast<T>(gt[k]);
  }
}

}  // namespace sillnet
