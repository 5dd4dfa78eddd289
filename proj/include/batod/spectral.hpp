#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "batod/errors.hpp"
#include "batod/image.hpp"

namespace batod {

using PlaneD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline const PlaneD& dct_matrix(int d) {
  static thread_local std::vector<std::pair<int, PlaneD>> cache;
  for (auto& [side, m] : cache)
    if (side == d) return m;
  PlaneD m(d, d);
  const double pi = std::acos(-1.0);
  for (int k = 0; k < d; ++k) {
    const double ak = (k == 0) ? std::sqrt(1.0 / d) : std::sqrt(2.0 / d);
    for (int n = 0; n < d; ++n) m(k, n) = ak * std::cos(pi * (2 * n + 1) * k / (2.0 * d));
  }
  cache.emplace_back(d, std::move(m));
  return cache.back().second;
}

}  // namespace detail

/// Orthonormal 2D type-II DCT of a square plane; idct2 is its exact inverse.
inline PlaneD dct2(const PlaneD& a) {
  require(a.rows() == a.cols(), ErrorCode::shape_mismatch, "dct2 requires a square plane");
  const auto& d = detail::dct_matrix(static_cast<int>(a.rows()));
  return d * a * d.transpose();
}

inline PlaneD idct2(const PlaneD& b) {
  require(b.rows() == b.cols(), ErrorCode::shape_mismatch, "idct2 requires a square plane");
  const auto& d = detail::dct_matrix(static_cast<int>(b.rows()));
  return d.transpose() * b * d;
}

/// Binary low-frequency mask: coefficient (i, j) survives iff both 1-based
/// indices are <= floor(r * d), clamped so the DC coefficient always survives.
struct SpectralMask {
  double cutoff_ratio = 1.0;
  int side = 0;

  SpectralMask(double r, int d) : cutoff_ratio(r), side(d) {
    require(r > 0.0 && r <= 1.0, ErrorCode::precondition, "mask ratio must lie in (0,1]");
    require(d >= 1, ErrorCode::precondition, "mask side must be positive");
  }

  int support() const {
    const int keep = static_cast<int>(std::floor(cutoff_ratio * side + 1e-9));
    return std::clamp(keep, 1, side);
  }

  bool keeps(int i, int j) const { return i < support() && j < support(); }  // 0-based
};

/// Projects a perturbation onto the mask's low-frequency subspace, channel by
/// channel: delta' = IDCT(m .* DCT(delta)). Linear and idempotent.
inline Image frequency_constrain(const Image& delta, const SpectralMask& mask) {
  require(delta.h == delta.w, ErrorCode::shape_mismatch,
          "frequency_constrain requires square planes, got " + std::to_string(delta.h) + "x" +
              std::to_string(delta.w));
  require(delta.h == mask.side, ErrorCode::shape_mismatch, "mask side differs from plane side");

  const int d = delta.h;
  const int keep = mask.support();
  Image out = delta;
  PlaneD plane(d, d);
  for (int ch = 0; ch < delta.c; ++ch) {
    for (int y = 0; y < d; ++y)
      for (int x = 0; x < d; ++x) plane(y, x) = delta.at(y, x, ch);
    PlaneD coeff = dct2(plane);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i >= keep || j >= keep) coeff(i, j) = 0.0;
    PlaneD back = idct2(coeff);
    for (int y = 0; y < d; ++y)
      for (int x = 0; x < d; ++x) out.at(y, x, ch) = static_cast<float>(back(y, x));
  }
  return out;
}

namespace detail {

inline int reflect_index(int i, int n) {
  // Symmetric reflection (edge repeated): -1 -> 0, n -> n-1.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

}  // namespace detail

/// Separable Gaussian convolution with reflect padding, kernel radius
/// ceil(3*sigma). Keeps values inside [min, max] of the input.
inline Image gaussian_blur(const Image& image, double sigma) {
  require(sigma > 0.0, ErrorCode::precondition, "sigma must be positive");
  const auto kernel = detail::gaussian_kernel(sigma);
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;

  Image tmp(image.h, image.w, image.c);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      for (int ch = 0; ch < image.c; ++ch) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
          acc += kernel[static_cast<std::size_t>(t + radius)] *
                 image.at(y, detail::reflect_index(x + t, image.w), ch);
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }

  Image out(image.h, image.w, image.c);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      for (int ch = 0; ch < image.c; ++ch) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
          acc += kernel[static_cast<std::size_t>(t + radius)] *
                 tmp.at(detail::reflect_index(y + t, image.h), x, ch);
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace batod
