#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "batod/dataset.hpp"
#include "batod/errors.hpp"
#include "batod/image.hpp"
#include "batod/rng.hpp"
#include "batod/spectral.hpp"

namespace batod {

enum class TransformKind {
  rotate90,
  rotate180,
  rotate270,
  strong_gaussian_blur,
  elastic_deform,
  patch_shuffle,
};

inline const char* transform_kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::rotate90: return "rotate90";
    case TransformKind::rotate180: return "rotate180";
    case TransformKind::rotate270: return "rotate270";
    case TransformKind::strong_gaussian_blur: return "strong_gaussian_blur";
    case TransformKind::elastic_deform: return "elastic_deform";
    case TransformKind::patch_shuffle: return "patch_shuffle";
  }
  return "unknown";
}

/// One sampled negative transformation with its drawn parameters.
struct NegativeTransform {
  TransformKind kind = TransformKind::rotate180;
  double param0 = 0.0;  // blur sigma | elastic alpha | patch grid
  double param1 = 0.0;  // elastic sigma
  std::uint64_t noise_seed = 0;
};

/// G(.) = t_1(...(t_k(.))): steps apply last-to-first.
struct TransformChain {
  std::vector<NegativeTransform> steps;
};

/// Catalog of distribution-shifting transforms and their parameter ranges.
/// These ranges are deliberately strong; the outputs stand in for outliers.
struct TransformCatalog {
  std::vector<TransformKind> kinds = {
      TransformKind::rotate90,     TransformKind::rotate180,
      TransformKind::rotate270,    TransformKind::strong_gaussian_blur,
      TransformKind::elastic_deform, TransformKind::patch_shuffle,
  };
  double blur_sigma_min = 2.0, blur_sigma_max = 4.0;
  double elastic_alpha_min = 30.0, elastic_alpha_max = 60.0;
  double elastic_sigma_min = 4.0, elastic_sigma_max = 6.0;
  int patch_grid = 4;
};

inline TransformChain sample_chain(const TransformCatalog& catalog, std::uint64_t seed, int k) {
  require(k >= 1, ErrorCode::precondition, "chain length must be >= 1");
  require(!catalog.kinds.empty(), ErrorCode::precondition, "transform catalog is empty");
  Rng rng(seed);
  TransformChain chain;
  chain.steps.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    NegativeTransform t;
    t.kind = catalog.kinds[rng.uniform_index(catalog.kinds.size())];
    switch (t.kind) {
      case TransformKind::strong_gaussian_blur:
        t.param0 = rng.uniform(catalog.blur_sigma_min, catalog.blur_sigma_max);
        break;
      case TransformKind::elastic_deform:
        t.param0 = rng.uniform(catalog.elastic_alpha_min, catalog.elastic_alpha_max);
        t.param1 = rng.uniform(catalog.elastic_sigma_min, catalog.elastic_sigma_max);
        break;
      case TransformKind::patch_shuffle:
        t.param0 = catalog.patch_grid;
        break;
      default:
        break;
    }
    t.noise_seed = rng.next_u64();
    chain.steps.push_back(t);
  }
  return chain;
}

inline TransformChain sample_chain(std::uint64_t seed, int k) {
  return sample_chain(TransformCatalog{}, seed, k);
}

namespace detail {

inline Image rotate_quarter(const Image& im, int quarters) {
  quarters = ((quarters % 4) + 4) % 4;
  if (quarters == 0) return im;
  if (quarters != 2)
    require(im.h == im.w, ErrorCode::invariant_violation,
            "quarter rotation of a non-square image would change its shape");
  Image out(im.h, im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x)
      for (int ch = 0; ch < im.c; ++ch) {
        int sy = y, sx = x;
        switch (quarters) {
          case 1: sy = x; sx = im.h - 1 - y; break;           // 90 deg CCW
          case 2: sy = im.h - 1 - y; sx = im.w - 1 - x; break;
          case 3: sy = im.w - 1 - x; sx = y; break;           // 270 deg CCW
        }
        out.at(y, x, ch) = im.at(sy, sx, ch);
      }
  return out;
}

inline float bilinear_reflect(const Image& im, double fy, double fx, int ch) {
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const double wy = fy - y0;
  const double wx = fx - x0;
  const int ya = reflect_index(y0, im.h), yb = reflect_index(y0 + 1, im.h);
  const int xa = reflect_index(x0, im.w), xb = reflect_index(x0 + 1, im.w);
  const double v = (1 - wy) * ((1 - wx) * im.at(ya, xa, ch) + wx * im.at(ya, xb, ch)) +
                   wy * ((1 - wx) * im.at(yb, xa, ch) + wx * im.at(yb, xb, ch));
  return static_cast<float>(v);
}

inline Image elastic_deform(const Image& im, double alpha, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Image dx(im.h, im.w, 1), dy(im.h, im.w, 1);
  for (auto& v : dx.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& v : dy.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  dx = gaussian_blur(dx, sigma);
  dy = gaussian_blur(dy, sigma);

  Image out(im.h, im.w, im.c);
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      const double sy = y + alpha * dy.at(y, x, 0);
      const double sx = x + alpha * dx.at(y, x, 0);
      for (int ch = 0; ch < im.c; ++ch) out.at(y, x, ch) = bilinear_reflect(im, sy, sx, ch);
    }
  return out;
}

inline Image patch_shuffle(const Image& im, int grid, std::uint64_t seed) {
  // Use the largest grid <= requested that divides both sides; a 1x1 grid
  // degenerates to the identity on awkward shapes.
  int g = std::max(1, grid);
  while (g > 1 && (im.h % g != 0 || im.w % g != 0)) --g;
  if (g == 1) return im;

  std::vector<int> perm(static_cast<std::size_t>(g) * g);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);

  const int ph = im.h / g, pw = im.w / g;
  Image out(im.h, im.w, im.c);
  for (int cell = 0; cell < g * g; ++cell) {
    const int src = perm[static_cast<std::size_t>(cell)];
    const int dy0 = (cell / g) * ph, dx0 = (cell % g) * pw;
    const int sy0 = (src / g) * ph, sx0 = (src % g) * pw;
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        for (int ch = 0; ch < im.c; ++ch)
          out.at(dy0 + y, dx0 + x, ch) = im.at(sy0 + y, sx0 + x, ch);
  }
  return out;
}

inline Image apply_transform(const NegativeTransform& t, const Image& im) {
  switch (t.kind) {
    case TransformKind::rotate90: return rotate_quarter(im, 1);
    case TransformKind::rotate180: return rotate_quarter(im, 2);
    case TransformKind::rotate270: return rotate_quarter(im, 3);
    case TransformKind::strong_gaussian_blur: return gaussian_blur(im, t.param0);
    case TransformKind::elastic_deform:
      return elastic_deform(im, t.param0, t.param1, t.noise_seed);
    case TransformKind::patch_shuffle:
      return patch_shuffle(im, static_cast<int>(t.param0), t.noise_seed);
  }
  fail(ErrorCode::precondition, "unknown transform kind");
}

}  // namespace detail

inline Image apply_chain(const TransformChain& chain, const Image& image) {
  Image out = image;
  for (auto it = chain.steps.rbegin(); it != chain.steps.rend(); ++it) {
    out = detail::apply_transform(*it, out);
    require(out.same_shape(image), ErrorCode::invariant_violation,
            "transform changed the image shape");
  }
  // Blur/bilinear arithmetic can drift a few ulps past the range ends.
  clamp01(out);
  return out;
}

/// Builds the proxy-outlier set D'_a: sample i becomes (G_i(x_i), y_i) with a
/// fresh chain per sample derived from (seed, i).
inline SampleList synthesize_outliers(const SampleList& available, std::uint64_t seed,
                                      const TransformCatalog& catalog = {}, int k = 2) {
  require(!available.empty(), ErrorCode::precondition, "available set is empty");
  SampleList out;
  out.reserve(available.size());
  for (std::size_t i = 0; i < available.size(); ++i) {
    const auto chain = sample_chain(catalog, derive_seed(seed, i), k);
    out.push_back({apply_chain(chain, available[i].image), available[i].label});
  }
  return out;
}

}  // namespace batod
