#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dic/error.hpp"
#include "dic/image.hpp"
#include "dic/spline.hpp"

namespace dic {

/// Random speckle: Gaussian blobs with FWHM = mean_diameter at uniform random
/// centers. density is the expected fraction of the area covered by blob
/// disks of that diameter. Output spans [0, 255] as unquantized doubles.
inline GrayImage gen_speckle(int width, int height, double mean_diameter, double density, std::uint64_t seed) {
  if (!(mean_diameter >= 2.0 && mean_diameter <= 10.0))
    fail(ErrorCode::InvalidArgument, "speckle diameter must lie in [2, 10]");
  if (!(density > 0.0 && density <= 1.0)) fail(ErrorCode::InvalidArgument, "speckle density must lie in (0, 1]");
  GrayImage img(width, height, 0.0, 8);
  const double r = 0.5 * mean_diameter;
  const double sigma = mean_diameter / 2.355;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const auto count = static_cast<std::size_t>(std::llround(density * width * height / (std::numbers::pi * r * r)));
  const int reach = static_cast<int>(std::ceil(4.0 * sigma));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-reach, width + reach), uy(-reach, height + reach);
  for (std::size_t k = 0; k < count; ++k) {
    const double cx = ux(rng), cy = uy(rng);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - reach);
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(cx)) + reach + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - reach);
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(cy)) + reach + 1);
    for (int y = y0; y <= y1; ++y) {
      const double dy2 = (y - cy) * (y - cy);
      double* row = img.pixels.data() + static_cast<std::size_t>(y) * width;
      for (int x = x0; x <= x1; ++x) row[x] += std::exp(-((x - cx) * (x - cx) + dy2) * inv2s2);
    }
  }
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const double lo = *mn, span = *mx - *mn;
  if (span < 1e-12) {
    std::fill(img.pixels.begin(), img.pixels.end(), 0.0);
    return img;
  }
  for (auto& v : img.pixels) v = 255.0 * (v - lo) / span;
  return img;
}

/// Additive Gaussian noise clamped to [0, max_value()].
inline GrayImage add_noise(const GrayImage& image, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) fail(ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  GrayImage out = image;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  const double hi = image.max_value();
  for (auto& v : out.pixels) v = std::clamp(v + nd(rng), 0.0, hi);
  return out;
}

enum class FieldKind { TRANSLATION, UNIFORM_STRAIN, RADIAL_STRETCH, STAR_SINUSOID };

/// Analytic displacement u(X) of reference points X. The shift is added for every kind.
///   UNIFORM_STRAIN: u = E (X - c), E = [[exx, exy], [exy, eyy]]
///   RADIAL_STRETCH: u = edge_extension (X - c) / |corner - c|
///   STAR_SINUSOID:  u_y = A cos(2 pi (Y - c_y) / p(X)), p linear from period_left
///                   at x = 0 to period_right at x = width - 1; u_x = 0
struct DeformationFieldSpec {
  FieldKind kind = FieldKind::TRANSLATION;
  double shift_x = 0.0, shift_y = 0.0;
  double exx = 0.0, eyy = 0.0, exy = 0.0;
  double edge_extension = 0.0;
  double amplitude = 0.0;
  double period_left = 0.0, period_right = 0.0;
  double center_x = 0.0, center_y = 0.0;
  double half_diagonal = 1.0;
  int width = 0;

  static DeformationFieldSpec translation(double tx, double ty) {
    DeformationFieldSpec s;
    s.shift_x = tx;
    s.shift_y = ty;
    return s;
  }

  static DeformationFieldSpec uniform_strain(int width, int height, double exx, double eyy, double exy = 0.0) {
    DeformationFieldSpec s;
    s.kind = FieldKind::UNIFORM_STRAIN;
    s.exx = exx;
    s.eyy = eyy;
    s.exy = exy;
    s.set_center(width, height);
    return s;
  }

  static DeformationFieldSpec radial_stretch(int width, int height, double edge_extension) {
    DeformationFieldSpec s;
    s.kind = FieldKind::RADIAL_STRETCH;
    s.edge_extension = edge_extension;
    s.set_center(width, height);
    return s;
  }

  void set_center(int w, int h) {
    width = w;
    center_x = 0.5 * (w - 1);
    center_y = 0.5 * (h - 1);
    half_diagonal = std::hypot(center_x, center_y);
  }

  /// Local star period at column x.
  double period(double x) const {
    const double t = width > 1 ? x / (width - 1) : 0.0;
    return period_left + (period_right - period_left) * t;
  }

  void displacement(double X, double Y, double& ux, double& uy) const {
    ux = shift_x;
    uy = shift_y;
    const double dx = X - center_x, dy = Y - center_y;
    switch (kind) {
      case FieldKind::TRANSLATION: break;
      case FieldKind::UNIFORM_STRAIN:
        ux += exx * dx + exy * dy;
        uy += exy * dx + eyy * dy;
        break;
      case FieldKind::RADIAL_STRETCH:
        ux += edge_extension * dx / half_diagonal;
        uy += edge_extension * dy / half_diagonal;
        break;
      case FieldKind::STAR_SINUSOID:
        uy += amplitude * std::cos(2.0 * std::numbers::pi * dy / period(X));
        break;
    }
  }

  /// Reference point X with X + u(X) = x, by fixed-point iteration.
  bool inverse(double x, double y, double& X, double& Y) const {
    X = x;
    Y = y;
    for (int it = 0; it < 200; ++it) {
      double ux, uy;
      displacement(X, Y, ux, uy);
      const double nx = x - ux, ny = y - uy;
      const double step = std::hypot(nx - X, ny - Y);
      X = nx;
      Y = ny;
      if (step < 1e-11 * std::max(1.0, std::hypot(x, y))) return true;
    }
    return false;
  }
};

/// Vertical sinusoid whose period grows linearly from left to right; peak |u_y| = amplitude.
inline DeformationFieldSpec star_field(int width, int height, double amplitude, double period_left,
                                       double period_right) {
  if (!(amplitude > 0)) fail(ErrorCode::InvalidArgument, "star amplitude must be > 0");
  if (!(period_left > 0 && period_right > 0)) fail(ErrorCode::InvalidArgument, "star periods must be > 0");
  DeformationFieldSpec s;
  s.kind = FieldKind::STAR_SINUSOID;
  s.amplitude = amplitude;
  s.period_left = period_left;
  s.period_right = period_right;
  s.set_center(width, height);
  return s;
}

/// Warps an image by a reference-frame displacement field using inverse mapping
/// through the b-spline interpolant. Each output pixel averages supersample^2
/// sub-pixel samples of the inverse map, taken relative to the pixel center so
/// that zero and pure-translation fields resample exactly. Samples falling
/// outside the source take the source mean.
inline GrayImage deform_image(const GrayImage& image, const DeformationFieldSpec& spec, int supersample = 4) {
  if (supersample < 1) fail(ErrorCode::InvalidArgument, "supersample must be >= 1");
  if (spec.kind == FieldKind::STAR_SINUSOID) {
    const double pmin = std::min(spec.period_left, spec.period_right);
    if (2.0 * std::numbers::pi * spec.amplitude >= pmin)
      fail(ErrorCode::NonInvertibleSpec, "star period too short for its amplitude");
  }
  if (spec.kind == FieldKind::UNIFORM_STRAIN || spec.kind == FieldKind::RADIAL_STRETCH) {
    const double e = spec.kind == FieldKind::RADIAL_STRETCH ? spec.edge_extension / spec.half_diagonal : 0.0;
    const double a = 1 + spec.exx + e, b = spec.exy, c = spec.exy, d = 1 + spec.eyy + e;
    if (!(a * d - b * c > 0)) fail(ErrorCode::NonInvertibleSpec, "deformation folds the image");
  }
  const SplineCoefficients spline = prefilter(image);
  double mean = 0;
  for (double v : image.pixels) mean += v;
  mean /= static_cast<double>(image.pixels.size());

  GrayImage out(image.width, image.height, 0.0, image.source_depth);
  const int s = supersample;
  const double inv = 1.0 / (s * s);
  const double w = image.width, h = image.height;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double acc = 0;
      for (int j = 0; j < s; ++j)
        for (int i = 0; i < s; ++i) {
          const double ox = (i + 0.5) / s - 0.5, oy = (j + 0.5) / s - 0.5;
          double X, Y;
          if (!spec.inverse(x + ox, y + oy, X, Y))
            fail(ErrorCode::NonInvertibleSpec, "inverse mapping did not converge");
          X -= ox;
          Y -= oy;
          acc += (X < -0.5 || Y < -0.5 || X > w - 0.5 || Y > h - 0.5) ? mean : spline.eval_extended(X, Y);
        }
      out.at(x, y) = acc * inv;
    }
  return out;
}

}  // namespace dic
