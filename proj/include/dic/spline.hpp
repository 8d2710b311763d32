#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dic/error.hpp"
#include "dic/image.hpp"
#include "dic/parallel.hpp"

namespace dic {

struct Gradient {
  double dx = 0.0;
  double dy = 0.0;
};

struct ValueGrad {
  double value = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

namespace spline_detail {

inline constexpr double kPole = -0.26794919243112270;  // sqrt(3) - 2
inline constexpr double kGain = 6.0;                   // (1 - z)(1 - 1/z)
inline constexpr double kTolerance = 1e-12;

inline int horizon() {
  static const int h = static_cast<int>(std::ceil(std::log(kTolerance) / std::log(std::abs(kPole))));
  return h;
}

// Causal initial value for whole-sample mirror boundaries.
inline double initial_causal(std::span<const double> c) {
  const double z = kPole;
  const std::size_t n = c.size();
  const std::size_t h = static_cast<std::size_t>(horizon());
  if (h < n) {
    double zn = z, sum = c[0];
    for (std::size_t k = 1; k < h; ++k) {
      sum += zn * c[k];
      zn *= z;
    }
    return sum;
  }
  double zn = z;
  const double iz = 1.0 / z;
  double z2n = std::pow(z, static_cast<double>(n - 1));
  double sum = c[0] + z2n * c[n - 1];
  z2n *= z2n * iz;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    sum += (zn + z2n) * c[k];
    zn *= z;
    z2n *= iz;
  }
  return sum / (1.0 - zn * zn);
}

inline void filter_line(std::span<double> c) {
  const double z = kPole;
  const std::size_t n = c.size();
  if (n == 1) return;
  for (auto& v : c) v *= kGain;
  c[0] = initial_causal(c);
  for (std::size_t k = 1; k < n; ++k) c[k] += z * c[k - 1];
  c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
  for (std::size_t k = n - 1; k-- > 0;) c[k] = z * (c[k + 1] - c[k]);
}

inline void weights(double t, double* w) {
  const double s = 1.0 - t;
  const double t2 = t * t, t3 = t2 * t;
  w[0] = s * s * s / 6.0;
  w[1] = (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0;
  w[2] = (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0;
  w[3] = t3 / 6.0;
}

inline void dweights(double t, double* d) {
  const double s = 1.0 - t;
  d[0] = -0.5 * s * s;
  d[1] = 1.5 * t * t - 2.0 * t;
  d[2] = 0.5 + t - 1.5 * t * t;
  d[3] = 0.5 * t * t;
}

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace spline_detail

/// Interpolating bicubic b-spline coefficients (mirror boundaries).
class SplineCoefficients {
 public:
  /// Margin from the image edge inside which eval is defined.
  static constexpr double kLowMargin = 1.5;
  static constexpr double kHighMargin = 2.5;

  SplineCoefficients() = default;
  SplineCoefficients(int width, int height, std::vector<double> coeffs)
      : width_(width), height_(height), c_(std::move(coeffs)) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const std::vector<double>& coeffs() const noexcept { return c_; }
  double coeff(int x, int y) const { return c_[static_cast<std::size_t>(y) * width_ + x]; }

  bool in_domain(double x, double y) const noexcept {
    return x >= kLowMargin && y >= kLowMargin && x <= width_ - kHighMargin && y <= height_ - kHighMargin;
  }

  double eval(double x, double y) const {
    check(x, y);
    return value_unchecked(x, y);
  }

  Gradient eval_grad(double x, double y) const {
    check(x, y);
    const ValueGrad v = value_grad_unchecked(x, y);
    return {v.dx, v.dy};
  }

  ValueGrad eval_value_grad(double x, double y) const {
    check(x, y);
    return value_grad_unchecked(x, y);
  }

  /// Caller guarantees in_domain(x, y).
  double value_unchecked(double x, double y) const noexcept {
    const double fx = std::floor(x), fy = std::floor(y);
    double wx[4], wy[4];
    spline_detail::weights(x - fx, wx);
    spline_detail::weights(y - fy, wy);
    const double* base = c_.data() + (static_cast<std::size_t>(fy) - 1) * width_ + static_cast<std::size_t>(fx) - 1;
    double v = 0.0;
    for (int j = 0; j < 4; ++j) {
      const double* r = base + static_cast<std::size_t>(j) * width_;
      v += wy[j] * (wx[0] * r[0] + wx[1] * r[1] + wx[2] * r[2] + wx[3] * r[3]);
    }
    return v;
  }

  /// Caller guarantees in_domain(x, y).
  ValueGrad value_grad_unchecked(double x, double y) const noexcept {
    const double fx = std::floor(x), fy = std::floor(y);
    double wx[4], wy[4], dx[4], dy[4];
    spline_detail::weights(x - fx, wx);
    spline_detail::weights(y - fy, wy);
    spline_detail::dweights(x - fx, dx);
    spline_detail::dweights(y - fy, dy);
    const double* base = c_.data() + (static_cast<std::size_t>(fy) - 1) * width_ + static_cast<std::size_t>(fx) - 1;
    ValueGrad out;
    for (int j = 0; j < 4; ++j) {
      const double* r = base + static_cast<std::size_t>(j) * width_;
      const double rv = wx[0] * r[0] + wx[1] * r[1] + wx[2] * r[2] + wx[3] * r[3];
      const double rd = dx[0] * r[0] + dx[1] * r[1] + dx[2] * r[2] + dx[3] * r[3];
      out.value += wy[j] * rv;
      out.dx += wy[j] * rd;
      out.dy += dy[j] * rv;
    }
    return out;
  }

  /// Evaluation anywhere in the plane using mirror-extended coefficients.
  double eval_extended(double x, double y) const noexcept {
    const double fx = std::floor(x), fy = std::floor(y);
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    if (ix >= 1 && iy >= 1 && ix + 2 < width_ && iy + 2 < height_) return value_unchecked(x, y);
    double wx[4], wy[4];
    spline_detail::weights(x - fx, wx);
    spline_detail::weights(y - fy, wy);
    double v = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int yy = spline_detail::mirror(iy - 1 + j, height_);
      double rv = 0.0;
      for (int i = 0; i < 4; ++i) rv += wx[i] * coeff(spline_detail::mirror(ix - 1 + i, width_), yy);
      v += wy[j] * rv;
    }
    return v;
  }

  /// Spline value at an integer pixel, valid at every pixel including edges.
  double reconstruct(int x, int y) const noexcept { return eval_extended(x, y); }

 private:
  void check(double x, double y) const {
    if (!in_domain(x, y))
      fail(ErrorCode::OutOfDomain, "spline evaluated outside its safe domain at (" + std::to_string(x) + ", " +
                                       std::to_string(y) + ")");
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> c_;
};

/// Separable causal/anti-causal recursive prefilter producing interpolating coefficients.
inline SplineCoefficients prefilter(const GrayImage& image, int threads = 1) {
  if (image.width < 4 || image.height < 4)
    fail(ErrorCode::ImageTooSmall, "b-spline prefilter needs at least 4x4 pixels");
  const int w = image.width, h = image.height;
  std::vector<double> c = image.pixels;

  parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t y = b; y < e; ++y)
      spline_detail::filter_line(std::span<double>(c.data() + y * w, static_cast<std::size_t>(w)));
  });

  // Columns are filtered in blocks copied to contiguous scratch lines.
  constexpr std::size_t kBlock = 32;
  const std::size_t nblocks = (static_cast<std::size_t>(w) + kBlock - 1) / kBlock;
  parallel_for(nblocks, threads, [&](std::size_t b, std::size_t e) {
    std::vector<double> scratch(kBlock * static_cast<std::size_t>(h));
    for (std::size_t blk = b; blk < e; ++blk) {
      const std::size_t x0 = blk * kBlock;
      const std::size_t bw = std::min<std::size_t>(kBlock, static_cast<std::size_t>(w) - x0);
      for (std::size_t y = 0; y < static_cast<std::size_t>(h); ++y)
        for (std::size_t i = 0; i < bw; ++i) scratch[i * h + y] = c[y * w + x0 + i];
      for (std::size_t i = 0; i < bw; ++i)
        spline_detail::filter_line(std::span<double>(scratch.data() + i * h, static_cast<std::size_t>(h)));
      for (std::size_t y = 0; y < static_cast<std::size_t>(h); ++y)
        for (std::size_t i = 0; i < bw; ++i) c[y * w + x0 + i] = scratch[i * h + y];
    }
  });
  return SplineCoefficients(w, h, std::move(c));
}

}  // namespace dic
