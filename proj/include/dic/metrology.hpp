#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "dic/error.hpp"
#include "dic/rgdic.hpp"
#include "dic/synth.hpp"

namespace dic {

/// 1-sigma (sample) spread of u_y over the CONVERGED points of a result.
inline double displacement_noise(const DicResult& r) {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.status[i] != SubsetStatus::CONVERGED || !std::isfinite(r.u_y[i])) continue;
    sum += r.u_y[i];
    ++n;
  }
  if (n < 2) fail(ErrorCode::AllInvalid, "noise floor needs at least two converged points");
  const double mean = sum / static_cast<double>(n);
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r.status[i] == SubsetStatus::CONVERGED && std::isfinite(r.u_y[i])) sq += (r.u_y[i] - mean) * (r.u_y[i] - mean);
  return std::sqrt(sq / static_cast<double>(n - 1));
}

/// Noise floor: correlates the reference against a noisy copy of itself.
inline double noise_floor(const GrayImage& ref, const GrayImage& ref_noisy, const RoiMask& roi, Point seed,
                          const DicParams& params) {
  if (!ref.same_dims(ref_noisy)) fail(ErrorCode::InvalidArgument, "noise floor images differ in size");
  const auto res = correlate_2d(ref, {{"noisy", ref_noisy}}, roi, seed, params);
  return displacement_noise(res.front());
}

/// Degree-12 least-squares polynomial, represented in a Chebyshev basis on the
/// sample x-range for conditioning.
class PolyFit {
 public:
  static constexpr int kDegree = 12;

  PolyFit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() <= static_cast<std::size_t>(kDegree))
      fail(ErrorCode::InvalidArgument, "polynomial fit needs more samples than its degree");
    lo_ = *std::min_element(x.begin(), x.end());
    hi_ = *std::max_element(x.begin(), x.end());
    if (!(hi_ > lo_)) fail(ErrorCode::InvalidArgument, "polynomial fit needs a nonzero x-range");
    Eigen::MatrixXd V(x.size(), kDegree + 1);
    Eigen::VectorXd b(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      basis(x[i], &V(i, 0), V.rows());
      b[i] = y[i];
    }
    c_ = V.colPivHouseholderQr().solve(b);
  }

  double operator()(double x) const {
    double t[kDegree + 1];
    basis(x, t, 1);
    double v = 0;
    for (int k = 0; k <= kDegree; ++k) v += c_[k] * t[k];
    return v;
  }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

 private:
  void basis(double x, double* out, Eigen::Index stride) const {
    const double s = 2.0 * (x - lo_) / (hi_ - lo_) - 1.0;
    double t0 = 1.0, t1 = s;
    out[0] = t0;
    out[stride] = t1;
    for (int k = 2; k <= kDegree; ++k) {
      const double t2 = 2.0 * s * t1 - t0;
      out[k * stride] = t2;
      t0 = t1;
      t1 = t2;
    }
  }

  double lo_ = 0, hi_ = 1;
  Eigen::VectorXd c_;
};

/// Median of the profile over the rightmost 10% of its x-range.
inline double plateau_amplitude(const std::vector<double>& x, const std::vector<double>& profile) {
  const double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
  const double cut = hi - 0.1 * (hi - lo);
  std::vector<double> tail;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] >= cut) tail.push_back(profile[i]);
  if (tail.empty()) fail(ErrorCode::InvalidArgument, "empty plateau region");
  const std::size_t m = tail.size() / 2;
  std::nth_element(tail.begin(), tail.begin() + m, tail.end());
  if (tail.size() % 2) return tail[m];
  const double upper = tail[m];
  return 0.5 * (upper + *std::max_element(tail.begin(), tail.begin() + m));
}

/// Largest x in [lo, hi] where f crosses level (f below level just left of it),
/// located on a dense scan and refined by bisection.
inline std::optional<double> last_crossing(const std::function<double(double)>& f, double lo, double hi, double level,
                                           int samples = 20000) {
  double xr = hi, fr = f(hi) - level;
  for (int k = samples - 1; k >= 0; --k) {
    const double xl = lo + (hi - lo) * k / samples;
    const double fl = f(xl) - level;
    if (fl < 0 && fr >= 0) {
      double a = xl, b = xr;
      for (int it = 0; it < 100; ++it) {
        const double m = 0.5 * (a + b);
        (f(m) - level < 0 ? a : b) = m;
      }
      return 0.5 * (a + b);
    }
    xr = xl;
    fr = fl;
  }
  return std::nullopt;
}

struct SpatialResolution {
  double l10 = 0.0;       // local period at the crossing
  double x_cross = 0.0;   // crossing column
  double plateau = 0.0;
};

/// l10%: local sinusoid period where the 12th-order fit of the midline amplitude
/// profile last falls below 90% of its plateau.
inline SpatialResolution spatial_resolution(const std::vector<double>& x, const std::vector<double>& profile,
                                            const std::function<double(double)>& period_of_x) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isfinite(profile[i])) {
      xs.push_back(x[i]);
      ys.push_back(profile[i]);
    }
  const PolyFit fit(xs, ys);
  SpatialResolution out;
  out.plateau = plateau_amplitude(xs, ys);
  const auto xc = last_crossing([&](double v) { return fit(v); }, fit.lo(), fit.hi(), 0.9 * out.plateau);
  if (!xc) fail(ErrorCode::NoCrossing, "profile never falls below 90% of its plateau");
  out.x_cross = *xc;
  out.l10 = period_of_x(*xc);
  return out;
}

inline double mei(double noise, double l10) { return noise * l10; }

/// Mean of the three smallest MEI values.
inline double mei_summary(std::vector<double> table) {
  if (table.size() < 3) fail(ErrorCode::TooFewEntries, "MEI summary needs at least three entries");
  std::partial_sort(table.begin(), table.begin() + 3, table.end());
  return (table[0] + table[1] + table[2]) / 3.0;
}

struct MetrologyRow {
  int subset_size = 0;
  double noise = 0.0;
  double l10 = 0.0;
  double mei = 0.0;
  std::vector<double> profile_x, profile;  // midline u_y
};

struct MetrologyReport {
  std::vector<MetrologyRow> rows;
  double summary = 0.0;
};

/// u_y along the grid row nearest to y.
inline void midline_profile(const DicResult& r, double y, std::vector<double>& xs, std::vector<double>& vals) {
  const SubsetGrid& g = r.grid;
  const int row = std::clamp(static_cast<int>(std::lround((y - g.y0) / g.subset_step)), 0, g.rows - 1);
  xs.clear();
  vals.clear();
  for (int c = 0; c < g.cols; ++c) {
    const std::size_t i = g.index(c, row);
    if (!g.is_present(i)) continue;
    xs.push_back(g.center(c, row).x);
    vals.push_back(r.status[i] == SubsetStatus::CONVERGED ? r.u_y[i] : std::numeric_limits<double>::quiet_NaN());
  }
}

/// Noise floor, l10% and MEI per subset size on a star-pattern image set.
inline MetrologyReport metrology_sweep(const GrayImage& ref, const GrayImage& ref_noisy, const GrayImage& star,
                                       const RoiMask& roi, Point seed, double midline_y,
                                       const std::function<double(double)>& period_of_x,
                                       const std::vector<int>& subset_sizes, DicParams params) {
  MetrologyReport rep;
  std::vector<double> meis;
  for (int ss : subset_sizes) {
    params.subset_size = ss;
    MetrologyRow row;
    row.subset_size = ss;
    row.noise = noise_floor(ref, ref_noisy, roi, seed, params);
    const auto res = correlate_2d(ref, {{"star", star}}, roi, seed, params);
    midline_profile(res.front(), midline_y, row.profile_x, row.profile);
    row.l10 = spatial_resolution(row.profile_x, row.profile, period_of_x).l10;
    row.mei = mei(row.noise, row.l10);
    meis.push_back(row.mei);
    rep.rows.push_back(std::move(row));
  }
  rep.summary = mei_summary(meis);
  return rep;
}

}  // namespace dic
