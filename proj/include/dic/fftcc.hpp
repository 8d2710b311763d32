#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dic/error.hpp"
#include "dic/fft.hpp"
#include "dic/image.hpp"
#include "dic/parallel.hpp"
#include "dic/params.hpp"
#include "dic/subset_grid.hpp"

namespace dic {

// ---------------------------------------------------------------------------
// Window pyramid

struct WindowPyramid {
  std::vector<int> sizes;
};

/// Powers of two descending from the smallest one above max_displacement,
/// stopping before the subset size, which is always the final level.
inline WindowPyramid plan_window_pyramid(double max_displacement, int subset_size) {
  WindowPyramid p;
  if (max_displacement >= subset_size) {
    long size = 1;
    while (static_cast<double>(size) <= max_displacement) size *= 2;
    for (; size > subset_size; size /= 2) p.sizes.push_back(static_cast<int>(size));
  }
  p.sizes.push_back(subset_size);
  return p;
}

// ---------------------------------------------------------------------------
// Single-window FFT normalized cross-correlation

struct WindowShift {
  int du = 0;
  int dv = 0;
  double peak = 0.0;
};

/// Scratch buffers for one window size; one per thread.
class FftccWorkspace {
 public:
  explicit FftccWorkspace(int n)
      : fft_(Fft2D::get(n)),
        real_(static_cast<std::size_t>(n) * n),
        spec_f_(fft_.spectrum_size()),
        spec_g_(fft_.spectrum_size()) {}

  int n() const noexcept { return fft_.n(); }

  /// Correlation map R (row-major n x n): inverse FFT of the
  /// phase-normalized cross-spectrum F{f} conj(F{g}) / (|F{f}| |F{g}|).
  std::span<const double> correlate(std::span<const double> f, std::span<const double> g) {
    const std::size_t nn = static_cast<std::size_t>(n()) * n();
    if (f.size() != nn || g.size() != nn) fail(ErrorCode::InvalidArgument, "window size mismatch");
    std::copy(f.begin(), f.end(), real_.data());
    fft_.forward(real_.data(), spec_f_.data());
    std::copy(g.begin(), g.end(), real_.data());
    fft_.forward(real_.data(), spec_g_.data());

    const std::size_t ns = fft_.spectrum_size();
    double max_mag = 0.0;
    for (std::size_t k = 0; k < ns; ++k)
      max_mag = std::max(max_mag, std::hypot(spec_f_[k][0], spec_f_[k][1]) * std::hypot(spec_g_[k][0], spec_g_[k][1]));
    const double floor = 1e-12 * max_mag;
    for (std::size_t k = 0; k < ns; ++k) {
      const double fr = spec_f_[k][0], fi = spec_f_[k][1];
      const double gr = spec_g_[k][0], gi = spec_g_[k][1];
      const double m = std::hypot(fr, fi) * std::hypot(gr, gi);
      if (m < floor || m == 0.0) {
        spec_f_[k][0] = spec_f_[k][1] = 0.0;
        continue;
      }
      // f * conj(g)
      spec_f_[k][0] = (fr * gr + fi * gi) / m;
      spec_f_[k][1] = (fi * gr - fr * gi) / m;
    }
    fft_.inverse(spec_f_.data(), real_.data());
    const double scale = 1.0 / static_cast<double>(nn);
    for (std::size_t i = 0; i < nn; ++i) real_[i] *= scale;
    return {real_.data(), nn};
  }

 private:
  const Fft2D& fft_;
  FftBuffer<double> real_;
  FftBuffer<fftw_complex> spec_f_;
  FftBuffer<fftw_complex> spec_g_;
};

namespace fftcc_detail {
inline int wrap(int p, int n) { return p > n / 2 ? p - n : p; }

inline std::size_t argmax(std::span<const double> r) {
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}
}  // namespace fftcc_detail

/// Integer displacement of `def` relative to `ref` (content moved by +du, +dv).
inline WindowShift fftcc_window(std::span<const double> ref, std::span<const double> def, FftccWorkspace& ws) {
  const int n = ws.n();
  const auto r = ws.correlate(ref, def);
  const std::size_t p = fftcc_detail::argmax(r);
  if (!std::isfinite(r[p]) || r[p] <= 0.0) fail(ErrorCode::DegenerateSpectrum, "correlation map has no peak");
  const int px = static_cast<int>(p % n), py = static_cast<int>(p / n);
  // The peak of f * conj(g) sits at minus the displacement.
  return {-fftcc_detail::wrap(px, n), -fftcc_detail::wrap(py, n), r[p]};
}

inline WindowShift fftcc_window(std::span<const double> ref, std::span<const double> def, int n) {
  FftccWorkspace ws(n);
  return fftcc_window(ref, def, ws);
}

// ---------------------------------------------------------------------------
// Sub-pixel peak fit

/// Three-point log-Gaussian fit; nullopt when a sample is non-positive or the
/// curvature vanishes.
inline std::optional<double> gaussian_peak_offset(double rm, double r0, double rp) {
  if (!(rm > 0.0 && r0 > 0.0 && rp > 0.0)) return std::nullopt;
  const double lm = std::log(rm), l0 = std::log(r0), lp = std::log(rp);
  const double den = 2.0 * lm - 4.0 * l0 + 2.0 * lp;
  if (den == 0.0 || !std::isfinite(den)) return std::nullopt;
  const double d = (lm - lp) / den;
  if (!(std::abs(d) < 1.0)) return std::nullopt;
  return d;
}

struct SubpixelOffset {
  double dx = 0.0;
  double dy = 0.0;
  bool fitted_x = false;
  bool fitted_y = false;
};

/// Separable Gaussian fit around `peak` of a row-major map. Axes that cannot be
/// fitted (edge peak, non-positive samples) fall back to zero offset.
inline SubpixelOffset gaussian_subpixel(std::span<const double> map, int cols, int rows, int peak_col, int peak_row) {
  SubpixelOffset out;
  auto at = [&](int c, int r) { return map[static_cast<std::size_t>(r) * cols + c]; };
  const double r0 = at(peak_col, peak_row);
  if (peak_col > 0 && peak_col + 1 < cols)
    if (auto d = gaussian_peak_offset(at(peak_col - 1, peak_row), r0, at(peak_col + 1, peak_row))) {
      out.dx = *d;
      out.fitted_x = true;
    }
  if (peak_row > 0 && peak_row + 1 < rows)
    if (auto d = gaussian_peak_offset(at(peak_col, peak_row - 1), r0, at(peak_col, peak_row + 1))) {
      out.dy = *d;
      out.fitted_y = true;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Rigid displacement fields

/// Displacement estimates on a regular lattice (one pyramid level, or the subset
/// grid at the final level).
struct InitField {
  double x0 = 0.0;
  double y0 = 0.0;
  double spacing = 1.0;
  int cols = 0;
  int rows = 0;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<std::uint8_t> valid;
  std::vector<double> peak_quality;

  InitField() = default;
  InitField(int c, int r, double ox, double oy, double sp)
      : x0(ox), y0(oy), spacing(sp), cols(c), rows(r),
        u(static_cast<std::size_t>(c) * r, 0.0), v(u.size(), 0.0), valid(u.size(), 0), peak_quality(u.size(), 0.0) {}

  std::size_t size() const noexcept { return u.size(); }
  std::size_t index(int c, int r) const noexcept { return static_cast<std::size_t>(r) * cols + c; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }

  /// Bilinear interpolation at (x, y), clamped to the lattice extent.
  std::pair<double, double> interpolate(double x, double y) const {
    const double fx = std::clamp((x - x0) / spacing, 0.0, static_cast<double>(cols - 1));
    const double fy = std::clamp((y - y0) / spacing, 0.0, static_cast<double>(rows - 1));
    const int c0 = std::min(static_cast<int>(fx), std::max(cols - 2, 0));
    const int r0 = std::min(static_cast<int>(fy), std::max(rows - 2, 0));
    const int c1 = std::min(c0 + 1, cols - 1), r1 = std::min(r0 + 1, rows - 1);
    const double tx = fx - c0, ty = fy - r0;
    auto lerp2 = [&](const std::vector<double>& f) {
      const double a = f[index(c0, r0)] * (1 - tx) + f[index(c1, r0)] * tx;
      const double b = f[index(c0, r1)] * (1 - tx) + f[index(c1, r1)] * tx;
      return a * (1 - ty) + b * ty;
    };
    return {lerp2(u), lerp2(v)};
  }
};

namespace fftcc_detail {

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  const double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  const double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace fftcc_detail

/// Median and consistent MAD scale (1.4826 * median |x - m|) of a sample.
struct MadStats {
  double median = 0.0;
  double scale = 0.0;
};

inline MadStats mad_stats(const std::vector<double>& xs) {
  MadStats s;
  s.median = fftcc_detail::median_of(xs);
  std::vector<double> dev(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) dev[i] = std::abs(xs[i] - s.median);
  s.scale = 1.4826 * fftcc_detail::median_of(dev);
  if (s.scale == 0.0 && !dev.empty()) {
    // More than half the sample is identical: fall back to the mean deviation.
    double sum = 0.0;
    for (double d : dev) sum += d;
    s.scale = 1.4826 * sum / static_cast<double>(dev.size());
  }
  return s;
}

/// Replaces each invalid point with the median of its valid 8-neighbours
/// (or the given fallback when none are valid). Validity flags are unchanged.
inline void fill_invalid(InitField& f, double fallback_u, double fallback_v) {
  const std::vector<double> u = f.u, v = f.v;
  std::vector<double> nu, nv;
  for (int r = 0; r < f.rows; ++r)
    for (int c = 0; c < f.cols; ++c) {
      const std::size_t i = f.index(c, r);
      if (f.valid[i]) continue;
      nu.clear();
      nv.clear();
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = c + dc, rr = r + dr;
          if ((dc == 0 && dr == 0) || cc < 0 || rr < 0 || cc >= f.cols || rr >= f.rows) continue;
          const std::size_t j = f.index(cc, rr);
          if (!f.valid[j]) continue;
          nu.push_back(u[j]);
          nv.push_back(v[j]);
        }
      f.u[i] = nu.empty() ? fallback_u : fftcc_detail::median_of(nu);
      f.v[i] = nv.empty() ? fallback_v : fftcc_detail::median_of(nv);
    }
}

/// Median-absolute-deviation outlier rejection on u and v separately.
inline InitField mad_filter(const InitField& field, double k) {
  InitField out = field;
  std::vector<double> us, vs;
  for (std::size_t i = 0; i < field.size(); ++i)
    if (field.valid[i]) {
      us.push_back(field.u[i]);
      vs.push_back(field.v[i]);
    }
  if (us.empty()) return out;
  const MadStats su = mad_stats(us), sv = mad_stats(vs);
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!field.valid[i]) continue;
    if (std::abs(field.u[i] - su.median) > k * su.scale || std::abs(field.v[i] - sv.median) > k * sv.scale)
      out.valid[i] = 0;
  }
  fill_invalid(out, su.median, sv.median);
  return out;
}

namespace fftcc_detail {

inline void extract(const GrayImage& img, int sx, int sy, int n, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y) std::copy_n(img.row(sy + y) + sx, n, out.data() + static_cast<std::size_t>(y) * n);
}

/// Separable Hann taper; suppresses the window-edge discontinuity that otherwise
/// dominates the phase-only spectrum of band-limited speckle.
inline const std::vector<double>& hann_taper(int n) {
  thread_local std::vector<double> w;
  if (w.size() != static_cast<std::size_t>(n)) {
    w.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / n);
  }
  return w;
}

inline void apply_taper(const std::vector<double>& in, int n, std::vector<double>& out) {
  const auto& w = hann_taper(n);
  out.resize(in.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      out[i] = in[i] * w[x] * w[y];
    }
}

inline bool window_fits(const GrayImage& img, int sx, int sy, int n) {
  return sx >= 0 && sy >= 0 && sx + n <= img.width && sy + n <= img.height;
}

/// ZNCC of the overlap between ref window and def window for a candidate shift.
inline double overlap_zncc(const std::vector<double>& f, const std::vector<double>& g, int n, int du, int dv) {
  const int x0 = std::max(0, -du), x1 = std::min(n, n - du);
  const int y0 = std::max(0, -dv), y1 = std::min(n, n - dv);
  if (x1 - x0 < n / 8 || y1 - y0 < n / 8) return -2.0;
  double sf = 0, sg = 0, sff = 0, sgg = 0, sfg = 0;
  const double cnt = static_cast<double>(x1 - x0) * (y1 - y0);
  for (int y = y0; y < y1; ++y) {
    const double* fr = f.data() + static_cast<std::size_t>(y) * n;
    const double* gr = g.data() + static_cast<std::size_t>(y + dv) * n + du;
    for (int x = x0; x < x1; ++x) {
      const double a = fr[x], b = gr[x];
      sf += a;
      sg += b;
      sff += a * a;
      sgg += b * b;
      sfg += a * b;
    }
  }
  const double cov = sfg - sf * sg / cnt;
  const double vf = sff - sf * sf / cnt, vg = sgg - sg * sg / cnt;
  if (vf <= 0 || vg <= 0) return -2.0;
  return cov / std::sqrt(vf * vg);
}

/// Resolves the circular ambiguity of a large shift: the correlation peak of an
/// n-window cannot tell s from s - n, so the candidate with better overlap wins.
inline WindowShift resolve_alias(const std::vector<double>& f, const std::vector<double>& g, int n, WindowShift s) {
  std::vector<int> cu{s.du}, cv{s.dv};
  if (std::abs(s.du) > n / 4) cu.push_back(s.du > 0 ? s.du - n : s.du + n);
  if (std::abs(s.dv) > n / 4) cv.push_back(s.dv > 0 ? s.dv - n : s.dv + n);
  if (cu.size() == 1 && cv.size() == 1) return s;
  double best = -3.0;
  WindowShift out = s;
  for (int a : cu)
    for (int b : cv) {
      const double z = overlap_zncc(f, g, n, a, b);
      if (z > best) {
        best = z;
        out.du = a;
        out.dv = b;
      }
    }
  return out;
}

/// Direct spatial ZNCC between the subset at (cx, cy) in ref and at (cx+du, cy+dv) in def.
inline double subset_zncc(const GrayImage& ref, const GrayImage& def, int cx, int cy, int du, int dv, int half) {
  if (cx + du - half < 0 || cy + dv - half < 0 || cx + du + half >= def.width || cy + dv + half >= def.height)
    return std::numeric_limits<double>::quiet_NaN();
  double sf = 0, sg = 0, sff = 0, sgg = 0, sfg = 0;
  for (int y = -half; y <= half; ++y) {
    const double* fr = ref.row(cy + y) + cx;
    const double* gr = def.row(cy + dv + y) + cx + du;
    for (int x = -half; x <= half; ++x) {
      const double a = fr[x], b = gr[x];
      sf += a;
      sg += b;
      sff += a * a;
      sgg += b * b;
      sfg += a * b;
    }
  }
  const double cnt = static_cast<double>(2 * half + 1) * (2 * half + 1);
  const double vf = sff - sf * sf / cnt, vg = sgg - sg * sg / cnt;
  if (vf <= 0 || vg <= 0) return std::numeric_limits<double>::quiet_NaN();
  return (sfg - sf * sg / cnt) / std::sqrt(vf * vg);
}

}  // namespace fftcc_detail

/// Coarse-to-fine rigid displacement estimate for every subset center.
inline InitField multiwindow_displacement(const GrayImage& ref, const GrayImage& def, const SubsetGrid& grid,
                                          const DicParams& params) {
  using namespace fftcc_detail;
  if (!ref.same_dims(def)) fail(ErrorCode::InvalidArgument, "reference and deformed images differ in size");
  const WindowPyramid pyramid = plan_window_pyramid(params.max_displacement, params.subset_size);

  const double gx0 = grid.x0, gy0 = grid.y0;
  const double gx1 = grid.x0 + (grid.cols - 1) * grid.subset_step;
  const double gy1 = grid.y0 + (grid.rows - 1) * grid.subset_step;

  std::optional<InitField> prev;
  for (int n : pyramid.sizes) {
    if (n == params.subset_size) break;
    if (n > ref.width || n > ref.height) continue;  // window larger than the image
    const double spacing = n / 2.0;
    const int cols = static_cast<int>(std::ceil((gx1 - gx0) / spacing)) + 1;
    const int rows = static_cast<int>(std::ceil((gy1 - gy0) / spacing)) + 1;
    InitField level(cols, rows, gx0, gy0, spacing);

    parallel_for(level.size(), params.threads, [&](std::size_t b, std::size_t e) {
      FftccWorkspace ws(n);
      std::vector<double> fw, gw, ft, gt;
      for (std::size_t i = b; i < e; ++i) {
        const int c = static_cast<int>(i % cols), r = static_cast<int>(i / cols);
        const double xc = gx0 + c * spacing, yc = gy0 + r * spacing;
        const auto [gu, gv] = prev ? prev->interpolate(xc, yc) : std::pair{0.0, 0.0};
        const int ru = static_cast<int>(std::lround(gu)), rv = static_cast<int>(std::lround(gv));
        level.u[i] = gu;
        level.v[i] = gv;
        const int sx = std::clamp(static_cast<int>(std::lround(xc)) - n / 2, 0, ref.width - n);
        const int sy = std::clamp(static_cast<int>(std::lround(yc)) - n / 2, 0, ref.height - n);
        if (!window_fits(def, sx + ru, sy + rv, n)) continue;
        extract(ref, sx, sy, n, fw);
        extract(def, sx + ru, sy + rv, n, gw);
        WindowShift s;
        try {
          apply_taper(fw, n, ft);
          apply_taper(gw, n, gt);
          s = fftcc_window(ft, gt, ws);
        } catch (const Error&) {
          continue;
        }
        s = resolve_alias(fw, gw, n, s);
        level.u[i] = ru + s.du;
        level.v[i] = rv + s.dv;
        level.peak_quality[i] = s.peak;
        level.valid[i] = 1;
      }
    });
    if (level.valid_count() == 0) fail(ErrorCode::AllInvalid, "no valid window at size " + std::to_string(n));
    if (params.mad_enabled) {
      level = mad_filter(level, params.mad_k);
    } else {
      fill_invalid(level, 0.0, 0.0);
    }
    prev = std::move(level);
  }

  // Final level: subset-sized windows on the true centers, direct ZNCC search
  // around the guess (the whole displacement range when there was no coarse pass).
  const int half = grid.half();
  const int radius = prev ? 2 : std::max(2, static_cast<int>(std::ceil(params.max_displacement)));
  const int span = 2 * radius + 1;
  const bool subpixel = params.method == Method::MULTIWINDOW;
  InitField out(grid.cols, grid.rows, gx0, gy0, grid.subset_step);
  parallel_for(out.size(), params.threads, [&](std::size_t b, std::size_t e) {
    std::vector<double> map(static_cast<std::size_t>(span) * span);
    for (std::size_t i = b; i < e; ++i) {
      const Point p = grid.center(i);
      const auto [gu, gv] = prev ? prev->interpolate(p.x, p.y) : std::pair{0.0, 0.0};
      out.u[i] = gu;
      out.v[i] = gv;
      if (!grid.is_present(i)) continue;
      const int ru = static_cast<int>(std::lround(gu)), rv = static_cast<int>(std::lround(gv));
      int best = -1;
      for (int j = 0; j < span; ++j)
        for (int k = 0; k < span; ++k) {
          const std::size_t m = static_cast<std::size_t>(j) * span + k;
          map[m] = subset_zncc(ref, def, p.x, p.y, ru + k - radius, rv + j - radius, half);
          if (std::isnan(map[m])) continue;
          if (best < 0 || map[m] > map[static_cast<std::size_t>(best)]) best = static_cast<int>(m);
        }
      if (best < 0) continue;
      const int bk = best % span, bj = best / span;
      double du = ru + bk - radius, dv = rv + bj - radius;
      if (subpixel) {
        for (auto& z : map)
          if (std::isnan(z)) z = -1.0;
        const SubpixelOffset off = gaussian_subpixel(map, span, span, bk, bj);
        du += off.dx;
        dv += off.dy;
      }
      out.u[i] = du;
      out.v[i] = dv;
      out.peak_quality[i] = map[static_cast<std::size_t>(best)];
      out.valid[i] = 1;
    }
  });
  if (out.valid_count() == 0) fail(ErrorCode::AllInvalid, "no subset could be matched");
  if (params.mad_enabled) {
    // Only present points take part in the statistics.
    out = mad_filter(out, params.mad_k);
  } else {
    fill_invalid(out, 0.0, 0.0);
  }
  return out;
}

}  // namespace dic
