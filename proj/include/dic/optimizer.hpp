#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dic/error.hpp"
#include "dic/image.hpp"
#include "dic/params.hpp"
#include "dic/shape.hpp"
#include "dic/spline.hpp"
#include "dic/subset_grid.hpp"

namespace dic {

enum class SubsetStatus : std::int32_t {
  CONVERGED = 0,
  MAX_ITER = 1,
  OUT_OF_DOMAIN = 2,
  DIVERGED = 3,
  ABSENT = 4,
  LOW_CORRELATION = 5,
  REJECTED = 6,
};

inline std::string_view to_string(SubsetStatus s) {
  switch (s) {
    case SubsetStatus::CONVERGED: return "CONVERGED";
    case SubsetStatus::MAX_ITER: return "MAX_ITER";
    case SubsetStatus::OUT_OF_DOMAIN: return "OUT_OF_DOMAIN";
    case SubsetStatus::DIVERGED: return "DIVERGED";
    case SubsetStatus::ABSENT: return "ABSENT";
    case SubsetStatus::LOW_CORRELATION: return "LOW_CORRELATION";
    case SubsetStatus::REJECTED: return "REJECTED";
  }
  return "?";
}

struct SubsetResult {
  std::size_t grid_index = 0;
  Point center;
  ShapeParams params;
  double zncc = std::numeric_limits<double>::quiet_NaN();
  double final_cost = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  SubsetStatus status = SubsetStatus::ABSENT;
};

/// Reference intensities of one subset, sampled at integer pixels.
struct SubsetData {
  Point center;
  int half = 0;
  std::vector<double> lx, ly;  // local coordinates
  std::vector<double> f;
  double f_mean = 0.0;
  double f_zero_norm = 0.0;  // sqrt(sum (f - f_mean)^2)
  double f_norm = 0.0;       // sqrt(sum f^2)

  std::size_t size() const noexcept { return f.size(); }

  static SubsetData extract(const GrayImage& ref, Point center, int subset_size) {
    SubsetData s;
    s.center = center;
    s.half = (subset_size - 1) / 2;
    const int h = s.half;
    if (center.x - h < 0 || center.y - h < 0 || center.x + h >= ref.width || center.y + h >= ref.height)
      fail(ErrorCode::OutOfDomain, "subset footprint leaves the reference image");
    const std::size_t n = static_cast<std::size_t>(subset_size) * subset_size;
    s.lx.reserve(n);
    s.ly.reserve(n);
    s.f.reserve(n);
    for (int y = -h; y <= h; ++y)
      for (int x = -h; x <= h; ++x) {
        s.lx.push_back(x);
        s.ly.push_back(y);
        s.f.push_back(ref.at(center.x + x, center.y + y));
      }
    double sum = 0, sq = 0;
    for (double v : s.f) {
      sum += v;
      sq += v * v;
    }
    s.f_mean = sum / static_cast<double>(n);
    double zz = 0;
    for (double v : s.f) zz += (v - s.f_mean) * (v - s.f_mean);
    s.f_zero_norm = std::sqrt(zz);
    s.f_norm = std::sqrt(sq);
    if (!(s.f_zero_norm > 1e-9 * std::max(1.0, s.f_norm)))
      fail(ErrorCode::DegenerateSubset, "flat reference subset at (" + std::to_string(center.x) + ", " +
                                            std::to_string(center.y) + ")");
    return s;
  }
};

/// Residual vector and Jacobian of the selected cost for one subset against the
/// deformed-image spline. Owns its scratch; reuse one per thread.
class SubsetProblem {
 public:
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 12, 12>;
  using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 12, 1>;

  struct Evaluation {
    bool in_domain = false;
    double cost = std::numeric_limits<double>::quiet_NaN();
    double zncc = std::numeric_limits<double>::quiet_NaN();
  };

  void bind(const SubsetData& subset, const SplineCoefficients& spline, CostKind kind, ShapeKind shape) {
    subset_ = &subset;
    spline_ = &spline;
    kind_ = kind;
    shape_ = shape;
    np_ = param_count(shape);
    const std::size_t n = subset.size();
    g_.resize(n);
    r_.resize(n);
    dg_.resize(n * static_cast<std::size_t>(np_));
    jac_.resize(n * static_cast<std::size_t>(np_));
  }

  int num_params() const noexcept { return np_; }
  std::span<const double> residuals() const { return r_; }
  /// Row-major N x P Jacobian of the residuals (valid after evaluate(..., true)).
  std::span<const double> jacobian() const { return jac_; }
  std::span<const double> deformed_values() const { return g_; }

  Evaluation evaluate(const ShapeParams& s, bool with_jacobian) {
    const SubsetData& sd = *subset_;
    const std::size_t n = sd.size();
    const int np = np_;
    Evaluation ev;
    double dxi_x[12], dxi_y[12];
    for (std::size_t i = 0; i < n; ++i) {
      const Warped w = warp(s, sd.lx[i], sd.ly[i]);
      const double X = sd.center.x + w.x, Y = sd.center.y + w.y;
      if (!spline_->in_domain(X, Y)) return ev;
      if (with_jacobian) {
        const ValueGrad vg = spline_->value_grad_unchecked(X, Y);
        g_[i] = vg.value;
        warp_jacobian(shape_, sd.lx[i], sd.ly[i], dxi_x, dxi_y);
        double* row = dg_.data() + i * np;
        for (int k = 0; k < np; ++k) row[k] = vg.dx * dxi_x[k] + vg.dy * dxi_y[k];
      } else {
        g_[i] = spline_->value_unchecked(X, Y);
      }
    }
    ev.in_domain = true;

    double gm = 0, gg = 0;
    for (double v : g_) gm += v;
    gm /= static_cast<double>(n);
    double zz = 0, fz = 0;
    for (std::size_t i = 0; i < n; ++i) {
      zz += (g_[i] - gm) * (g_[i] - gm);
      gg += g_[i] * g_[i];
      fz += (sd.f[i] - sd.f_mean) * (g_[i] - gm);
    }
    const double g_zero_norm = std::sqrt(zz), g_norm = std::sqrt(gg);
    ev.zncc = g_zero_norm > 0 ? fz / (sd.f_zero_norm * g_zero_norm) : std::numeric_limits<double>::quiet_NaN();

    // Residuals r_i = a_i - b_i(p); the Jacobian is -db/dp.
    double c = 0;
    switch (kind_) {
      case CostKind::SSD:
        for (std::size_t i = 0; i < n; ++i) r_[i] = sd.f[i] - g_[i];
        break;
      case CostKind::NSSD:
        if (!(g_norm > 0)) {
          ev.cost = std::numeric_limits<double>::infinity();
          return ev;
        }
        for (std::size_t i = 0; i < n; ++i) r_[i] = sd.f[i] / sd.f_norm - g_[i] / g_norm;
        break;
      case CostKind::ZNSSD:
        if (!(g_zero_norm > 0)) {
          ev.cost = std::numeric_limits<double>::infinity();
          return ev;
        }
        for (std::size_t i = 0; i < n; ++i)
          r_[i] = (sd.f[i] - sd.f_mean) / sd.f_zero_norm - (g_[i] - gm) / g_zero_norm;
        break;
    }
    for (double v : r_) c += v * v;
    ev.cost = c;
    if (!with_jacobian) return ev;

    double dmean[12] = {}, proj[12] = {};
    if (kind_ == CostKind::SSD) {
      for (std::size_t k = 0; k < dg_.size(); ++k) jac_[k] = -dg_[k];
      return ev;
    }
    const bool zero_mean = kind_ == CostKind::ZNSSD;
    const double norm = zero_mean ? g_zero_norm : g_norm;
    if (zero_mean) {
      for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < np; ++k) dmean[k] += dg_[i * np + k];
      for (int k = 0; k < np; ++k) dmean[k] /= static_cast<double>(n);
    }
    const double shift = zero_mean ? gm : 0.0;
    // proj_k = sum_i gbar_i * d(gbar_i)/dp_k
    for (std::size_t i = 0; i < n; ++i) {
      const double gb = g_[i] - shift;
      for (int k = 0; k < np; ++k) proj[k] += gb * (dg_[i * np + k] - dmean[k]);
    }
    const double inv = 1.0 / norm, inv3 = inv * inv * inv;
    for (std::size_t i = 0; i < n; ++i) {
      const double gb = g_[i] - shift;
      for (int k = 0; k < np; ++k)
        jac_[i * np + k] = -((dg_[i * np + k] - dmean[k]) * inv - gb * proj[k] * inv3);
    }
    return ev;
  }

  /// Gauss-Newton normal equations from the last evaluate(..., true).
  void normal_equations(Mat& jtj, Vec& jtr) const {
    const std::size_t n = subset_->size();
    const int np = np_;
    jtj.setZero(np, np);
    jtr.setZero(np);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = jac_.data() + i * np;
      for (int a = 0; a < np; ++a) {
        jtr[a] += row[a] * r_[i];
        for (int b = a; b < np; ++b) jtj(a, b) += row[a] * row[b];
      }
    }
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < a; ++b) jtj(a, b) = jtj(b, a);
  }

 private:
  const SubsetData* subset_ = nullptr;
  const SplineCoefficients* spline_ = nullptr;
  CostKind kind_ = CostKind::ZNSSD;
  ShapeKind shape_ = ShapeKind::AFFINE;
  int np_ = 0;
  std::vector<double> g_, r_, dg_, jac_;
};

/// Update-norm weights: gradients scaled by the half-width h, quadratic terms by h^2.
inline double scaled_update_norm(const double* dp, ShapeKind kind, int half) {
  const double h = half, h2 = h * h;
  double s = 0;
  for (int k = 0; k < param_count(kind); ++k) {
    const double w = k < 2 ? 1.0 : (k < 6 ? h : h2);
    s += (dp[k] * w) * (dp[k] * w);
  }
  return std::sqrt(s);
}

/// Optional record of the costs at accepted iterates (starting point first).
struct LmTrace {
  std::vector<double> accepted_costs;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling and forward-additive updates.
inline SubsetResult lm_minimize(const SubsetData& subset, const SplineCoefficients& deformed,
                                const ShapeParams& init, const DicParams& params, SubsetProblem& problem,
                                LmTrace* trace = nullptr) {
  SubsetResult res;
  res.center = subset.center;
  ShapeParams p = init.as(params.shape);
  res.params = p;
  if (!p.finite()) {
    res.status = SubsetStatus::DIVERGED;
    return res;
  }
  problem.bind(subset, deformed, params.cost, params.shape);
  const int np = problem.num_params();

  auto ev = problem.evaluate(p, true);
  if (!ev.in_domain) {
    res.status = SubsetStatus::OUT_OF_DOMAIN;
    return res;
  }
  if (!std::isfinite(ev.cost)) {
    res.status = SubsetStatus::DIVERGED;
    return res;
  }
  if (trace) trace->accepted_costs.push_back(ev.cost);

  SubsetProblem::Mat jtj, A;
  SubsetProblem::Vec jtr, delta;
  problem.normal_equations(jtj, jtr);
  double cost = ev.cost, zn = ev.zncc;
  double lambda = 1e-3;
  bool converged = false;
  SubsetStatus fail_status = SubsetStatus::MAX_ITER;
  int it = 0;
  while (it < params.max_iterations) {
    ++it;
    A = jtj;
    for (int k = 0; k < np; ++k) A(k, k) += lambda * (jtj(k, k) > 0 ? jtj(k, k) : 1e-12);
    delta = A.ldlt().solve(-jtr);
    if (!delta.allFinite()) {
      fail_status = SubsetStatus::DIVERGED;
      break;
    }
    const double step = scaled_update_norm(delta.data(), params.shape, subset.half);
    ShapeParams trial = p;
    for (int k = 0; k < np; ++k) trial.p[k] += delta[k];
    const auto tev = problem.evaluate(trial, true);
    if (!tev.in_domain) {
      fail_status = SubsetStatus::OUT_OF_DOMAIN;
      break;
    }
    if (!std::isfinite(tev.cost)) {
      fail_status = SubsetStatus::DIVERGED;
      break;
    }
    if (tev.cost <= cost) {
      p = trial;
      cost = tev.cost;
      zn = tev.zncc;
      problem.normal_equations(jtj, jtr);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (trace) trace->accepted_costs.push_back(cost);
      if (step <= params.update_precision) {
        converged = true;
        break;
      }
    } else {
      lambda = std::min(lambda * 10.0, 1e12);
      // A rejected step this small means no lower cost lies within the precision.
      if (step <= params.update_precision) {
        converged = true;
        break;
      }
    }
  }
  res.params = p;
  res.final_cost = cost;
  res.zncc = zn;
  res.iterations = it;
  if (converged) {
    res.status = zn >= params.zncc_accept_threshold ? SubsetStatus::CONVERGED : SubsetStatus::LOW_CORRELATION;
  } else {
    res.status = fail_status;
  }
  return res;
}

inline SubsetResult lm_minimize(const SubsetData& subset, const SplineCoefficients& deformed,
                                const ShapeParams& init, const DicParams& params) {
  SubsetProblem problem;
  return lm_minimize(subset, deformed, init, params, problem);
}

}  // namespace dic
