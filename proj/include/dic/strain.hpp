#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dic/error.hpp"
#include "dic/parallel.hpp"
#include "dic/params.hpp"
#include "dic/rgdic.hpp"

namespace dic {

enum class StrainBasis { BILINEAR, BIQUADRATIC };
enum class StrainFormulation { GREEN_LAGRANGE, HENCKY, EULER_ALMANSI, BIOT_RIGHT, BIOT_LEFT };

inline std::string_view to_string(StrainBasis b) {
  return b == StrainBasis::BILINEAR ? "BILINEAR" : "BIQUADRATIC";
}

inline std::string_view to_string(StrainFormulation f) {
  switch (f) {
    case StrainFormulation::GREEN_LAGRANGE: return "GREEN_LAGRANGE";
    case StrainFormulation::HENCKY: return "HENCKY";
    case StrainFormulation::EULER_ALMANSI: return "EULER_ALMANSI";
    case StrainFormulation::BIOT_RIGHT: return "BIOT_RIGHT";
    case StrainFormulation::BIOT_LEFT: return "BIOT_LEFT";
  }
  return "?";
}

inline std::optional<StrainBasis> parse_basis(std::string_view s) {
  const auto u = detail::upper(s);
  if (u == "BILINEAR") return StrainBasis::BILINEAR;
  if (u == "BIQUADRATIC") return StrainBasis::BIQUADRATIC;
  return std::nullopt;
}

inline std::optional<StrainFormulation> parse_formulation(std::string_view s) {
  const auto u = detail::upper(s);
  if (u == "GREEN_LAGRANGE") return StrainFormulation::GREEN_LAGRANGE;
  if (u == "HENCKY") return StrainFormulation::HENCKY;
  if (u == "EULER_ALMANSI") return StrainFormulation::EULER_ALMANSI;
  if (u == "BIOT_RIGHT") return StrainFormulation::BIOT_RIGHT;
  if (u == "BIOT_LEFT") return StrainFormulation::BIOT_LEFT;
  return std::nullopt;
}

inline constexpr int basis_size(StrainBasis b) { return b == StrainBasis::BILINEAR ? 3 : 8; }

struct StrainParams {
  int window_points = 5;
  StrainBasis basis = StrainBasis::BILINEAR;
  StrainFormulation formulation = StrainFormulation::GREEN_LAGRANGE;
  int threads = 1;

  void validate() const {
    if (window_points < 3 || window_points % 2 == 0)
      fail(ErrorCode::InvalidArgument, "window_points must be odd and >= 3");
  }
  /// Fewest valid points a window needs to be fitted.
  int min_valid() const {
    return std::min(basis_size(basis) + 2, window_points * window_points);
  }
};

/// Row-major 2x2 matrix {xx, xy, yx, yy}.
using Mat2 = std::array<double, 4>;

struct Sym2 {
  double xx = 0, yy = 0, xy = 0;
};

struct WindowSample {
  double x = 0, y = 0;  // local pixel coordinates
  double u = 0;
};

/// Least-squares polynomial coefficients. Bilinear: [1, x, y]; biquadratic:
/// [1, x, y, x^2, y^2, x^2 y, x y^2, x^2 y^2]. NaN samples are skipped.
inline std::vector<double> fit_window(const std::vector<WindowSample>& samples, StrainBasis basis) {
  const int nb = basis_size(basis);
  std::vector<const WindowSample*> ok;
  for (const auto& s : samples)
    if (std::isfinite(s.u)) ok.push_back(&s);
  if (static_cast<int>(ok.size()) < nb) fail(ErrorCode::RankDeficient, "too few valid points for the basis");
  Eigen::MatrixXd P(ok.size(), nb);
  Eigen::VectorXd b(ok.size());
  for (std::size_t i = 0; i < ok.size(); ++i) {
    const double x = ok[i]->x, y = ok[i]->y;
    P(i, 0) = 1;
    P(i, 1) = x;
    P(i, 2) = y;
    if (nb == 8) {
      P(i, 3) = x * x;
      P(i, 4) = y * y;
      P(i, 5) = x * x * y;
      P(i, 6) = x * y * y;
      P(i, 7) = x * x * y * y;
    }
    b[i] = ok[i]->u;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(P);
  qr.setThreshold(1e-10);
  if (qr.rank() < nb) fail(ErrorCode::RankDeficient, "window points do not span the basis");
  const Eigen::VectorXd c = qr.solve(b);
  return {c.data(), c.data() + nb};
}

/// F = I + grad(u) at the window center.
inline Mat2 deformation_gradient(const std::vector<double>& cx, const std::vector<double>& cy) {
  return {1.0 + cx[1], cx[2], cy[1], 1.0 + cy[2]};
}

namespace strain_detail {

inline Sym2 ata(const Mat2& F) {  // F^T F
  return {F[0] * F[0] + F[2] * F[2], F[1] * F[1] + F[3] * F[3], F[0] * F[1] + F[2] * F[3]};
}
inline Sym2 aat(const Mat2& F) {  // F F^T
  return {F[0] * F[0] + F[1] * F[1], F[2] * F[2] + F[3] * F[3], F[0] * F[2] + F[1] * F[3]};
}

/// f(S) for a symmetric 2x2 S through its eigendecomposition.
template <typename Fn>
Sym2 sym_apply(const Sym2& S, Fn&& f) {
  if (S.xy == 0.0) return {f(S.xx), f(S.yy), 0.0};
  const double m = 0.5 * (S.xx + S.yy);
  const double r = std::hypot(0.5 * (S.xx - S.yy), S.xy);
  const double l1 = m + r, l2 = m - r;
  if (!(l2 > 0)) fail(ErrorCode::SingularDeformation, "stretch tensor is not positive definite");
  const double th = 0.5 * std::atan2(2.0 * S.xy, S.xx - S.yy);
  const double c = std::cos(th), s = std::sin(th);
  const double f1 = f(l1), f2 = f(l2);
  return {f1 * c * c + f2 * s * s, f1 * s * s + f2 * c * c, (f1 - f2) * c * s};
}

}  // namespace strain_detail

inline Sym2 strain_tensor(const Mat2& F, StrainFormulation form) {
  using namespace strain_detail;
  const double det = F[0] * F[3] - F[1] * F[2];
  if (!(det > 0)) fail(ErrorCode::SingularDeformation, "det(F) <= 0");
  auto check = [](const Sym2& S) {
    if (!(S.xx > 0 && S.yy > 0)) fail(ErrorCode::SingularDeformation, "stretch tensor is not positive definite");
  };
  switch (form) {
    case StrainFormulation::GREEN_LAGRANGE: {
      const Sym2 C = ata(F);
      return {0.5 * (C.xx - 1.0), 0.5 * (C.yy - 1.0), 0.5 * C.xy};
    }
    case StrainFormulation::HENCKY: {
      const Sym2 C = ata(F);
      check(C);
      return sym_apply(C, [](double l) { return 0.5 * std::log(l); });
    }
    case StrainFormulation::EULER_ALMANSI: {
      const Sym2 B = aat(F);
      const double d = B.xx * B.yy - B.xy * B.xy;
      if (!(d > 0)) fail(ErrorCode::SingularDeformation, "F F^T is singular");
      return {0.5 * (1.0 - B.yy / d), 0.5 * (1.0 - B.xx / d), 0.5 * (B.xy / d)};
    }
    case StrainFormulation::BIOT_RIGHT:
    case StrainFormulation::BIOT_LEFT: {
      const Sym2 C = form == StrainFormulation::BIOT_RIGHT ? ata(F) : aat(F);
      check(C);
      return sym_apply(C, [](double l) { return std::sqrt(l) - 1.0; });
    }
  }
  return {};
}

/// Strain evaluated at every full N x N window of the displacement grid.
struct StrainField {
  std::string image_label;
  int window_points = 0;
  StrainBasis basis = StrainBasis::BILINEAR;
  StrainFormulation formulation = StrainFormulation::GREEN_LAGRANGE;
  int subset_size = 0;
  int subset_step = 0;
  int cols = 0;
  int rows = 0;
  double vsg = 0.0;

  std::vector<double> x, y;  // window centers in pixels
  std::vector<double> Fxx, Fxy, Fyx, Fyy;
  std::vector<double> exx, eyy, exy;
  std::vector<std::uint8_t> valid;

  std::size_t size() const noexcept { return x.size(); }
  std::size_t index(int c, int r) const noexcept { return static_cast<std::size_t>(r) * cols + c; }

  void allocate(int c, int r) {
    cols = c;
    rows = r;
    const std::size_t n = static_cast<std::size_t>(c) * r;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (auto* v : {&x, &y, &Fxx, &Fxy, &Fyx, &Fyy, &exx, &eyy, &exy}) v->assign(n, nan);
    valid.assign(n, 0);
  }
};

inline double virtual_strain_gauge(int window_points, int subset_step, int subset_size) {
  return static_cast<double>(window_points - 1) * subset_step + subset_size;
}

inline StrainField calculate_strain_field(const DicResult& result, const StrainParams& params) {
  params.validate();
  const SubsetGrid& g = result.grid;
  const int N = params.window_points, h = N / 2;
  if (g.cols < N || g.rows < N) fail(ErrorCode::GridTooSmall, "displacement grid smaller than the strain window");

  StrainField out;
  out.image_label = result.image_label;
  out.window_points = N;
  out.basis = params.basis;
  out.formulation = params.formulation;
  out.subset_size = g.subset_size;
  out.subset_step = g.subset_step;
  out.vsg = virtual_strain_gauge(N, g.subset_step, g.subset_size);
  out.allocate(g.cols - N + 1, g.rows - N + 1);

  const double s = g.subset_step;
  auto usable = [&](std::size_t i) {
    return result.status[i] == SubsetStatus::CONVERGED && std::isfinite(result.u_x[i]) && std::isfinite(result.u_y[i]);
  };

  parallel_for(static_cast<std::size_t>(out.rows), params.threads, [&](std::size_t rb, std::size_t re) {
    std::vector<WindowSample> wx, wy;
    for (std::size_t r = rb; r < re; ++r)
      for (int c = 0; c < out.cols; ++c) {
        const std::size_t o = out.index(c, static_cast<int>(r));
        const int gc = c + h, gr = static_cast<int>(r) + h;
        const Point pc = g.center(gc, gr);
        out.x[o] = pc.x;
        out.y[o] = pc.y;
        wx.clear();
        wy.clear();
        for (int dr = -h; dr <= h; ++dr)
          for (int dc = -h; dc <= h; ++dc) {
            const std::size_t i = g.index(gc + dc, gr + dr);
            if (!usable(i)) continue;
            wx.push_back({dc * s, dr * s, result.u_x[i]});
            wy.push_back({dc * s, dr * s, result.u_y[i]});
          }
        if (static_cast<int>(wx.size()) < params.min_valid()) continue;
        try {
          const Mat2 F = deformation_gradient(fit_window(wx, params.basis), fit_window(wy, params.basis));
          const Sym2 e = strain_tensor(F, params.formulation);
          out.Fxx[o] = F[0];
          out.Fxy[o] = F[1];
          out.Fyx[o] = F[2];
          out.Fyy[o] = F[3];
          out.exx[o] = e.xx;
          out.eyy[o] = e.yy;
          out.exy[o] = e.xy;
          out.valid[o] = 1;
        } catch (const Error& err) {
          if (err.code() != ErrorCode::RankDeficient && err.code() != ErrorCode::SingularDeformation) throw;
        }
      }
  });
  return out;
}

}  // namespace dic
