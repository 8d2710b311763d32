#pragma once

#include <cmath>
#include <span>

#include "dic/error.hpp"
#include "dic/params.hpp"

namespace dic {

/// Zero-normalized cross-correlation coefficient of two equal-length samples.
inline double zncc(std::span<const double> f, std::span<const double> g) {
  if (f.size() != g.size() || f.empty()) fail(ErrorCode::InvalidArgument, "zncc needs equal nonempty samples");
  const double n = static_cast<double>(f.size());
  double mf = 0, mg = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    mf += f[i];
    mg += g[i];
  }
  mf /= n;
  mg /= n;
  double sfg = 0, sff = 0, sgg = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double a = f[i] - mf, b = g[i] - mg;
    sfg += a * b;
    sff += a * a;
    sgg += b * b;
  }
  if (sff <= 0 || sgg <= 0) fail(ErrorCode::DegenerateSubset, "flat intensity sample");
  return sfg / std::sqrt(sff * sgg);
}

/// SSD, NSSD and ZNSSD between reference and deformed gray levels.
inline double cost(CostKind kind, std::span<const double> f, std::span<const double> g) {
  if (f.size() != g.size() || f.empty()) fail(ErrorCode::InvalidArgument, "cost needs equal nonempty samples");
  const std::size_t n = f.size();
  double mf = 0, mg = 0;
  if (kind == CostKind::ZNSSD) {
    for (std::size_t i = 0; i < n; ++i) {
      mf += f[i];
      mg += g[i];
    }
    mf /= static_cast<double>(n);
    mg /= static_cast<double>(n);
  }
  double nf = 0, ng = 0;
  for (std::size_t i = 0; i < n; ++i) {
    nf += (f[i] - mf) * (f[i] - mf);
    ng += (g[i] - mg) * (g[i] - mg);
  }
  double s = 0;
  if (kind == CostKind::SSD) {
    for (std::size_t i = 0; i < n; ++i) s += (f[i] - g[i]) * (f[i] - g[i]);
    return s;
  }
  if (nf <= 0 || ng <= 0) fail(ErrorCode::DegenerateSubset, "zero-norm intensity sample");
  nf = std::sqrt(nf);
  ng = std::sqrt(ng);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (f[i] - mf) / nf - (g[i] - mg) / ng;
    s += d * d;
  }
  return s;
}

}  // namespace dic
