#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "dic/error.hpp"

namespace dic {

enum class CostKind { SSD, NSSD, ZNSSD };
enum class ShapeKind { RIGID, AFFINE, QUADRATIC };
enum class Method { MULTIWINDOW, MULTIWINDOW_RG };

/// Correlation configuration. Defaults follow the engine's documented defaults.
struct DicParams {
  int subset_size = 31;
  int subset_step = 15;
  double max_displacement = 32.0;
  CostKind cost = CostKind::ZNSSD;
  ShapeKind shape = ShapeKind::AFFINE;
  Method method = Method::MULTIWINDOW_RG;
  int max_iterations = 40;
  double update_precision = 0.01;
  double zncc_accept_threshold = 0.70;
  int threads = default_threads();
  double mad_k = 3.0;
  bool mad_enabled = true;
  bool nan_unconverged = false;

  static int default_threads() {
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }

  void validate() const {
    if (subset_size < 5 || subset_size % 2 == 0)
      fail(ErrorCode::InvalidArgument, "subset_size must be odd and >= 5");
    if (subset_step < 1) fail(ErrorCode::InvalidArgument, "subset_step must be >= 1");
    if (max_iterations < 1) fail(ErrorCode::InvalidArgument, "max_iterations must be >= 1");
    if (threads < 1) fail(ErrorCode::InvalidArgument, "threads must be >= 1");
    if (!(max_displacement >= 0)) fail(ErrorCode::InvalidArgument, "max_displacement must be >= 0");
    if (!(update_precision > 0)) fail(ErrorCode::InvalidArgument, "update_precision must be > 0");
    if (!(zncc_accept_threshold >= -1 && zncc_accept_threshold <= 1))
      fail(ErrorCode::InvalidArgument, "zncc_accept_threshold must lie in [-1, 1]");
    if (!(mad_k > 0)) fail(ErrorCode::InvalidArgument, "mad_k must be > 0");
  }
};

inline std::string_view to_string(CostKind c) {
  switch (c) {
    case CostKind::SSD: return "SSD";
    case CostKind::NSSD: return "NSSD";
    case CostKind::ZNSSD: return "ZNSSD";
  }
  return "?";
}

inline std::string_view to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::RIGID: return "RIGID";
    case ShapeKind::AFFINE: return "AFFINE";
    case ShapeKind::QUADRATIC: return "QUADRATIC";
  }
  return "?";
}

inline std::string_view to_string(Method m) {
  return m == Method::MULTIWINDOW ? "MULTIWINDOW" : "MULTIWINDOW_RG";
}

namespace detail {
inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}
}  // namespace detail

inline std::optional<CostKind> parse_cost(std::string_view s) {
  const auto u = detail::upper(s);
  if (u == "SSD") return CostKind::SSD;
  if (u == "NSSD") return CostKind::NSSD;
  if (u == "ZNSSD") return CostKind::ZNSSD;
  return std::nullopt;
}

inline std::optional<ShapeKind> parse_shape(std::string_view s) {
  const auto u = detail::upper(s);
  if (u == "RIGID") return ShapeKind::RIGID;
  if (u == "AFFINE") return ShapeKind::AFFINE;
  if (u == "QUADRATIC") return ShapeKind::QUADRATIC;
  return std::nullopt;
}

inline std::optional<Method> parse_method(std::string_view s) {
  const auto u = detail::upper(s);
  if (u == "MULTIWINDOW") return Method::MULTIWINDOW;
  if (u == "MULTIWINDOW_RG") return Method::MULTIWINDOW_RG;
  return std::nullopt;
}

}  // namespace dic
