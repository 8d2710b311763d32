#pragma once

#include <climits>
#include <cstdint>
#include <vector>

#include "dic/error.hpp"
#include "dic/image.hpp"
#include "dic/roi.hpp"

namespace dic {

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

/// Regular lattice of subset centers. Points whose footprint leaves the ROI keep
/// their (row, col) address but are flagged absent.
struct SubsetGrid {
  int subset_size = 0;
  int subset_step = 1;
  int x0 = 0;
  int y0 = 0;
  int cols = 0;
  int rows = 0;
  Grid2D<std::uint8_t> present;

  int half() const noexcept { return (subset_size - 1) / 2; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(cols) * rows; }
  std::size_t index(int col, int row) const noexcept { return static_cast<std::size_t>(row) * cols + col; }
  int col_of(std::size_t idx) const noexcept { return static_cast<int>(idx % cols); }
  int row_of(std::size_t idx) const noexcept { return static_cast<int>(idx / cols); }
  Point center(int col, int row) const noexcept { return {x0 + col * subset_step, y0 + row * subset_step}; }
  Point center(std::size_t idx) const noexcept { return center(col_of(idx), row_of(idx)); }
  bool is_present(std::size_t idx) const { return present[idx] != 0; }

  std::size_t present_count() const {
    std::size_t n = 0;
    for (auto v : present.data()) n += v != 0;
    return n;
  }

  /// Grid index of the center nearest to a pixel coordinate.
  std::size_t nearest(double x, double y) const {
    auto clampi = [](long v, int hi) { return static_cast<int>(std::clamp<long>(v, 0, hi)); };
    const int c = clampi(std::lround((x - x0) / subset_step), cols - 1);
    const int r = clampi(std::lround((y - y0) / subset_step), rows - 1);
    return index(c, r);
  }
};

inline SubsetGrid build_subset_grid(const RoiMask& roi, int subset_size, int subset_step) {
  if (subset_size < 1 || subset_size % 2 == 0)
    fail(ErrorCode::InvalidArgument, "subset_size must be odd");
  if (subset_step < 1) fail(ErrorCode::InvalidArgument, "subset_step must be >= 1");

  const int w = roi.width(), h = roi.height();
  int xmin = INT_MAX, ymin = INT_MAX, xmax = -1, ymax = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (roi.inside(x, y)) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }

  SubsetGrid g;
  g.subset_size = subset_size;
  g.subset_step = subset_step;
  const int half = g.half();
  if (xmax < 0 || xmax - xmin + 1 < subset_size || ymax - ymin + 1 < subset_size)
    fail(ErrorCode::EmptyGrid, "no subset footprint fits inside the ROI");
  g.x0 = xmin + half;
  g.y0 = ymin + half;
  g.cols = (xmax - half - g.x0) / subset_step + 1;
  g.rows = (ymax - half - g.y0) / subset_step + 1;

  // Row-wise prefix counts keep memory proportional to the image width.
  g.present = Grid2D<std::uint8_t>(g.cols, g.rows, 1);
  std::vector<int> prefix(static_cast<std::size_t>(w) + 1, 0);
  const int ylast = g.y0 + (g.rows - 1) * subset_step + half;
  for (int y = g.y0 - half; y <= ylast; ++y) {
    for (int x = 0; x < w; ++x) prefix[x + 1] = prefix[x] + (roi.inside(x, y) ? 1 : 0);
    const int rlo = std::max(0, (y - half - g.y0 + subset_step - 1) / subset_step);
    const int rhi = std::min(g.rows - 1, (y + half - g.y0) / subset_step);
    for (int r = rlo; r <= rhi; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const int cx = g.x0 + c * subset_step;
        if (prefix[cx + half + 1] - prefix[cx - half] != subset_size) g.present(c, r) = 0;
      }
  }
  bool any = false;
  for (auto v : g.present.data()) any = any || v != 0;
  if (!any) fail(ErrorCode::EmptyGrid, "no subset footprint fits inside the ROI");
  return g;
}

}  // namespace dic
