#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dic/error.hpp"
#include "dic/image.hpp"

namespace dic {

/// Boolean region-of-interest mask with the reference image's dimensions.
struct RoiMask {
  Grid2D<std::uint8_t> mask;

  RoiMask() = default;
  RoiMask(int width, int height, bool fill = false) : mask(width, height, fill ? 1 : 0) {}

  int width() const noexcept { return mask.cols(); }
  int height() const noexcept { return mask.rows(); }
  bool inside(int x, int y) const { return mask(x, y) != 0; }
  void set(int x, int y, bool v) { mask(x, y) = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(mask.data().begin(), mask.data().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
  }
};

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

inline RoiMask roi_exclude_border(int width, int height, int border) {
  if (border < 0 || 2L * border >= std::min(width, height))
    fail(ErrorCode::BorderTooLarge,
         "border " + std::to_string(border) + " leaves no interior in " + std::to_string(width) + "x" +
             std::to_string(height));
  RoiMask roi(width, height, false);
  for (int y = border; y < height - border; ++y)
    for (int x = border; x < width - border; ++x) roi.set(x, y, true);
  return roi;
}

/// Union of rectangles, clipped to the image.
inline RoiMask roi_from_rects(int width, int height, const std::vector<Rect>& rects) {
  RoiMask roi(width, height, false);
  for (const Rect& r : rects) {
    if (r.width <= 0 || r.height <= 0) fail(ErrorCode::InvalidArgument, "ROI rectangle must have positive size");
    for (int y = std::max(0, r.y); y < std::min(height, r.y + r.height); ++y)
      for (int x = std::max(0, r.x); x < std::min(width, r.x + r.width); ++x) roi.set(x, y, true);
  }
  return roi;
}

/// Nonzero pixels of a mask image are inside the ROI.
inline RoiMask roi_from_mask_image(const GrayImage& img) {
  RoiMask roi(img.width, img.height, false);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) roi.set(x, y, img.at(x, y) != 0.0);
  return roi;
}

}  // namespace dic
