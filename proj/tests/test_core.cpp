#include <tiffio.h>

#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "dic/image.hpp"
#include "dic/params.hpp"
#include "dic/roi.hpp"
#include "dic/subset_grid.hpp"
#include "test_util.hpp"

using namespace dic;
using dic::test::TempDir;

namespace {

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dic::Error thrown";
  return ErrorCode::IoError;
}

void write_tiff(const std::string& path, int w, int h, int bps, int spp, int fmt, int compression,
                const std::vector<std::uint32_t>& values) {
  TIFF* t = TIFFOpen(path.c_str(), "w");
  ASSERT_NE(t, nullptr);
  TIFFSetField(t, TIFFTAG_IMAGEWIDTH, w);
  TIFFSetField(t, TIFFTAG_IMAGELENGTH, h);
  TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, bps);
  TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, spp);
  TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, fmt);
  TIFFSetField(t, TIFFTAG_COMPRESSION, compression);
  TIFFSetField(t, TIFFTAG_PHOTOMETRIC, spp == 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
  TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, h);
  const std::size_t bytes = static_cast<std::size_t>(bps / 8) * spp * w;
  std::vector<unsigned char> row(bytes);
  for (int y = 0; y < h; ++y) {
    for (int i = 0; i < w * spp; ++i) {
      const std::uint32_t v = values[static_cast<std::size_t>(y) * w * spp + i];
      if (bps == 8) row[i] = static_cast<unsigned char>(v);
      else if (bps == 16) reinterpret_cast<std::uint16_t*>(row.data())[i] = static_cast<std::uint16_t>(v);
      else reinterpret_cast<float*>(row.data())[i] = static_cast<float>(v);
    }
    TIFFWriteScanline(t, row.data(), y, 0);
  }
  TIFFClose(t);
}

/// Brute force: does the footprint centered at (cx, cy) lie inside the image and the ROI?
bool footprint_inside(const RoiMask& roi, int cx, int cy, int half) {
  for (int y = cy - half; y <= cy + half; ++y)
    for (int x = cx - half; x <= cx + half; ++x) {
      if (x < 0 || y < 0 || x >= roi.width() || y >= roi.height()) return false;
      if (!roi.inside(x, y)) return false;
    }
  return true;
}

}  // namespace

TEST(Error, MessageCarriesCode) {
  try {
    fail(ErrorCode::SeedFailed, "boom");
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeedFailed);
    EXPECT_NE(std::string(e.what()).find("SeedFailed"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(LoadImage, AsciiPgm3x2) {
  TempDir d;
  write_file(d / "a.pgm", "P2\n# comment\n3 2\n255\n0 1 2\n3 4 5\n");
  const GrayImage img = load_image(d / "a.pgm");
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.source_depth, 8);
  EXPECT_EQ(img.pixels, (std::vector<double>{0, 1, 2, 3, 4, 5}));
}

TEST(LoadImage, BinaryPgm3x2) {
  TempDir d;
  write_file(d / "b.pgm", std::string("P5\n3 2\n255\n") + std::string("\x00\x01\x02\x03\x04\x05", 6));
  const GrayImage img = load_image(d / "b.pgm");
  EXPECT_EQ(img.pixels, (std::vector<double>{0, 1, 2, 3, 4, 5}));
}

TEST(LoadImage, SixteenBitPgmIsNotRescaled) {
  TempDir d;
  write_file(d / "c.pgm", std::string("P5\n2 1\n65535\n") + std::string("\xFF\xFF\x01\x02", 4));
  const GrayImage img = load_image(d / "c.pgm");
  EXPECT_EQ(img.source_depth, 16);
  EXPECT_EQ(img.pixels[0], 65535.0);
  EXPECT_EQ(img.pixels[1], 258.0);
}

TEST(LoadImage, PngIsUnsupported) {
  TempDir d;
  write_file(d / "x.png", std::string("\x89PNG\r\n\x1a\n", 8) + std::string(32, '\0'));
  EXPECT_EQ(code_of([&] { load_image(d / "x.png"); }), ErrorCode::UnsupportedFormat);
}

TEST(LoadImage, ColorPpmIsUnsupported) {
  TempDir d;
  write_file(d / "x.ppm", "P6\n1 1\n255\nabc");
  EXPECT_EQ(code_of([&] { load_image(d / "x.ppm"); }), ErrorCode::UnsupportedFormat);
}

TEST(LoadImage, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_image("/nonexistent/definitely/not/here.pgm"); }), ErrorCode::IoError);
}

TEST(LoadImage, TruncatedPgmIsIoError) {
  TempDir d;
  write_file(d / "t.pgm", "P5\n4 4\n255\nab");
  EXPECT_EQ(code_of([&] { load_image(d / "t.pgm"); }), ErrorCode::IoError);
}

TEST(LoadImage, GrayTiff8And16Bit) {
  TempDir d;
  std::vector<std::uint32_t> v8 = {0, 10, 20, 30, 40, 255};
  write_tiff(d / "a.tif", 3, 2, 8, 1, SAMPLEFORMAT_UINT, COMPRESSION_NONE, v8);
  GrayImage a = load_image(d / "a.tif");
  EXPECT_EQ(a.source_depth, 8);
  EXPECT_EQ(a.pixels, (std::vector<double>{0, 10, 20, 30, 40, 255}));

  std::vector<std::uint32_t> v16 = {0, 1000, 65535, 7, 300, 12345};
  write_tiff(d / "b.tif", 3, 2, 16, 1, SAMPLEFORMAT_UINT, COMPRESSION_ADOBE_DEFLATE, v16);
  GrayImage b = load_image(d / "b.tif");
  EXPECT_EQ(b.source_depth, 16);
  EXPECT_EQ(b.pixels, (std::vector<double>{0, 1000, 65535, 7, 300, 12345}));
}

TEST(LoadImage, RgbAndFloatTiffAreUnsupported) {
  TempDir d;
  write_tiff(d / "rgb.tif", 2, 2, 8, 3, SAMPLEFORMAT_UINT, COMPRESSION_NONE, std::vector<std::uint32_t>(12, 5));
  EXPECT_EQ(code_of([&] { load_image(d / "rgb.tif"); }), ErrorCode::UnsupportedFormat);
  write_tiff(d / "f.tif", 2, 2, 32, 1, SAMPLEFORMAT_IEEEFP, COMPRESSION_NONE, std::vector<std::uint32_t>(4, 5));
  EXPECT_EQ(code_of([&] { load_image(d / "f.tif"); }), ErrorCode::UnsupportedFormat);
}

TEST(LoadImage, PgmWriteReadIsLossless) {
  TempDir d;
  for (int depth : {8, 16}) {
    GrayImage img(17, 9, 0.0, depth);
    std::mt19937 rng(depth);
    std::uniform_int_distribution<int> dist(0, depth == 8 ? 255 : 65535);
    for (auto& p : img.pixels) p = dist(rng);
    write_pgm(img, d / "rt.pgm");
    const GrayImage back = load_image(d / "rt.pgm");
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(back.source_depth, depth);
  }
}

TEST(GrayImage, RejectsBadDimensions) {
  EXPECT_EQ(code_of([] { GrayImage(0, 5); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { GrayImage(2, 2, std::vector<double>(3), 8); }), ErrorCode::InvalidArgument);
}

TEST(Roi, ExcludeBorder10x10) {
  const RoiMask roi = roi_exclude_border(10, 10, 3);
  EXPECT_EQ(roi.count(), 16u);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(roi.inside(x, y), x >= 3 && x < 7 && y >= 3 && y < 7);
}

TEST(Roi, BorderZeroIsFull) {
  const RoiMask roi = roi_exclude_border(13, 7, 0);
  EXPECT_EQ(roi.count(), 13u * 7u);
}

TEST(Roi, LargeBorderExample) {
  const RoiMask roi = roi_exclude_border(32000, 32000, 1000);
  EXPECT_EQ(roi.count(), 30000ull * 30000ull);
  EXPECT_FALSE(roi.inside(999, 5000));
  EXPECT_TRUE(roi.inside(1000, 1000));
  EXPECT_TRUE(roi.inside(30999, 30999));
  EXPECT_FALSE(roi.inside(31000, 30999));
}

TEST(Roi, BorderTooLarge) {
  EXPECT_EQ(code_of([] { roi_exclude_border(10, 20, 5); }), ErrorCode::BorderTooLarge);
  EXPECT_EQ(code_of([] { roi_exclude_border(10, 20, -1); }), ErrorCode::BorderTooLarge);
}

TEST(Roi, FromRectsAndMask) {
  const RoiMask r = roi_from_rects(10, 10, {{0, 0, 2, 2}, {8, 8, 5, 5}});
  EXPECT_EQ(r.count(), 8u);
  GrayImage m(4, 3, 0.0);
  m.at(1, 2) = 255;
  m.at(3, 0) = 1;
  const RoiMask rm = roi_from_mask_image(m);
  EXPECT_EQ(rm.count(), 2u);
  EXPECT_TRUE(rm.inside(1, 2));
}

TEST(SubsetGrid, FullRoi100Size21Step10) {
  const RoiMask roi = roi_exclude_border(100, 100, 0);
  const SubsetGrid g = build_subset_grid(roi, 21, 10);
  // Brute force: every center on the lattice anchored at 10 whose footprint fits.
  std::set<std::pair<int, int>> expected;
  for (int y = 10; y < 100; y += 10)
    for (int x = 10; x < 100; x += 10)
      if (footprint_inside(roi, x, y, 10)) expected.insert({x, y});
  std::set<std::pair<int, int>> got;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.is_present(i)) got.insert({g.center(i).x, g.center(i).y});
  EXPECT_EQ(got, expected);
  EXPECT_EQ(g.cols, 8);
  EXPECT_EQ(g.rows, 8);
  EXPECT_EQ(g.center(0).x, 10);
  EXPECT_EQ(g.center(g.size() - 1).x, 80);
}

TEST(SubsetGrid, HoleMarksOnePointAbsent) {
  RoiMask roi = roi_exclude_border(100, 100, 0);
  const SubsetGrid full = build_subset_grid(roi, 21, 10);
  roi.set(50, 50, false);
  const SubsetGrid g = build_subset_grid(roi, 21, 10);
  EXPECT_EQ(g.cols, full.cols);
  EXPECT_EQ(g.rows, full.rows);
  std::size_t absent = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.is_present(i)) continue;
    ++absent;
    const Point p = g.center(i);
    EXPECT_LE(std::abs(p.x - 50), 10);
    EXPECT_LE(std::abs(p.y - 50), 10);
  }
  // (50, 50) lies in the footprint of the centers at x, y in {40, 50, 60}.
  EXPECT_EQ(absent, 9u);
}

TEST(SubsetGrid, SubsetLargerThanRoiIsEmpty) {
  const RoiMask roi = roi_from_rects(100, 100, {{10, 10, 15, 40}});
  EXPECT_EQ(code_of([&] { build_subset_grid(roi, 21, 5); }), ErrorCode::EmptyGrid);
  EXPECT_EQ(code_of([&] { build_subset_grid(RoiMask(50, 50, false), 5, 5); }), ErrorCode::EmptyGrid);
}

TEST(SubsetGrid, RejectsEvenSizeAndBadStep) {
  const RoiMask roi = roi_exclude_border(50, 50, 0);
  EXPECT_EQ(code_of([&] { build_subset_grid(roi, 20, 5); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { build_subset_grid(roi, 21, 0); }), ErrorCode::InvalidArgument);
}

// Property: presence equals the brute-force footprint check on random masks, and
// no lattice center outside the grid extent could fit.
TEST(SubsetGrid, MatchesBruteForceOnRandomMasks) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int w = 40 + static_cast<int>(rng() % 60), h = 40 + static_cast<int>(rng() % 60);
    std::vector<Rect> rects;
    const int nr = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < nr; ++k)
      rects.push_back({static_cast<int>(rng() % (w / 2)), static_cast<int>(rng() % (h / 2)),
                       15 + static_cast<int>(rng() % (w / 2)), 15 + static_cast<int>(rng() % (h / 2))});
    RoiMask roi = roi_from_rects(w, h, rects);
    for (int k = 0; k < 5; ++k) roi.set(static_cast<int>(rng() % w), static_cast<int>(rng() % h), false);
    const int size = 5 + 2 * static_cast<int>(rng() % 4), step = 1 + static_cast<int>(rng() % 6);
    SubsetGrid g;
    try {
      g = build_subset_grid(roi, size, step);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::EmptyGrid);
      continue;
    }
    const int half = (size - 1) / 2;
    std::size_t present = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Point p = g.center(i);
      EXPECT_EQ(g.is_present(i), footprint_inside(roi, p.x, p.y, half)) << "trial " << trial;
      present += g.is_present(i);
    }
    // Completeness over the whole lattice, including points beyond the grid extent.
    std::size_t lattice = 0;
    for (int y = g.y0 - 10 * step; y < h + half; y += step)
      for (int x = g.x0 - 10 * step; x < w + half; x += step)
        if (footprint_inside(roi, x, y, half)) ++lattice;
    EXPECT_EQ(present, lattice) << "trial " << trial;
  }
}

TEST(SubsetGrid, NearestCenter) {
  const SubsetGrid g = build_subset_grid(roi_exclude_border(100, 100, 0), 21, 10);
  EXPECT_EQ(g.center(g.nearest(44, 56)), (Point{40, 60}));
  EXPECT_EQ(g.center(g.nearest(-100, 1000)), (Point{10, 80}));
}

TEST(DicParams, DefaultsAndValidation) {
  DicParams p;
  EXPECT_EQ(p.subset_size, 31);
  EXPECT_EQ(p.subset_step, 15);
  EXPECT_EQ(p.cost, CostKind::ZNSSD);
  EXPECT_EQ(p.shape, ShapeKind::AFFINE);
  EXPECT_EQ(p.method, Method::MULTIWINDOW_RG);
  EXPECT_EQ(p.max_iterations, 40);
  EXPECT_DOUBLE_EQ(p.update_precision, 0.01);
  EXPECT_DOUBLE_EQ(p.zncc_accept_threshold, 0.70);
  EXPECT_GE(p.threads, 1);
  EXPECT_NO_THROW(p.validate());
  p.subset_size = 4;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidArgument);
  p.subset_size = 3;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidArgument);
  p = DicParams{};
  p.max_displacement = -1;
  EXPECT_EQ(code_of([&] { p.validate(); }), ErrorCode::InvalidArgument);
}

TEST(DicParams, ParseNames) {
  EXPECT_EQ(parse_cost("znssd"), CostKind::ZNSSD);
  EXPECT_EQ(parse_shape("Quadratic"), ShapeKind::QUADRATIC);
  EXPECT_EQ(parse_method("multiwindow"), Method::MULTIWINDOW);
  EXPECT_FALSE(parse_cost("ncc").has_value());
}
