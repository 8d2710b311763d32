#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <tiffio.h>

#include "dic/error.hpp"

namespace dic {

/// Row-major 2D array. Used for images, masks and per-grid-point fields.
template <typename T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int cols, int rows, T fill = T{})
      : cols_(cols), rows_(rows), data_(static_cast<std::size_t>(cols) * rows, fill) {}

  int cols() const noexcept { return cols_; }
  int rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int col, int row) { return data_[index(col, row)]; }
  const T& operator()(int col, int row) const { return data_[index(col, row)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int col, int row) const noexcept {
    return static_cast<std::size_t>(row) * cols_ + col;
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }
  std::span<const T> row_span(int row) const {
    return {data_.data() + static_cast<std::size_t>(row) * cols_, static_cast<std::size_t>(cols_)};
  }

  bool operator==(const Grid2D&) const = default;

 private:
  int cols_ = 0;
  int rows_ = 0;
  std::vector<T> data_;
};

/// Gray-level image. Intensities are stored widened to double without rescaling.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;
  int source_depth = 8;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0, int depth = 8)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill), source_depth(depth) {
    if (w < 1 || h < 1) fail(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  GrayImage(int w, int h, std::vector<double> px, int depth)
      : width(w), height(h), pixels(std::move(px)), source_depth(depth) {
    if (w < 1 || h < 1 || pixels.size() != static_cast<std::size_t>(w) * h)
      fail(ErrorCode::InvalidArgument, "pixel buffer does not match image dimensions");
  }

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const double* row(int y) const { return pixels.data() + static_cast<std::size_t>(y) * width; }
  double max_value() const { return source_depth == 16 ? 65535.0 : 255.0; }

  bool same_dims(const GrayImage& o) const { return width == o.width && height == o.height; }
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline long read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  long v = -1;
  if (!(in >> v) || v < 0) fail(ErrorCode::IoError, "malformed PGM header in " + path);
  return v;
}

inline GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '2' && magic[1] != '5'))
    fail(ErrorCode::UnsupportedFormat, path.string() + " is not a grayscale PGM (P2/P5)");
  const bool ascii = magic[1] == '2';
  const long w = read_pnm_int(in, path.string());
  const long h = read_pnm_int(in, path.string());
  const long maxval = read_pnm_int(in, path.string());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    fail(ErrorCode::IoError, "invalid PGM header in " + path.string());
  const int depth = maxval > 255 ? 16 : 8;
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  if (ascii) {
    for (auto& p : px) {
      long v;
      if (!(in >> v)) fail(ErrorCode::IoError, "truncated PGM data in " + path.string());
      p = static_cast<double>(v);
    }
  } else {
    in.get();  // single whitespace after maxval
    const std::size_t bpp = depth == 16 ? 2 : 1;
    std::vector<unsigned char> raw(px.size() * bpp);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
      fail(ErrorCode::IoError, "truncated PGM data in " + path.string());
    for (std::size_t i = 0; i < px.size(); ++i)
      px[i] = bpp == 2 ? static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1])
                       : static_cast<double>(raw[i]);
  }
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(px), depth);
}

inline GrayImage load_tiff(const std::filesystem::path& path) {
  TIFFSetWarningHandler(nullptr);
  TIFF* tif = TIFFOpen(path.c_str(), "r");
  if (!tif) fail(ErrorCode::IoError, "cannot open TIFF " + path.string());
  struct Closer {
    TIFF* t;
    ~Closer() { TIFFClose(t); }
  } closer{tif};

  uint32_t w = 0, h = 0;
  uint16_t spp = 1, bps = 8, fmt = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &h);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif, TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(tif, TIFFTAG_SAMPLEFORMAT, &fmt);
  TIFFGetFieldDefaulted(tif, TIFFTAG_PLANARCONFIG, &planar);
  if (spp != 1) fail(ErrorCode::UnsupportedFormat, path.string() + " has more than one channel");
  if (fmt != SAMPLEFORMAT_UINT) fail(ErrorCode::UnsupportedFormat, path.string() + " is not unsigned-integer");
  if (bps != 8 && bps != 16) fail(ErrorCode::UnsupportedFormat, path.string() + ": bit depth must be 8 or 16");
  if (w < 1 || h < 1) fail(ErrorCode::IoError, "empty TIFF " + path.string());

  std::vector<double> px(static_cast<std::size_t>(w) * h);
  std::vector<unsigned char> buf(TIFFScanlineSize(tif));
  for (uint32_t y = 0; y < h; ++y) {
    if (TIFFReadScanline(tif, buf.data(), y, 0) < 0)
      fail(ErrorCode::IoError, "failed reading scanline of " + path.string());
    double* dst = px.data() + static_cast<std::size_t>(y) * w;
    if (bps == 8) {
      for (uint32_t x = 0; x < w; ++x) dst[x] = buf[x];
    } else {
      const auto* s = reinterpret_cast<const uint16_t*>(buf.data());
      for (uint32_t x = 0; x < w; ++x) dst[x] = s[x];
    }
  }
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(px), bps);
}

inline bool has_prefix(const std::filesystem::path& path, std::string_view bytes) {
  std::ifstream in(path, std::ios::binary);
  std::string head(bytes.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  return in.gcount() == static_cast<std::streamsize>(bytes.size()) && head == bytes;
}

}  // namespace detail

/// Loads an 8/16-bit PGM (P2/P5) or single-channel integer TIFF.
inline GrayImage load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::IoError, "no such file: " + path.string());
  if (detail::has_prefix(path, "P2") || detail::has_prefix(path, "P5")) return detail::load_pgm(path);
  if (detail::has_prefix(path, "II*\0") || detail::has_prefix(path, "MM\0*"))
    return detail::load_tiff(path);
  fail(ErrorCode::UnsupportedFormat, path.string() + " is neither PGM nor TIFF");
}

/// Writes a binary PGM (P5). Values are rounded and clamped to the image's bit depth.
inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  const int maxval = img.source_depth == 16 ? 65535 : 255;
  out << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(img.pixels.size() * (maxval > 255 ? 2 : 1));
  for (double v : img.pixels) {
    const auto q = static_cast<unsigned>(std::clamp(std::lround(v), 0L, static_cast<long>(maxval)));
    if (maxval > 255) raw.push_back(static_cast<unsigned char>(q >> 8));
    raw.push_back(static_cast<unsigned char>(q & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace dic
