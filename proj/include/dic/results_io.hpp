#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dic/error.hpp"
#include "dic/rgdic.hpp"
#include "dic/strain.hpp"

namespace dic {

inline constexpr std::uint32_t kResultFormatVersion = 1;
inline constexpr char kBinaryMagic[8] = {'D', 'I', 'C', 'F', '2', 'D', '\0', '\0'};
inline constexpr std::string_view kDicPrefix = "dic_results_";
inline constexpr std::string_view kStrainPrefix = "strain_";
inline constexpr std::string_view kBinaryExtension = ".dic2d";

namespace io_detail {

/// Nine significant digits, "nan" for NaN.
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, end);
}

inline std::string fmt_int(long long v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string label_stem(const std::string& label) {
  return std::filesystem::path(label).stem().string();
}

inline std::string status_legend() {
  std::string s;
  for (int k = 0; k <= static_cast<int>(SubsetStatus::REJECTED); ++k) {
    if (k) s += ' ';
    s += fmt_int(k) + "=" + std::string(to_string(static_cast<SubsetStatus>(k)));
  }
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t b = 0;
  for (;;) {
    const std::size_t e = line.find(delim, b);
    out.push_back(line.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b));
    if (e == std::string_view::npos) break;
    b = e + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct LineReader {
  std::string path;
  std::size_t line_no = 0;

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + what);
  }

  double real(std::string_view tok) const {
    tok = trim(tok);
    if (tok == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (tok == "inf") return std::numeric_limits<double>::infinity();
    if (tok == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) error("bad number '" + std::string(tok) + "'");
    return v;
  }

  long long integer(std::string_view tok) const {
    tok = trim(tok);
    long long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) error("bad integer '" + std::string(tok) + "'");
    return v;
  }
};

/// Reads "# key: value" header lines, the column header, and the data rows.
struct CsvFile {
  std::map<std::string, std::string, std::less<>> meta;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
};

inline CsvFile read_csv(const std::string& path, char delim, std::string_view expected_columns) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  CsvFile f;
  LineReader lr{path};
  std::string line;
  bool have_columns = false;
  const auto expected = split(expected_columns, ',');
  while (std::getline(in, line)) {
    ++lr.line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      sv.remove_prefix(1);
      const auto colon = sv.find(':');
      if (colon != std::string_view::npos)
        f.meta[std::string(trim(sv.substr(0, colon)))] = std::string(trim(sv.substr(colon + 1)));
      continue;
    }
    const auto toks = split(sv, delim);
    if (!have_columns) {
      if (toks.size() != expected.size()) lr.error("unexpected column header");
      for (std::size_t i = 0; i < toks.size(); ++i)
        if (trim(toks[i]) != expected[i]) lr.error("unexpected column '" + std::string(trim(toks[i])) + "'");
      have_columns = true;
      continue;
    }
    if (toks.size() != expected.size())
      lr.error("expected " + std::to_string(expected.size()) + " fields, found " + std::to_string(toks.size()));
    f.rows.emplace_back(toks.begin(), toks.end());
    f.row_lines.push_back(lr.line_no);
  }
  if (!have_columns) fail(ErrorCode::ParseError, path + ": missing column header");
  return f;
}

inline long long meta_int(const CsvFile& f, const std::string& path, std::string_view key) {
  auto it = f.meta.find(key);
  if (it == f.meta.end()) fail(ErrorCode::ParseError, path + ": missing header field '" + std::string(key) + "'");
  LineReader lr{path};
  return lr.integer(it->second);
}

inline std::string meta_str(const CsvFile& f, const std::string& path, std::string_view key) {
  auto it = f.meta.find(key);
  if (it == f.meta.end()) fail(ErrorCode::ParseError, path + ": missing header field '" + std::string(key) + "'");
  return it->second;
}

inline void open_out(std::ofstream& out, const std::filesystem::path& p, bool binary) {
  out.open(p, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + p.string());
}

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& path) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) fail(ErrorCode::TruncatedFile, path + ": file ends early");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline void rebuild_grid(DicResult& r) {
  r.grid.present = Grid2D<std::uint8_t>(r.grid.cols, r.grid.rows, 0);
  r.params.assign(r.size(), ShapeParams(r.shape));
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.grid.present[i] = r.status[i] != SubsetStatus::ABSENT;
    r.params[i] = ShapeParams::translation(r.shape, r.u_x[i], r.u_y[i]);
    if (r.grid.present[i]) ++r.optimizations;
  }
}

inline CostKind cost_from(const std::string& s, const std::string& path) {
  auto c = parse_cost(s);
  if (!c) fail(ErrorCode::ParseError, path + ": unknown cost '" + s + "'");
  return *c;
}

inline ShapeKind shape_from(const std::string& s, const std::string& path) {
  auto c = parse_shape(s);
  if (!c) fail(ErrorCode::ParseError, path + ": unknown shape '" + s + "'");
  return *c;
}

}  // namespace io_detail

inline std::filesystem::path dic_csv_path(const std::filesystem::path& dir, const std::string& label) {
  return dir / (std::string(kDicPrefix) + io_detail::label_stem(label) + ".csv");
}

inline std::filesystem::path dic_binary_path(const std::filesystem::path& dir, const std::string& label) {
  return dir / (std::string(kDicPrefix) + io_detail::label_stem(label) + std::string(kBinaryExtension));
}

inline std::filesystem::path strain_csv_path(const std::filesystem::path& dir, const std::string& label) {
  return dir / (std::string(kStrainPrefix) + io_detail::label_stem(label) + ".csv");
}

inline std::filesystem::path write_dic_csv(const DicResult& r, const std::filesystem::path& dir, char delim = ',') {
  using namespace io_detail;
  const auto path = dic_csv_path(dir, r.image_label);
  std::ofstream out;
  open_out(out, path, false);
  const SubsetGrid& g = r.grid;
  out << "# dic_results\n"
      << "# format_version: " << kResultFormatVersion << '\n'
      << "# image_label: " << r.image_label << '\n'
      << "# image_width: " << r.image_width << '\n'
      << "# image_height: " << r.image_height << '\n'
      << "# subset_size: " << g.subset_size << '\n'
      << "# subset_step: " << g.subset_step << '\n'
      << "# cost: " << to_string(r.cost) << '\n'
      << "# shape: " << to_string(r.shape) << '\n'
      << "# grid_cols: " << g.cols << '\n'
      << "# grid_rows: " << g.rows << '\n'
      << "# grid_x0: " << g.x0 << '\n'
      << "# grid_y0: " << g.y0 << '\n'
      << "# status: " << status_legend() << '\n';
  const char* cols[] = {"x", "y", "u_x", "u_y", "zncc", "iterations", "status"};
  for (int k = 0; k < 7; ++k) out << (k ? std::string(1, delim) : "") << cols[k];
  out << '\n';
  std::string line;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const Point p = g.center(i);
    line.clear();
    line += fmt_int(p.x);
    line += delim;
    line += fmt_int(p.y);
    line += delim;
    line += fmt_real(r.u_x[i]);
    line += delim;
    line += fmt_real(r.u_y[i]);
    line += delim;
    line += fmt_real(r.zncc[i]);
    line += delim;
    line += fmt_int(r.iterations[i]);
    line += delim;
    line += fmt_int(static_cast<int>(r.status[i]));
    line += '\n';
    out << line;
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
  return path;
}

inline DicResult read_dic_csv(const std::string& path, char delim = ',') {
  using namespace io_detail;
  const CsvFile f = read_csv(path, delim, "x,y,u_x,u_y,zncc,iterations,status");
  if (meta_int(f, path, "format_version") != kResultFormatVersion)
    fail(ErrorCode::VersionMismatch, path + ": unsupported format_version");
  DicResult r;
  r.image_label = meta_str(f, path, "image_label");
  r.image_width = static_cast<int>(meta_int(f, path, "image_width"));
  r.image_height = static_cast<int>(meta_int(f, path, "image_height"));
  r.cost = cost_from(meta_str(f, path, "cost"), path);
  r.shape = shape_from(meta_str(f, path, "shape"), path);
  SubsetGrid& g = r.grid;
  g.subset_size = static_cast<int>(meta_int(f, path, "subset_size"));
  g.subset_step = static_cast<int>(meta_int(f, path, "subset_step"));
  g.cols = static_cast<int>(meta_int(f, path, "grid_cols"));
  g.rows = static_cast<int>(meta_int(f, path, "grid_rows"));
  g.x0 = static_cast<int>(meta_int(f, path, "grid_x0"));
  g.y0 = static_cast<int>(meta_int(f, path, "grid_y0"));
  if (g.cols < 0 || g.rows < 0 || g.subset_step < 1) fail(ErrorCode::ParseError, path + ": bad grid header");
  if (f.rows.size() != g.size())
    fail(ErrorCode::ParseError, path + ": expected " + std::to_string(g.size()) + " rows, found " +
                                    std::to_string(f.rows.size()));
  const std::size_t n = g.size();
  r.u_x.resize(n);
  r.u_y.resize(n);
  r.zncc.resize(n);
  r.iterations.resize(n);
  r.status.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    LineReader lr{path, f.row_lines[i]};
    const auto& t = f.rows[i];
    const Point p = g.center(i);
    if (lr.integer(t[0]) != p.x || lr.integer(t[1]) != p.y) lr.error("row coordinates do not match the grid");
    r.u_x[i] = lr.real(t[2]);
    r.u_y[i] = lr.real(t[3]);
    r.zncc[i] = lr.real(t[4]);
    r.iterations[i] = static_cast<std::int32_t>(lr.integer(t[5]));
    const long long s = lr.integer(t[6]);
    if (s < 0 || s > static_cast<int>(SubsetStatus::REJECTED)) lr.error("unknown status code");
    r.status[i] = static_cast<SubsetStatus>(s);
  }
  rebuild_grid(r);
  return r;
}

inline std::filesystem::path write_dic_binary(const DicResult& r, const std::filesystem::path& dir) {
  using namespace io_detail;
  const auto path = dic_binary_path(dir, r.image_label);
  std::ofstream out;
  open_out(out, path, true);
  const SubsetGrid& g = r.grid;
  out.write(kBinaryMagic, 8);
  put_le<std::uint32_t>(out, kResultFormatVersion);
  for (std::int32_t v : {r.image_width, r.image_height, g.subset_size, g.subset_step, g.x0, g.y0, g.cols, g.rows,
                         static_cast<std::int32_t>(r.cost), static_cast<std::int32_t>(r.shape)})
    put_le<std::int32_t>(out, v);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.image_label.size()));
  out.write(r.image_label.data(), static_cast<std::streamsize>(r.image_label.size()));
  for (const auto* arr : {&r.u_x, &r.u_y, &r.zncc})
    for (double v : *arr) put_le<double>(out, v);
  for (std::int32_t v : r.iterations) put_le<std::int32_t>(out, v);
  for (SubsetStatus s : r.status) put_le<std::int32_t>(out, static_cast<std::int32_t>(s));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
  return path;
}

inline DicResult read_dic_binary(const std::string& path) {
  using namespace io_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8)) fail(ErrorCode::TruncatedFile, path + ": file ends early");
  if (std::memcmp(magic, kBinaryMagic, 8) != 0) fail(ErrorCode::BadMagic, path + ": not a DIC result file");
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kResultFormatVersion)
    fail(ErrorCode::VersionMismatch, path + ": format version " + std::to_string(version));
  DicResult r;
  SubsetGrid& g = r.grid;
  r.image_width = get_le<std::int32_t>(in, path);
  r.image_height = get_le<std::int32_t>(in, path);
  g.subset_size = get_le<std::int32_t>(in, path);
  g.subset_step = get_le<std::int32_t>(in, path);
  g.x0 = get_le<std::int32_t>(in, path);
  g.y0 = get_le<std::int32_t>(in, path);
  g.cols = get_le<std::int32_t>(in, path);
  g.rows = get_le<std::int32_t>(in, path);
  const auto cost = get_le<std::int32_t>(in, path);
  const auto shape = get_le<std::int32_t>(in, path);
  if (cost < 0 || cost > 2 || shape < 0 || shape > 2 || g.cols < 0 || g.rows < 0)
    fail(ErrorCode::ParseError, path + ": corrupt header");
  r.cost = static_cast<CostKind>(cost);
  r.shape = static_cast<ShapeKind>(shape);
  const auto label_len = get_le<std::uint32_t>(in, path);
  r.image_label.resize(label_len);
  if (label_len && !in.read(r.image_label.data(), label_len))
    fail(ErrorCode::TruncatedFile, path + ": file ends early");
  const std::size_t n = g.size();
  for (auto* arr : {&r.u_x, &r.u_y, &r.zncc}) {
    arr->resize(n);
    for (auto& v : *arr) v = get_le<double>(in, path);
  }
  r.iterations.resize(n);
  for (auto& v : r.iterations) v = get_le<std::int32_t>(in, path);
  r.status.resize(n);
  for (auto& s : r.status) {
    const auto v = get_le<std::int32_t>(in, path);
    if (v < 0 || v > static_cast<int>(SubsetStatus::REJECTED)) fail(ErrorCode::ParseError, path + ": bad status");
    s = static_cast<SubsetStatus>(v);
  }
  rebuild_grid(r);
  return r;
}

/// Files matching a shell-style pattern, sorted lexicographically. The wildcard
/// applies to the final path component only.
inline std::vector<std::string> glob_files(const std::string& pattern) {
  namespace fs = std::filesystem;
  const fs::path p(pattern);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  const std::string name = p.filename().string();
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (!e.is_regular_file(ec)) continue;
    const std::string fn = e.path().filename().string();
    if (fnmatch(name.c_str(), fn.c_str(), 0) == 0)
      out.push_back(p.has_parent_path() ? (dir / fn).string() : fn);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Results of several images on a shared grid; fields indexed [image][y][x].
struct DicSeries {
  std::vector<std::string> files;
  std::vector<DicResult> results;
  std::vector<double> ss_x, ss_y;

  std::size_t images() const noexcept { return results.size(); }
  double u_x(std::size_t img, int row, int col) const { return results[img].u_x[results[img].grid.index(col, row)]; }
  double u_y(std::size_t img, int row, int col) const { return results[img].u_y[results[img].grid.index(col, row)]; }
  double zncc(std::size_t img, int row, int col) const { return results[img].zncc[results[img].grid.index(col, row)]; }
};

inline DicSeries import_2d(const std::string& pattern, bool binary = false, char delim = ',') {
  DicSeries s;
  for (auto& f : glob_files(pattern)) {
    const auto ext = std::filesystem::path(f).extension().string();
    if (binary ? ext == kBinaryExtension : ext == ".csv") s.files.push_back(f);
  }
  if (s.files.empty()) fail(ErrorCode::NoMatch, "no result files match '" + pattern + "'");
  for (const auto& f : s.files) s.results.push_back(binary ? read_dic_binary(f) : read_dic_csv(f, delim));
  const SubsetGrid& g = s.results.front().grid;
  for (const auto& r : s.results)
    if (r.grid.cols != g.cols || r.grid.rows != g.rows || r.grid.x0 != g.x0 || r.grid.y0 != g.y0 ||
        r.grid.subset_step != g.subset_step)
      fail(ErrorCode::ParseError, "result files do not share one grid");
  for (int c = 0; c < g.cols; ++c) s.ss_x.push_back(g.center(c, 0).x);
  for (int r = 0; r < g.rows; ++r) s.ss_y.push_back(g.center(0, r).y);
  return s;
}

inline std::filesystem::path write_strain_csv(const StrainField& f, const std::filesystem::path& dir,
                                              char delim = ',') {
  using namespace io_detail;
  const auto path = strain_csv_path(dir, f.image_label);
  std::ofstream out;
  open_out(out, path, false);
  out << "# strain_results\n"
      << "# format_version: " << kResultFormatVersion << '\n'
      << "# image_label: " << f.image_label << '\n'
      << "# window_points: " << f.window_points << '\n'
      << "# basis: " << to_string(f.basis) << '\n'
      << "# formulation: " << to_string(f.formulation) << '\n'
      << "# subset_size: " << f.subset_size << '\n'
      << "# subset_step: " << f.subset_step << '\n'
      << "# vsg: " << fmt_real(f.vsg) << '\n'
      << "# grid_cols: " << f.cols << '\n'
      << "# grid_rows: " << f.rows << '\n';
  const char* cols[] = {"x", "y", "Fxx", "Fxy", "Fyx", "Fyy", "exx", "eyy", "exy", "valid"};
  for (int k = 0; k < 10; ++k) out << (k ? std::string(1, delim) : "") << cols[k];
  out << '\n';
  std::string line;
  for (std::size_t i = 0; i < f.size(); ++i) {
    line.clear();
    for (const auto* v : {&f.x, &f.y, &f.Fxx, &f.Fxy, &f.Fyx, &f.Fyy, &f.exx, &f.eyy, &f.exy}) {
      line += fmt_real((*v)[i]);
      line += delim;
    }
    line += f.valid[i] ? '1' : '0';
    line += '\n';
    out << line;
  }
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
  return path;
}

inline StrainField read_strain_csv(const std::string& path, char delim = ',') {
  using namespace io_detail;
  const CsvFile csv = read_csv(path, delim, "x,y,Fxx,Fxy,Fyx,Fyy,exx,eyy,exy,valid");
  if (meta_int(csv, path, "format_version") != kResultFormatVersion)
    fail(ErrorCode::VersionMismatch, path + ": unsupported format_version");
  StrainField f;
  f.image_label = meta_str(csv, path, "image_label");
  f.window_points = static_cast<int>(meta_int(csv, path, "window_points"));
  const auto basis = parse_basis(meta_str(csv, path, "basis"));
  const auto form = parse_formulation(meta_str(csv, path, "formulation"));
  if (!basis || !form) fail(ErrorCode::ParseError, path + ": unknown basis or formulation");
  f.basis = *basis;
  f.formulation = *form;
  f.subset_size = static_cast<int>(meta_int(csv, path, "subset_size"));
  f.subset_step = static_cast<int>(meta_int(csv, path, "subset_step"));
  f.vsg = LineReader{path}.real(meta_str(csv, path, "vsg"));
  const int cols = static_cast<int>(meta_int(csv, path, "grid_cols"));
  const int rows = static_cast<int>(meta_int(csv, path, "grid_rows"));
  if (cols < 0 || rows < 0) fail(ErrorCode::ParseError, path + ": bad grid header");
  f.allocate(cols, rows);
  if (csv.rows.size() != f.size())
    fail(ErrorCode::ParseError, path + ": expected " + std::to_string(f.size()) + " rows, found " +
                                    std::to_string(csv.rows.size()));
  for (std::size_t i = 0; i < f.size(); ++i) {
    LineReader lr{path, csv.row_lines[i]};
    const auto& t = csv.rows[i];
    std::size_t k = 0;
    for (auto* v : {&f.x, &f.y, &f.Fxx, &f.Fxy, &f.Fyx, &f.Fyy, &f.exx, &f.eyy, &f.exy}) (*v)[i] = lr.real(t[k++]);
    const long long valid = lr.integer(t[9]);
    if (valid != 0 && valid != 1) lr.error("valid must be 0 or 1");
    f.valid[i] = static_cast<std::uint8_t>(valid);
  }
  return f;
}

/// Strain fields of several images; components indexed [image][y][x].
struct StrainSeries {
  std::vector<std::string> files;
  std::vector<StrainField> fields;
  std::vector<double> window_x, window_y;

  double eps_xx(std::size_t img, int row, int col) const { return fields[img].exx[fields[img].index(col, row)]; }
  double eps_yy(std::size_t img, int row, int col) const { return fields[img].eyy[fields[img].index(col, row)]; }
  double eps_xy(std::size_t img, int row, int col) const { return fields[img].exy[fields[img].index(col, row)]; }
};

inline StrainSeries import_strain(const std::string& pattern, char delim = ',') {
  StrainSeries s;
  for (auto& f : glob_files(pattern))
    if (std::filesystem::path(f).extension() == ".csv") s.files.push_back(f);
  if (s.files.empty()) fail(ErrorCode::NoMatch, "no strain files match '" + pattern + "'");
  for (const auto& f : s.files) s.fields.push_back(read_strain_csv(f, delim));
  const StrainField& f0 = s.fields.front();
  for (const auto& f : s.fields)
    if (f.cols != f0.cols || f.rows != f0.rows) fail(ErrorCode::ParseError, "strain files do not share one grid");
  for (int c = 0; c < f0.cols; ++c) s.window_x.push_back(f0.x[f0.index(c, 0)]);
  for (int r = 0; r < f0.rows; ++r) s.window_y.push_back(f0.y[f0.index(0, r)]);
  return s;
}

}  // namespace dic
