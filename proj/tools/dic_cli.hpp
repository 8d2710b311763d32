#pragma once

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "CLI11.hpp"
#include "dic/dic.hpp"

namespace dic::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kRunError = 3 };

inline int default_threads() {
  if (const char* env = std::getenv("DIC_NUM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 4096) return static_cast<int>(v);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Fully resolved settings of one invocation. Every field has a default.
struct RunConfig {
  std::string subcommand;

  int threads = default_threads();
  std::string out = ".";
  std::string delimiter = ",";
  bool binary = false;
  std::string log_level = "info";

  // dic2d
  std::string ref, def;
  std::string roi_mask;
  int roi_border = -1;
  std::vector<std::string> roi_rects;
  std::string seed;
  int subset_size = 31;
  int subset_step = 15;
  int max_displacement = 32;
  std::string cost = "ZNSSD";
  std::string shape = "AFFINE";
  std::string method = "MULTIWINDOW_RG";
  int max_iterations = 40;
  double precision = 0.01;
  double zncc_threshold = 0.70;
  double mad_k = 3.0;
  bool no_mad = false;
  bool nan_unconverged = false;

  // strain
  std::string data = "dic_results_*";
  int window_points = 5;
  std::string basis = "BILINEAR";
  std::string formulation = "GREEN_LAGRANGE";

  // synth / metrology
  int width = 500;
  int height = 500;
  double diameter = 4.0;
  double density = 0.5;
  long long rng_seed = 1;
  std::string field = "translation";
  double tx = 0.0, ty = 0.0;
  double exx = 0.0, eyy = 0.0, exy = 0.0;
  double edge = 0.0;
  double amplitude = 0.5;
  double period_left = 10.0;
  double period_right = 150.0;
  double noise = 0.0;
  int supersample = 4;
  std::string noisy, star;
  std::vector<int> subset_sizes{11, 15, 19, 21, 25, 31};
  double midline_y = -1.0;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void emit_value(YAML::Emitter& e, const T& v) {
  if constexpr (std::is_same_v<T, double>) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    e << std::string(buf, res.ptr);
  } else if constexpr (std::is_same_v<T, long long>) {
    e << static_cast<long>(v);
  } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>>) {
    e << YAML::Flow << YAML::BeginSeq;
    for (const auto& x : v) e << x;
    e << YAML::EndSeq;
  } else {
    e << v;
  }
}

/// Ties one command-line option to a RunConfig field and the matching YAML key.
struct Binding {
  std::string key;
  CLI::Option* option = nullptr;
  std::function<void(RunConfig& dst, const RunConfig& flags)> from_flags;
  std::function<void(RunConfig& dst, const YAML::Node&)> from_yaml;
  std::function<void(YAML::Emitter&, const RunConfig&)> emit;
};

class Binder {
 public:
  Binder(CLI::App* app, RunConfig& flags) : app_(app), flags_(flags) {}

  template <typename T>
  CLI::Option* opt(const std::string& name, T RunConfig::*field, const std::string& desc) {
    CLI::Option* o = app_->add_option(name, flags_.*field, desc);
    add(name, o, field);
    return o;
  }

  CLI::Option* flag(const std::string& name, bool RunConfig::*field, const std::string& desc) {
    CLI::Option* o = app_->add_flag(name, flags_.*field, desc);
    add(name, o, field);
    return o;
  }

  std::vector<Binding>& bindings() { return bindings_; }

 private:
  template <typename T>
  void add(const std::string& name, CLI::Option* o, T RunConfig::*field) {
    std::string key = name.substr(name.find_first_not_of('-'));
    for (auto& c : key)
      if (c == '-') c = '_';
    Binding b;
    b.key = key;
    b.option = o;
    b.from_flags = [field](RunConfig& dst, const RunConfig& src) { dst.*field = src.*field; };
    b.from_yaml = [field, key](RunConfig& dst, const YAML::Node& n) {
      if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        std::vector<std::string> out;
        for (const auto& item : n) {
          if (item.IsSequence()) {
            std::string s;
            for (const auto& v : item) s += (s.empty() ? "" : ",") + v.as<std::string>();
            out.push_back(s);
          } else {
            out.push_back(item.as<std::string>());
          }
        }
        dst.*field = out;
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (n.IsSequence()) {
          std::string s;
          for (const auto& v : n) s += (s.empty() ? "" : ",") + v.as<std::string>();
          dst.*field = s;
        } else {
          dst.*field = n.as<std::string>();
        }
      } else {
        dst.*field = n.as<T>();
      }
    };
    b.emit = [field](YAML::Emitter& e, const RunConfig& c) { emit_value(e, c.*field); };
    bindings_.push_back(std::move(b));
  }

  CLI::App* app_;
  RunConfig& flags_;
  std::vector<Binding> bindings_;
};

inline void add_common(Binder& b) {
  b.opt("--threads", &RunConfig::threads, "Worker threads (default: DIC_NUM_THREADS or all cores)");
  b.opt("--out", &RunConfig::out, "Output directory");
  b.opt("--delimiter", &RunConfig::delimiter, "CSV delimiter (one character)");
  b.opt("--log-level", &RunConfig::log_level, "quiet | info | debug");
}

inline void add_dic(Binder& b) {
  b.opt("--ref", &RunConfig::ref, "Reference image (PGM or TIFF)");
  b.opt("--def", &RunConfig::def, "Deformed image path or glob");
  b.opt("--roi-mask", &RunConfig::roi_mask, "ROI mask image; nonzero pixels are inside");
  b.opt("--roi-border", &RunConfig::roi_border, "ROI = image minus a border of this many pixels");
  b.opt("--roi-rect", &RunConfig::roi_rects, "ROI rectangle x,y,w,h (repeatable)");
  b.opt("--seed", &RunConfig::seed, "Seed pixel x,y for reliability-guided propagation");
  b.opt("--subset-size", &RunConfig::subset_size, "Subset side length in pixels (odd)");
  b.opt("--subset-step", &RunConfig::subset_step, "Grid spacing in pixels");
  b.opt("--max-displacement", &RunConfig::max_displacement, "Largest expected displacement in pixels");
  b.opt("--cost", &RunConfig::cost, "SSD | NSSD | ZNSSD");
  b.opt("--shape", &RunConfig::shape, "RIGID | AFFINE | QUADRATIC");
  b.opt("--method", &RunConfig::method, "MULTIWINDOW | MULTIWINDOW_RG");
  b.opt("--max-iterations", &RunConfig::max_iterations, "Levenberg-Marquardt iteration cap");
  b.opt("--precision", &RunConfig::precision, "Convergence threshold on the scaled update norm");
  b.opt("--zncc-threshold", &RunConfig::zncc_threshold, "Minimum ZNCC for a converged subset");
  b.opt("--mad-k", &RunConfig::mad_k, "MAD outlier threshold multiplier");
  b.flag("--no-mad", &RunConfig::no_mad, "Disable the MAD outlier filter");
  b.flag("--nan-unconverged", &RunConfig::nan_unconverged, "Write NaN for non-converged points");
  b.flag("--binary", &RunConfig::binary, "Write binary result files");
}

inline void add_strain(Binder& b) {
  b.opt("--data", &RunConfig::data, "Glob of DIC result files");
  b.flag("--binary", &RunConfig::binary, "Read binary result files");
  b.opt("--window-points", &RunConfig::window_points, "Fit window size N (odd, >= 3)");
  b.opt("--basis", &RunConfig::basis, "BILINEAR | BIQUADRATIC");
  b.opt("--formulation", &RunConfig::formulation,
        "GREEN_LAGRANGE | HENCKY | EULER_ALMANSI | BIOT_RIGHT | BIOT_LEFT");
}

inline void add_speckle(Binder& b) {
  b.opt("--width", &RunConfig::width, "Image width");
  b.opt("--height", &RunConfig::height, "Image height");
  b.opt("--diameter", &RunConfig::diameter, "Mean speckle diameter in pixels");
  b.opt("--density", &RunConfig::density, "Speckle area coverage in (0, 1]");
  b.opt("--rng-seed", &RunConfig::rng_seed, "Random seed");
  b.opt("--noise", &RunConfig::noise, "Gaussian noise sigma in gray levels");
  b.opt("--amplitude", &RunConfig::amplitude, "Star displacement amplitude in pixels");
  b.opt("--period-left", &RunConfig::period_left, "Star period at x = 0");
  b.opt("--period-right", &RunConfig::period_right, "Star period at x = width - 1");
  b.opt("--supersample", &RunConfig::supersample, "Sub-samples per pixel axis when warping");
}

inline void add_synth(Binder& b) {
  add_speckle(b);
  b.opt("--field", &RunConfig::field, "translation | strain | radial | star");
  b.opt("--tx", &RunConfig::tx, "Shift x");
  b.opt("--ty", &RunConfig::ty, "Shift y");
  b.opt("--exx", &RunConfig::exx, "Strain xx");
  b.opt("--eyy", &RunConfig::eyy, "Strain yy");
  b.opt("--exy", &RunConfig::exy, "Strain xy");
  b.opt("--edge", &RunConfig::edge, "Radial stretch at the image corners in pixels");
}

inline void add_metrology(Binder& b) {
  add_speckle(b);
  b.opt("--ref", &RunConfig::ref, "Reference image (omit to synthesize a star set)");
  b.opt("--noisy", &RunConfig::noisy, "Reference image with independent noise");
  b.opt("--star", &RunConfig::star, "Star-pattern deformed image");
  b.opt("--subset-sizes", &RunConfig::subset_sizes, "Subset sizes to sweep")->delimiter(',');
  b.opt("--midline-y", &RunConfig::midline_y, "Row of the amplitude profile (default: image middle)");
  b.opt("--roi-border", &RunConfig::roi_border, "ROI border in pixels");
  b.opt("--seed", &RunConfig::seed, "Seed pixel x,y");
  b.opt("--subset-step", &RunConfig::subset_step, "Grid spacing in pixels");
  b.opt("--max-displacement", &RunConfig::max_displacement, "Largest expected displacement in pixels");
  b.opt("--cost", &RunConfig::cost, "SSD | NSSD | ZNSSD");
  b.opt("--shape", &RunConfig::shape, "RIGID | AFFINE | QUADRATIC");
  b.opt("--zncc-threshold", &RunConfig::zncc_threshold, "Minimum ZNCC for a converged subset");
}

inline std::vector<int> parse_ints(const std::string& s, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size() && tok.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError(what + ": expected comma-separated integers, got '" + s + "'");
    }
  }
  return out;
}

inline Point parse_seed(const std::string& s) {
  const auto v = parse_ints(s, "--seed");
  if (v.size() != 2) throw ConfigError("--seed: expected x,y");
  return {v[0], v[1]};
}

inline char delimiter_char(const RunConfig& c) {
  if (c.delimiter.size() != 1) throw ConfigError("--delimiter must be a single character");
  return c.delimiter[0];
}

inline DicParams dic_params(const RunConfig& c) {
  DicParams p;
  p.subset_size = c.subset_size;
  p.subset_step = c.subset_step;
  p.max_displacement = c.max_displacement;
  const auto cost = parse_cost(c.cost);
  const auto shape = parse_shape(c.shape);
  const auto method = parse_method(c.method);
  if (!cost) throw ConfigError("--cost: unknown value '" + c.cost + "'");
  if (!shape) throw ConfigError("--shape: unknown value '" + c.shape + "'");
  if (!method) throw ConfigError("--method: unknown value '" + c.method + "'");
  p.cost = *cost;
  p.shape = *shape;
  p.method = *method;
  p.max_iterations = c.max_iterations;
  p.update_precision = c.precision;
  p.zncc_accept_threshold = c.zncc_threshold;
  p.threads = c.threads;
  p.mad_k = c.mad_k;
  p.mad_enabled = !c.no_mad;
  p.nan_unconverged = c.nan_unconverged;
  try {
    p.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return p;
}

inline RoiMask make_roi(const RunConfig& c, int width, int height) {
  const int sources = !c.roi_mask.empty() + (c.roi_border >= 0) + !c.roi_rects.empty();
  if (sources > 1) throw ConfigError("choose one of --roi-mask, --roi-border, --roi-rect");
  if (!c.roi_mask.empty()) {
    const GrayImage m = load_image(c.roi_mask);
    if (m.width != width || m.height != height) throw ConfigError("--roi-mask size differs from the reference image");
    return roi_from_mask_image(m);
  }
  if (!c.roi_rects.empty()) {
    std::vector<Rect> rects;
    for (const auto& s : c.roi_rects) {
      const auto v = parse_ints(s, "--roi-rect");
      if (v.size() != 4) throw ConfigError("--roi-rect: expected x,y,w,h");
      rects.push_back({v[0], v[1], v[2], v[3]});
    }
    return roi_from_rects(width, height, rects);
  }
  return roi_exclude_border(width, height, std::max(c.roi_border, 0));
}

inline void write_run_config(const RunConfig& c, const std::vector<Binding>& bindings, const std::string& dir) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "version" << YAML::Value << 1;
  e << YAML::Key << "subcommand" << YAML::Value << c.subcommand;
  for (const auto& b : bindings) {
    e << YAML::Key << b.key << YAML::Value;
    b.emit(e, c);
  }
  e << YAML::EndMap;
  std::ofstream out(std::filesystem::path(dir) / "run_config.yaml");
  out << e.c_str() << '\n';
  if (!out) fail(ErrorCode::IoError, "cannot write run_config.yaml in " + dir);
}

class Logger {
 public:
  Logger(std::ostream& out, std::ostream& err, const std::string& level) : out_(out), err_(err) {
    if (level == "quiet") level_ = 0;
    else if (level == "info") level_ = 1;
    else if (level == "debug") level_ = 2;
    else throw ConfigError("--log-level: expected quiet, info or debug");
  }
  bool info() const { return level_ >= 1; }
  bool debug() const { return level_ >= 2; }
  std::ostream& out() { return out_; }

  /// Progress line on stderr, at most one per 100 ms, only on a terminal.
  std::function<void(std::size_t, std::size_t)> progress(const std::string& label) {
    if (!info() || !isatty(STDERR_FILENO)) return {};
    return [this, label](std::size_t done, std::size_t total) {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      if (done != total && now - last_ < std::chrono::milliseconds(100)) return;
      last_ = now;
      err_ << "\r" << label << ": " << done << "/" << total << (done == total ? "\n" : "") << std::flush;
    };
  }

 private:
  std::ostream& out_;
  std::ostream& err_;
  int level_ = 1;
  std::mutex mu_;
  std::chrono::steady_clock::time_point last_{};
};

inline std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

inline int run_dic2d(const RunConfig& c, const std::vector<Binding>& bindings, Logger& log) {
  if (c.ref.empty()) throw ConfigError("--ref is required");
  if (c.def.empty()) throw ConfigError("--def is required");
  const DicParams params = dic_params(c);
  if (params.method == Method::MULTIWINDOW_RG && c.seed.empty())
    throw ConfigError("--seed is required for method MULTIWINDOW_RG");
  const Point seed = c.seed.empty() ? Point{} : parse_seed(c.seed);
  const char delim = delimiter_char(c);

  std::vector<std::string> def_files;
  if (std::filesystem::is_regular_file(c.def)) def_files.push_back(c.def);
  else def_files = glob_files(c.def);
  if (def_files.empty()) throw ConfigError("--def: no files match '" + c.def + "'");

  const GrayImage ref = load_image(c.ref);
  const RoiMask roi = make_roi(c, ref.width, ref.height);
  std::filesystem::create_directories(c.out);
  write_run_config(c, bindings, c.out);

  const SubsetGrid grid = build_subset_grid(roi, params.subset_size, params.subset_step);
  if (params.method == Method::MULTIWINDOW_RG &&
      (seed.x < 0 || seed.y < 0 || seed.x >= ref.width || seed.y >= ref.height || !roi.inside(seed.x, seed.y)))
    throw ConfigError("--seed " + c.seed + " lies outside the ROI");

  for (const auto& f : def_files) {
    const std::string label = std::filesystem::path(f).filename().string();
    const GrayImage def = load_image(f);
    if (!def.same_dims(ref)) throw ConfigError(f + ": size differs from the reference image");
    CorrelateOptions opts;
    opts.progress = log.progress(label);
    const auto t0 = std::chrono::steady_clock::now();
    const DicResult r = correlate_image(ref, def, label, grid, seed, params, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto path = c.binary ? write_dic_binary(r, c.out) : write_dic_csv(r, c.out, delim);
    if (log.info()) {
      const std::size_t pts = grid.present_count(), conv = r.converged_count();
      double zsum = 0;
      for (std::size_t i = 0; i < r.size(); ++i)
        if (r.status[i] == SubsetStatus::CONVERGED) zsum += r.zncc[i];
      log.out() << label << ": points " << pts << ", converged " << fixed(pts ? 100.0 * conv / pts : 0.0, 1)
                << "%, mean zncc " << fixed(conv ? zsum / conv : 0.0, 4) << ", " << fixed(secs, 2) << " s -> "
                << path.string() << '\n';
    }
  }
  return kOk;
}

inline int run_strain(const RunConfig& c, const std::vector<Binding>& bindings, Logger& log) {
  StrainParams sp;
  sp.window_points = c.window_points;
  sp.threads = c.threads;
  const auto basis = parse_basis(c.basis);
  const auto form = parse_formulation(c.formulation);
  if (!basis) throw ConfigError("--basis: unknown value '" + c.basis + "'");
  if (!form) throw ConfigError("--formulation: unknown value '" + c.formulation + "'");
  sp.basis = *basis;
  sp.formulation = *form;
  try {
    sp.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const char delim = delimiter_char(c);
  DicSeries series;
  try {
    series = import_2d(c.data, c.binary, delim);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoMatch) throw ConfigError(std::string("--data: ") + e.what());
    throw;
  }
  std::filesystem::create_directories(c.out);
  write_run_config(c, bindings, c.out);
  for (const auto& r : series.results) {
    const StrainField f = calculate_strain_field(r, sp);
    const auto path = write_strain_csv(f, c.out, delim);
    if (log.info()) {
      std::size_t valid = 0;
      for (auto v : f.valid) valid += v;
      log.out() << r.image_label << ": windows " << f.size() << ", valid " << valid << ", vsg " << f.vsg
                << " px -> " << path.string() << '\n';
    }
  }
  return kOk;
}

inline DeformationFieldSpec synth_spec(const RunConfig& c) {
  DeformationFieldSpec s;
  if (c.field == "translation") s = DeformationFieldSpec::translation(0, 0);
  else if (c.field == "strain") s = DeformationFieldSpec::uniform_strain(c.width, c.height, c.exx, c.eyy, c.exy);
  else if (c.field == "radial") s = DeformationFieldSpec::radial_stretch(c.width, c.height, c.edge);
  else if (c.field == "star") s = star_field(c.width, c.height, c.amplitude, c.period_left, c.period_right);
  else throw ConfigError("--field: expected translation, strain, radial or star");
  s.shift_x = c.tx;
  s.shift_y = c.ty;
  return s;
}

inline int run_synth(const RunConfig& c, const std::vector<Binding>& bindings, Logger& log) {
  const DeformationFieldSpec spec = synth_spec(c);
  std::filesystem::create_directories(c.out);
  write_run_config(c, bindings, c.out);
  const auto seed = static_cast<std::uint64_t>(c.rng_seed);
  const GrayImage clean = gen_speckle(c.width, c.height, c.diameter, c.density, seed);
  const GrayImage def = deform_image(clean, spec, c.supersample);
  const std::filesystem::path out(c.out);
  write_pgm(add_noise(clean, c.noise, seed + 1), out / "ref.pgm");
  write_pgm(add_noise(def, c.noise, seed + 2), out / "def.pgm");
  if (c.noise > 0) write_pgm(add_noise(clean, c.noise, seed + 3), out / "ref_noisy.pgm");
  if (log.info()) log.out() << "wrote " << (out / "ref.pgm").string() << " and " << (out / "def.pgm").string() << '\n';
  return kOk;
}

inline int run_metrology(const RunConfig& c, const std::vector<Binding>& bindings, Logger& log) {
  DicParams params = dic_params(c);
  GrayImage ref, noisy, star;
  if (c.ref.empty()) {
    const auto seed = static_cast<std::uint64_t>(c.rng_seed);
    const GrayImage clean = gen_speckle(c.width, c.height, c.diameter, c.density, seed);
    const auto spec = star_field(c.width, c.height, c.amplitude, c.period_left, c.period_right);
    ref = add_noise(clean, c.noise, seed + 1);
    noisy = add_noise(clean, c.noise, seed + 3);
    star = add_noise(deform_image(clean, spec, c.supersample), c.noise, seed + 2);
  } else {
    if (c.noisy.empty() || c.star.empty()) throw ConfigError("--noisy and --star are required with --ref");
    ref = load_image(c.ref);
    noisy = load_image(c.noisy);
    star = load_image(c.star);
  }
  if (c.subset_sizes.size() < 3) throw ConfigError("--subset-sizes needs at least three entries");
  const RoiMask roi = make_roi(c, ref.width, ref.height);
  const Point seed = c.seed.empty() ? Point{ref.width / 2, ref.height / 2} : parse_seed(c.seed);
  const double mid = c.midline_y >= 0 ? c.midline_y : 0.5 * (ref.height - 1);
  const auto spec = star_field(ref.width, ref.height, c.amplitude, c.period_left, c.period_right);
  std::filesystem::create_directories(c.out);
  write_run_config(c, bindings, c.out);
  const MetrologyReport rep =
      metrology_sweep(ref, noisy, star, roi, seed, mid, [&](double x) { return spec.period(x); }, c.subset_sizes,
                      params);
  std::ofstream csv(std::filesystem::path(c.out) / "metrology.csv");
  csv << "subset_size,noise,l10,mei\n";
  for (const auto& r : rep.rows)
    csv << r.subset_size << ',' << io_detail::fmt_real(r.noise) << ',' << io_detail::fmt_real(r.l10) << ','
        << io_detail::fmt_real(r.mei) << '\n';
  csv << "# mei_summary: " << io_detail::fmt_real(rep.summary) << '\n';
  if (log.info()) {
    for (const auto& r : rep.rows)
      log.out() << "subset " << r.subset_size << ": noise " << fixed(r.noise, 5) << " px, l10 " << fixed(r.l10, 2)
                << " px, mei " << fixed(r.mei, 4) << '\n';
    log.out() << "mei summary " << fixed(rep.summary, 4) << '\n';
  }
  return kOk;
}

/// Applies a YAML config file: every key must name a known option.
inline void apply_yaml(const std::string& path, RunConfig& cfg, const std::vector<Binding>& bindings) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw ConfigError("--config " + path + ": " + e.what());
  }
  if (!root.IsMap()) throw ConfigError("--config " + path + ": top level must be a mapping");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key == "version" || key == "subcommand") continue;
    auto it = std::find_if(bindings.begin(), bindings.end(), [&](const Binding& b) { return b.key == key; });
    if (it == bindings.end()) throw ConfigError("--config " + path + ": unknown key '" + key + "'");
    try {
      it->from_yaml(cfg, kv.second);
    } catch (const YAML::Exception& e) {
      throw ConfigError("--config " + path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

}  // namespace detail

/// Parses arguments, runs the subcommand and maps failures to exit codes.
inline int parse_and_run(int argc, const char* const* argv, std::ostream& out = std::cout,
                         std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"2D digital image correlation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  struct Sub {
    CLI::App* app;
    RunConfig flags;
    std::string config;
    std::unique_ptr<Binder> binder;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  auto make = [&](const char* name, const char* desc, void (*add)(Binder&)) {
    auto s = std::make_unique<Sub>();
    s->app = app.add_subcommand(name, desc);
    s->flags.subcommand = name;
    s->binder = std::make_unique<Binder>(s->app, s->flags);
    add(*s->binder);
    add_common(*s->binder);
    s->app->add_option("--config", s->config, "YAML configuration file; flags override its values");
    subs.push_back(std::move(s));
  };
  make("dic2d", "Correlate deformed images against a reference", add_dic);
  make("strain", "Compute strain fields from DIC result files", add_strain);
  make("synth", "Generate a synthetic speckle image pair", add_synth);
  make("metrology", "Noise floor, spatial resolution and MEI sweep", add_metrology);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  Sub* active = nullptr;
  for (auto& s : subs)
    if (s->app->parsed()) active = s.get();

  RunConfig cfg;
  cfg.subcommand = active->flags.subcommand;
  bool computing = false;
  try {
    auto& bindings = active->binder->bindings();
    if (!active->config.empty()) apply_yaml(active->config, cfg, bindings);
    for (const auto& b : bindings)
      if (b.option->count() > 0) b.from_flags(cfg, active->flags);
    if (cfg.threads < 1) throw ConfigError("--threads must be >= 1");
    Logger log(out, err, cfg.log_level);
    computing = true;
    if (cfg.subcommand == "dic2d") return run_dic2d(cfg, bindings, log);
    if (cfg.subcommand == "strain") return run_strain(cfg, bindings, log);
    if (cfg.subcommand == "synth") return run_synth(cfg, bindings, log);
    return run_metrology(cfg, bindings, log);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    const bool input_problem = e.code() == ErrorCode::IoError || e.code() == ErrorCode::UnsupportedFormat ||
                               e.code() == ErrorCode::BorderTooLarge || e.code() == ErrorCode::EmptyGrid ||
                               e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::NoMatch ||
                               e.code() == ErrorCode::ParseError;
    return input_problem || !computing ? kConfigError : kRunError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRunError;
  }
}

}  // namespace dic::cli
