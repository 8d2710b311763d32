#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include "dic/error.hpp"
#include "dic/fftcc.hpp"
#include "dic/image.hpp"
#include "dic/optimizer.hpp"
#include "dic/params.hpp"
#include "dic/roi.hpp"
#include "dic/spline.hpp"
#include "dic/subset_grid.hpp"

namespace dic {

/// Grid-organized correlation output for one deformed image.
struct DicResult {
  SubsetGrid grid;
  std::string image_label;
  int image_width = 0;
  int image_height = 0;
  CostKind cost = CostKind::ZNSSD;
  ShapeKind shape = ShapeKind::AFFINE;

  std::vector<double> u_x, u_y, zncc;
  std::vector<std::int32_t> iterations;
  std::vector<SubsetStatus> status;
  std::vector<ShapeParams> params;

  /// Number of subset optimizations performed (one per non-absent point).
  std::size_t optimizations = 0;

  std::size_t size() const noexcept { return u_x.size(); }
  std::size_t converged_count() const {
    std::size_t n = 0;
    for (auto s : status) n += s == SubsetStatus::CONVERGED;
    return n;
  }

  void allocate(const SubsetGrid& g) {
    grid = g;
    const std::size_t n = g.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    u_x.assign(n, nan);
    u_y.assign(n, nan);
    zncc.assign(n, nan);
    iterations.assign(n, 0);
    status.assign(n, SubsetStatus::ABSENT);
    params.assign(n, ShapeParams(shape));
  }
};

/// Sets displacements of every non-converged point to NaN when as_nan is true.
inline DicResult flag_unconverged(DicResult result, bool as_nan) {
  if (!as_nan) return result;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < result.size(); ++i)
    if (result.status[i] != SubsetStatus::CONVERGED) {
      result.u_x[i] = nan;
      result.u_y[i] = nan;
    }
  return result;
}

struct RgTraceEvent {
  std::size_t sequence = 0;
  std::size_t grid_index = 0;
  double priority = 0.0;  // spawner ZNCC; NaN for seeds
  int thread = 0;
};

struct CorrelateOptions {
  /// Called after each subset optimization, serialized by an internal lock.
  std::function<void(const RgTraceEvent&)> on_optimized;
  /// Called periodically from worker threads with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

namespace rg_detail {

enum : std::uint8_t { kUnclaimed = 0, kClaimed = 1, kDone = 2 };

struct QueueItem {
  double priority;
  std::size_t index;
  std::size_t spawner;
  bool operator<(const QueueItem& o) const {
    if (priority != o.priority) return priority < o.priority;
    return index > o.index;
  }
};

struct WorkQueue {
  std::mutex mu;
  std::priority_queue<QueueItem> items;

  void push(const QueueItem& it) {
    std::lock_guard lock(mu);
    items.push(it);
  }
  bool pop(QueueItem& out) {
    std::lock_guard lock(mu);
    if (items.empty()) return false;
    out = items.top();
    items.pop();
    return true;
  }
};

class RgRunner {
 public:
  RgRunner(const GrayImage& ref, const SplineCoefficients& spline, const InitField& init, const DicParams& params,
           DicResult& out, const CorrelateOptions& opts)
      : ref_(ref), spline_(spline), init_(init), params_(params), grid_(out.grid), out_(out), opts_(opts),
        claim_(new std::atomic<std::uint8_t>[grid_.size()]), total_(grid_.present_count()) {
    for (std::size_t i = 0; i < grid_.size(); ++i) claim_[i].store(kUnclaimed, std::memory_order_relaxed);
    const int nt = std::max(1, params.threads);
    queues_.reserve(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) queues_.push_back(std::make_unique<WorkQueue>());
  }

  void run(std::size_t seed) {
    SubsetProblem problem;
    if (!grid_.is_present(seed)) fail(ErrorCode::SeedFailed, "seed grid point lies outside the ROI");
    claim_[seed].store(kClaimed);
    const SubsetResult s = optimize(seed, std::nullopt, 0, std::numeric_limits<double>::quiet_NaN(), problem);
    if (s.status != SubsetStatus::CONVERGED)
      fail(ErrorCode::SeedFailed, "seed at (" + std::to_string(s.center.x) + ", " + std::to_string(s.center.y) +
                                      ") did not converge (status " + std::string(to_string(s.status)) +
                                      ", zncc " + std::to_string(s.zncc) + ")");

    std::vector<std::size_t> first_ring;
    for (std::size_t nb : neighbours(seed))
      if (try_claim(nb)) first_ring.push_back(nb);
    std::size_t ring_ok = 0;
    for (std::size_t nb : first_ring) {
      optimize(nb, seed, 0, out_.zncc[seed], problem);
      ring_ok += out_.status[nb] == SubsetStatus::CONVERGED;
    }
    if (!first_ring.empty() && ring_ok == 0)
      fail(ErrorCode::SeedFailed, "none of the seed's neighbours converged");
    for (std::size_t nb : first_ring)
      if (out_.status[nb] == SubsetStatus::CONVERGED) spawn(nb, *queues_[0]);

    const int nt = static_cast<int>(queues_.size());
    if (nt == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < nt; ++t) pool.emplace_back([this, t] { worker(t); });
      for (auto& th : pool) th.join();
    }
    if (error_) std::rethrow_exception(error_);
    out_.optimizations = optimizations_.load();
  }

 private:
  std::vector<std::size_t> neighbours(std::size_t idx) const {
    std::vector<std::size_t> out;
    const int c = grid_.col_of(idx), r = grid_.row_of(idx);
    const int dc[4] = {1, -1, 0, 0}, dr[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int cc = c + dc[k], rr = r + dr[k];
      if (cc < 0 || rr < 0 || cc >= grid_.cols || rr >= grid_.rows) continue;
      const std::size_t j = grid_.index(cc, rr);
      if (grid_.is_present(j)) out.push_back(j);
    }
    return out;
  }

  bool try_claim(std::size_t idx) {
    std::uint8_t expected = kUnclaimed;
    return claim_[idx].compare_exchange_strong(expected, kClaimed, std::memory_order_acq_rel);
  }

  /// Claims and enqueues the unclaimed neighbours of a converged point.
  void spawn(std::size_t idx, WorkQueue& q) {
    for (std::size_t nb : neighbours(idx))
      if (try_claim(nb)) {
        pending_.fetch_add(1, std::memory_order_acq_rel);
        q.push({out_.zncc[idx], nb, idx});
      }
  }

  ShapeParams init_guess(std::size_t idx) const {
    return ShapeParams::translation(params_.shape, init_.u[idx], init_.v[idx]);
  }

  SubsetResult optimize(std::size_t idx, std::optional<std::size_t> spawner, int thread, double priority,
                               SubsetProblem& problem) {
    const Point c = grid_.center(idx);
    SubsetResult r;
    r.center = c;
    try {
      const SubsetData sd = SubsetData::extract(ref_, c, grid_.subset_size);
      if (spawner) {
        const Point sc = grid_.center(*spawner);
        const ShapeParams guess = out_.params[*spawner].recentered(c.x - sc.x, c.y - sc.y);
        r = lm_minimize(sd, spline_, guess, params_, problem);
        if (r.status != SubsetStatus::CONVERGED) {
          const int first = r.iterations;
          SubsetResult retry = lm_minimize(sd, spline_, init_guess(idx), params_, problem);
          retry.iterations += first;
          if (retry.status == SubsetStatus::CONVERGED || (std::isfinite(retry.zncc) && !(retry.zncc <= r.zncc)))
            r = retry;
        }
      } else {
        r = lm_minimize(sd, spline_, init_guess(idx), params_, problem);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateSubset && e.code() != ErrorCode::OutOfDomain) throw;
      r.status = SubsetStatus::REJECTED;
    }
    r.grid_index = idx;
    store(idx, r);
    claim_[idx].store(kDone, std::memory_order_release);
    const std::size_t done = optimizations_.fetch_add(1, std::memory_order_acq_rel) + 1;
    if (opts_.on_optimized) {
      std::lock_guard lock(trace_mu_);
      opts_.on_optimized({trace_seq_++, idx, priority, thread});
    }
    if (opts_.progress && (done % 256 == 0 || done == total_)) opts_.progress(done, total_);
    return r;
  }

  void store(std::size_t idx, const SubsetResult& r) {
    out_.params[idx] = r.params;
    out_.zncc[idx] = r.zncc;
    out_.iterations[idx] = r.iterations;
    out_.status[idx] = r.status;
    if (r.status == SubsetStatus::CONVERGED) {
      out_.u_x[idx] = r.params.u();
      out_.u_y[idx] = r.params.v();
    } else {
      out_.params[idx] = init_guess(idx);
      out_.u_x[idx] = init_.u[idx];
      out_.u_y[idx] = init_.v[idx];
    }
  }

  bool acquire(int t, QueueItem& item) {
    if (queues_[t]->pop(item)) return true;
    const int nt = static_cast<int>(queues_.size());
    for (int k = 1; k < nt; ++k)
      if (queues_[(t + k) % nt]->pop(item)) return true;
    return false;
  }

  /// Next unclaimed present point once propagation has stalled (disconnected ROI
  /// parts, or regions walled off by unconverged points).
  bool next_seed(std::size_t& idx) {
    for (std::size_t i = scan_.load(); i < grid_.size(); i = scan_.load()) {
      if (!scan_.compare_exchange_weak(i, i + 1)) continue;
      if (grid_.is_present(i) && try_claim(i)) {
        idx = i;
        return true;
      }
    }
    return false;
  }

  void worker(int t) {
    try {
      SubsetProblem problem;
      int idle = 0;
      for (;;) {
        if (error_flag_.load(std::memory_order_acquire)) return;
        QueueItem item;
        if (acquire(t, item)) {
          idle = 0;
          const SubsetResult& r = optimize(item.index, item.spawner, t, item.priority, problem);
          if (r.status == SubsetStatus::CONVERGED) spawn(item.index, *queues_[t]);
          pending_.fetch_sub(1, std::memory_order_acq_rel);
          continue;
        }
        if (pending_.load(std::memory_order_acquire) == 0) {
          std::size_t s;
          if (!next_seed(s)) return;
          pending_.fetch_add(1, std::memory_order_acq_rel);
          const SubsetResult& r = optimize(s, std::nullopt, t, std::numeric_limits<double>::quiet_NaN(), problem);
          if (r.status == SubsetStatus::CONVERGED) spawn(s, *queues_[t]);
          pending_.fetch_sub(1, std::memory_order_acq_rel);
          continue;
        }
        if (++idle < 64) {
          std::this_thread::yield();
        } else {
          std::this_thread::sleep_for(std::chrono::microseconds(std::min(idle, 500)));
        }
      }
    } catch (...) {
      std::lock_guard lock(trace_mu_);
      if (!error_) error_ = std::current_exception();
      error_flag_.store(true, std::memory_order_release);
    }
  }

  const GrayImage& ref_;
  const SplineCoefficients& spline_;
  const InitField& init_;
  const DicParams& params_;
  const SubsetGrid& grid_;
  DicResult& out_;
  const CorrelateOptions& opts_;

  std::unique_ptr<std::atomic<std::uint8_t>[]> claim_;
  std::vector<std::unique_ptr<WorkQueue>> queues_;
  std::atomic<std::size_t> pending_{0};
  std::atomic<std::size_t> scan_{0};
  std::atomic<std::size_t> optimizations_{0};
  std::size_t total_ = 0;

  std::mutex trace_mu_;
  std::size_t trace_seq_ = 0;
  std::exception_ptr error_;
  std::atomic<bool> error_flag_{false};
};

}  // namespace rg_detail

/// Full-field correlation of one deformed image against the reference.
inline DicResult correlate_image(const GrayImage& ref, const GrayImage& def, const std::string& label,
                                 const SubsetGrid& grid, Point seed, const DicParams& params,
                                 const CorrelateOptions& opts = {}) {
  params.validate();
  if (!ref.same_dims(def)) fail(ErrorCode::InvalidArgument, "reference and deformed images differ in size");
  DicResult out;
  out.cost = params.cost;
  out.shape = params.shape;
  out.image_label = label;
  out.image_width = ref.width;
  out.image_height = ref.height;
  out.allocate(grid);

  const InitField init = multiwindow_displacement(ref, def, grid, params);

  if (params.method == Method::MULTIWINDOW) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!grid.is_present(i)) continue;
      out.u_x[i] = init.u[i];
      out.u_y[i] = init.v[i];
      out.zncc[i] = init.peak_quality[i];
      out.params[i] = ShapeParams::translation(params.shape, init.u[i], init.v[i]);
      out.status[i] = !init.valid[i] ? SubsetStatus::REJECTED
                      : init.peak_quality[i] >= params.zncc_accept_threshold ? SubsetStatus::CONVERGED
                                                                              : SubsetStatus::LOW_CORRELATION;
    }
    out.optimizations = grid.present_count();
    return flag_unconverged(std::move(out), params.nan_unconverged);
  }

  const SplineCoefficients spline = prefilter(def, params.threads);
  rg_detail::RgRunner runner(ref, spline, init, params, out, opts);
  runner.run(grid.nearest(seed.x, seed.y));
  return flag_unconverged(std::move(out), params.nan_unconverged);
}

struct DeformedImage {
  std::string label;
  GrayImage image;
};

/// Correlates each deformed image in turn, each with full thread parallelism.
inline std::vector<DicResult> correlate_2d(const GrayImage& ref, const std::vector<DeformedImage>& deformed,
                                           const RoiMask& roi, Point seed, const DicParams& params,
                                           const CorrelateOptions& opts = {}) {
  params.validate();
  if (roi.width() != ref.width || roi.height() != ref.height)
    fail(ErrorCode::InvalidArgument, "ROI mask dimensions differ from the reference image");
  if (params.method == Method::MULTIWINDOW_RG &&
      (seed.x < 0 || seed.y < 0 || seed.x >= ref.width || seed.y >= ref.height || !roi.inside(seed.x, seed.y)))
    fail(ErrorCode::SeedFailed, "seed lies outside the ROI");
  const SubsetGrid grid = build_subset_grid(roi, params.subset_size, params.subset_step);
  std::vector<DicResult> out;
  out.reserve(deformed.size());
  for (const auto& d : deformed) out.push_back(correlate_image(ref, d.image, d.label, grid, seed, params, opts));
  return out;
}

}  // namespace dic
