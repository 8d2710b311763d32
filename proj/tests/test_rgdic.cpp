#include <atomic>
#include <cmath>
#include <cstring>
#include <mutex>
#include <set>

#include <gtest/gtest.h>

#include "dic/rgdic.hpp"
#include "dic/synth.hpp"
#include "test_util.hpp"

using namespace dic;

namespace {

const GrayImage& speckle() {
  static const GrayImage img = gen_speckle(320, 280, 4.0, 0.5, 41);
  return img;
}

DicParams params(int threads = 1) {
  DicParams p;
  p.subset_size = 21;
  p.subset_step = 10;
  p.threads = threads;
  return p;
}

struct Trace {
  std::mutex mu;
  std::vector<RgTraceEvent> events;
  CorrelateOptions options() {
    CorrelateOptions o;
    o.on_optimized = [this](const RgTraceEvent& e) {
      std::lock_guard lock(mu);
      events.push_back(e);
    };
    return o;
  }
};

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

}  // namespace

TEST(FlagUnconverged, Examples) {
  DicResult r;
  r.allocate(build_subset_grid(roi_exclude_border(60, 60, 0), 11, 10));
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.status[i] = SubsetStatus::CONVERGED;
    r.u_x[i] = 0.5 * i;
    r.u_y[i] = -0.25 * i;
  }
  const DicResult same = flag_unconverged(r, true);
  EXPECT_EQ(same.u_x, r.u_x);
  EXPECT_EQ(same.u_y, r.u_y);

  r.status[3] = SubsetStatus::MAX_ITER;
  const DicResult flagged = flag_unconverged(r, true);
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(std::isnan(flagged.u_x[i]), i == 3);
    EXPECT_EQ(std::isnan(flagged.u_y[i]), i == 3);
    EXPECT_EQ(flagged.status[i], r.status[i]);
  }
  const DicResult off = flag_unconverged(r, false);
  EXPECT_EQ(std::memcmp(off.u_x.data(), r.u_x.data(), r.size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(off.u_y.data(), r.u_y.data(), r.size() * sizeof(double)), 0);
}

TEST(Correlate2d, IdentityConvergesEverywhere) {
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  const auto res = correlate_2d(speckle(), {{"same", speckle()}}, roi, {160, 140}, params(2));
  ASSERT_EQ(res.size(), 1u);
  const DicResult& r = res[0];
  EXPECT_EQ(r.image_label, "same");
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!r.grid.is_present(i)) {
      EXPECT_EQ(r.status[i], SubsetStatus::ABSENT);
      continue;
    }
    EXPECT_EQ(r.status[i], SubsetStatus::CONVERGED);
    EXPECT_NEAR(r.u_x[i], 0.0, 1e-6);
    EXPECT_NEAR(r.u_y[i], 0.0, 1e-6);
    EXPECT_GE(r.zncc[i], 0.999);
    EXPECT_EQ(r.u_x[i], r.params[i].p[0]);
    EXPECT_EQ(r.u_y[i], r.params[i].p[1]);
  }
}

TEST(Correlate2d, RigidShift7Minus3) {
  const GrayImage def = deform_image(speckle(), DeformationFieldSpec::translation(7, -3), 4);
  const RoiMask roi = roi_exclude_border(320, 280, 20);
  const auto r = correlate_2d(speckle(), {{"shift", def}}, roi, {100, 100}, params(2)).front();
  std::size_t checked = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.status[i] != SubsetStatus::CONVERGED) continue;
    EXPECT_NEAR(r.u_x[i], 7.0, 0.01);
    EXPECT_NEAR(r.u_y[i], -3.0, 0.01);
    ++checked;
  }
  EXPECT_EQ(checked, r.grid.present_count());
}

TEST(Correlate2d, SeedOnFlatPatchFails) {
  GrayImage ref = speckle();
  for (int y = 100; y < 180; ++y)
    for (int x = 120; x < 200; ++x) ref.at(x, y) = 77.0;
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  EXPECT_EQ(code_of([&] { correlate_2d(ref, {{"d", ref}}, roi, {160, 140}, params()); }), ErrorCode::SeedFailed);
}

TEST(Correlate2d, SeedOutsideRoiFails) {
  const RoiMask roi = roi_from_rects(320, 280, {{50, 50, 100, 100}});
  EXPECT_EQ(code_of([&] { correlate_2d(speckle(), {{"d", speckle()}}, roi, {250, 250}, params()); }),
            ErrorCode::SeedFailed);
}

TEST(Correlate2d, ExactlyOnceOptimization) {
  const GrayImage def = deform_image(speckle(), DeformationFieldSpec::uniform_strain(320, 280, 0.01, -0.005), 4);
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  for (int threads : {1, 2, 4}) {
    Trace tr;
    const auto r = correlate_2d(speckle(), {{"d", def}}, roi, {160, 140}, params(threads), tr.options()).front();
    EXPECT_EQ(r.optimizations, r.grid.present_count());
    EXPECT_EQ(tr.events.size(), r.grid.present_count());
    std::set<std::size_t> seen;
    for (const auto& e : tr.events) {
      EXPECT_TRUE(seen.insert(e.grid_index).second) << "point optimized twice";
      EXPECT_TRUE(r.grid.is_present(e.grid_index));
    }
  }
}

TEST(Correlate2d, SeedAndFourNeighboursComeFirst) {
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  const DicParams p = params(3);
  const SubsetGrid grid = build_subset_grid(roi, p.subset_size, p.subset_step);
  const std::size_t seed = grid.nearest(160, 140);
  Trace tr;
  correlate_2d(speckle(), {{"d", speckle()}}, roi, {160, 140}, p, tr.options());
  ASSERT_GE(tr.events.size(), 5u);
  EXPECT_EQ(tr.events[0].grid_index, seed);
  std::set<std::size_t> ring, expect;
  for (int k = 1; k < 5; ++k) ring.insert(tr.events[k].grid_index);
  const int c = grid.col_of(seed), r = grid.row_of(seed);
  expect = {grid.index(c + 1, r), grid.index(c - 1, r), grid.index(c, r + 1), grid.index(c, r - 1)};
  EXPECT_EQ(ring, expect);
}

// Single thread: priorities pop in non-increasing order except where a newly
// spawned, higher-priority entry enters the queue.
TEST(Correlate2d, SingleThreadPriorityDiscipline) {
  const GrayImage def =
      add_noise(deform_image(speckle(), DeformationFieldSpec::radial_stretch(320, 280, 2.0), 4), 3.0, 5);
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  Trace tr;
  const auto r = correlate_2d(speckle(), {{"d", def}}, roi, {160, 140}, params(1), tr.options()).front();
  // Replay: at each pop the chosen priority is the maximum over queued items.
  std::multiset<double> queued;
  std::vector<std::uint8_t> enqueued(r.size(), 0);
  const SubsetGrid& g = r.grid;
  auto push_neighbours = [&](std::size_t idx) {
    const int c = g.col_of(idx), rr = g.row_of(idx);
    const int dc[4] = {1, -1, 0, 0}, dr[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int cc = c + dc[k], r2 = rr + dr[k];
      if (cc < 0 || r2 < 0 || cc >= g.cols || r2 >= g.rows) continue;
      const std::size_t j = g.index(cc, r2);
      if (!g.is_present(j) || enqueued[j]) continue;
      enqueued[j] = 1;
      queued.insert(r.zncc[idx]);
    }
  };
  for (std::size_t k = 0; k < tr.events.size(); ++k) {
    const auto& e = tr.events[k];
    enqueued[e.grid_index] = 1;
    if (k >= 5 && !std::isnan(e.priority)) {
      ASSERT_FALSE(queued.empty());
      EXPECT_EQ(e.priority, *queued.rbegin()) << "pop " << k;
      queued.erase(std::prev(queued.end()));
    }
    if (k == 0) {
      push_neighbours(e.grid_index);
      queued.clear();  // the ring is processed directly, not queued
    }
    if (k == 4) {
      for (std::size_t j = 1; j <= 4; ++j)
        if (r.status[tr.events[j].grid_index] == SubsetStatus::CONVERGED) push_neighbours(tr.events[j].grid_index);
    } else if (k > 4 && r.status[e.grid_index] == SubsetStatus::CONVERGED) {
      push_neighbours(e.grid_index);
    }
  }
  EXPECT_TRUE(queued.empty());
}

TEST(Correlate2d, ThreadCountInvariance) {
  const auto spec = DeformationFieldSpec::uniform_strain(320, 280, 0.015, 0.01, 0.004);
  const GrayImage def = add_noise(deform_image(speckle(), spec, 4), 2.0, 9);
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  std::vector<DicResult> runs;
  for (int threads : {1, 2, 8})
    runs.push_back(correlate_2d(speckle(), {{"d", def}}, roi, {160, 140}, params(threads)).front());
  const double tol = 2 * params().update_precision;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    std::size_t differ = 0;
    for (std::size_t i = 0; i < runs[0].size(); ++i) {
      const bool a = runs[0].status[i] == SubsetStatus::CONVERGED, b = runs[k].status[i] == SubsetStatus::CONVERGED;
      differ += a != b;
      if (a && b) {
        EXPECT_NEAR(runs[0].u_x[i], runs[k].u_x[i], tol);
        EXPECT_NEAR(runs[0].u_y[i], runs[k].u_y[i], tol);
      }
    }
    EXPECT_LT(static_cast<double>(differ), 0.005 * runs[0].size());
  }
}

TEST(Correlate2d, DonutRoiTerminatesAndCoversAllPoints) {
  RoiMask roi(320, 280, false);
  for (int y = 0; y < 280; ++y)
    for (int x = 0; x < 320; ++x) {
      const double r = std::hypot(x - 160, y - 140);
      roi.set(x, y, r >= 40 && r <= 125);
    }
  const GrayImage def = deform_image(speckle(), DeformationFieldSpec::translation(1.5, 0.5), 4);
  for (int threads : {1, 4}) {
    const auto r = correlate_2d(speckle(), {{"d", def}}, roi, {160, 45}, params(threads)).front();
    EXPECT_EQ(r.optimizations, r.grid.present_count());
    for (std::size_t i = 0; i < r.size(); ++i)
      EXPECT_EQ(r.grid.is_present(i), r.status[i] != SubsetStatus::ABSENT);
    EXPECT_EQ(r.converged_count(), r.grid.present_count());
  }
}

TEST(Correlate2d, DisconnectedRoiIsCoveredByMopUp) {
  const RoiMask roi = roi_from_rects(320, 280, {{10, 10, 120, 120}, {190, 150, 120, 120}});
  const GrayImage def = deform_image(speckle(), DeformationFieldSpec::translation(-2.25, 1.0), 4);
  const auto r = correlate_2d(speckle(), {{"d", def}}, roi, {60, 60}, params(2)).front();
  EXPECT_EQ(r.converged_count(), r.grid.present_count());
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r.status[i] == SubsetStatus::CONVERGED) {
      EXPECT_NEAR(r.u_x[i], -2.25, 0.01);
    }
}

TEST(Correlate2d, UnconvergedPointsKeepInitOrNan) {
  // Right half of the deformed image is replaced by unrelated speckle.
  GrayImage def = deform_image(speckle(), DeformationFieldSpec::translation(2, 1), 4);
  const GrayImage other = gen_speckle(320, 280, 4.0, 0.5, 77);
  for (int y = 0; y < 280; ++y)
    for (int x = 200; x < 320; ++x) def.at(x, y) = other.at(x, y);
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  DicParams p = params(2);
  const auto kept = correlate_2d(speckle(), {{"d", def}}, roi, {80, 140}, p).front();
  p.nan_unconverged = true;
  const auto nans = correlate_2d(speckle(), {{"d", def}}, roi, {80, 140}, p).front();
  std::size_t bad = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (!kept.grid.is_present(i) || kept.status[i] == SubsetStatus::CONVERGED) continue;
    ++bad;
    EXPECT_TRUE(std::isfinite(kept.u_x[i]));
    if (kept.status[i] == SubsetStatus::LOW_CORRELATION) {
      EXPECT_LT(kept.zncc[i], 0.70);
    }
  }
  EXPECT_GT(bad, 10u);
  for (std::size_t i = 0; i < nans.size(); ++i) {
    if (nans.status[i] == SubsetStatus::CONVERGED) {
      EXPECT_TRUE(std::isfinite(nans.u_x[i]));
    } else {
      EXPECT_TRUE(std::isnan(nans.u_x[i]));
      EXPECT_TRUE(std::isnan(nans.u_y[i]));
    }
  }
}

TEST(Correlate2d, MultiwindowMethodEmitsRigidResults) {
  const GrayImage def = deform_image(speckle(), DeformationFieldSpec::translation(3.4, -1.7), 4);
  const RoiMask roi = roi_exclude_border(320, 280, 20);
  DicParams p = params(2);
  p.method = Method::MULTIWINDOW;
  const auto r = correlate_2d(speckle(), {{"d", def}}, roi, {160, 140}, p).front();
  EXPECT_GE(r.converged_count(), 0.95 * r.grid.present_count());
  // Three-point Gaussian fits on the ZNCC surface carry a fractional-shift bias
  // of a few tenths of a pixel for 21 px subsets.
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.status[i] != SubsetStatus::CONVERGED) continue;
    EXPECT_NEAR(r.u_x[i], 3.4, 0.25);
    EXPECT_NEAR(r.u_y[i], -1.7, 0.25);
  }
}

TEST(Correlate2d, SequentialImagesAndProgress) {
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  std::atomic<std::size_t> last{0}, total{0};
  CorrelateOptions o;
  o.progress = [&](std::size_t done, std::size_t t) {
    last = done;
    total = t;
  };
  const GrayImage shifted = deform_image(speckle(), DeformationFieldSpec::translation(1, 0), 4);
  const auto res = correlate_2d(speckle(), {{"a", speckle()}, {"b", shifted}}, roi, {160, 140}, params(2), o);
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[1].image_label, "b");
  EXPECT_EQ(last.load(), total.load());
  EXPECT_EQ(total.load(), res[1].grid.present_count());
}

TEST(Correlate2d, MismatchedDimensionsRejected) {
  const RoiMask roi = roi_exclude_border(320, 280, 15);
  EXPECT_EQ(code_of([&] { correlate_2d(speckle(), {{"d", GrayImage(100, 100)}}, roi, {160, 140}, params()); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { correlate_2d(speckle(), {{"d", speckle()}}, RoiMask(10, 10, true), {5, 5}, params()); }),
            ErrorCode::InvalidArgument);
}
