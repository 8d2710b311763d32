#pragma once

#include "dic/error.hpp"
#include "dic/image.hpp"
#include "dic/roi.hpp"
#include "dic/subset_grid.hpp"
#include "dic/params.hpp"
#include "dic/parallel.hpp"
#include "dic/spline.hpp"
#include "dic/fft.hpp"
#include "dic/fftcc.hpp"
#include "dic/shape.hpp"
#include "dic/cost.hpp"
#include "dic/optimizer.hpp"
#include "dic/rgdic.hpp"
#include "dic/strain.hpp"
#include "dic/results_io.hpp"
#include "dic/synth.hpp"
#include "dic/metrology.hpp"

namespace dic {
inline constexpr const char* kVersion = "0.1.0";
}
