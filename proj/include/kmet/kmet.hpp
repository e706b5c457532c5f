#pragma once

// Umbrella header.

#include "kmet/bias_lab.hpp"
#include "kmet/error.hpp"
#include "kmet/estimators.hpp"
#include "kmet/gradnet.hpp"
#include "kmet/io.hpp"
#include "kmet/kernels.hpp"
#include "kmet/linalg.hpp"
#include "kmet/matrix.hpp"
#include "kmet/parallel.hpp"
#include "kmet/relative_test.hpp"
#include "kmet/rng.hpp"
#include "kmet/running_stats.hpp"
#include "kmet/scores.hpp"
#include "kmet/special.hpp"

namespace kmet {
inline constexpr const char* version_string = "0.1.0";
}
