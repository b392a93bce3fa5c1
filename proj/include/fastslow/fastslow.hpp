#pragma once

#include "fastslow/analysis.hpp"
#include "fastslow/coefficients.hpp"
#include "fastslow/coupling.hpp"
#include "fastslow/error.hpp"
#include "fastslow/experiment.hpp"
#include "fastslow/fast_process.hpp"
#include "fastslow/limit_sde.hpp"
#include "fastslow/linalg.hpp"
#include "fastslow/parallel.hpp"
#include "fastslow/path.hpp"
#include "fastslow/quadrature.hpp"
#include "fastslow/rng.hpp"
#include "fastslow/slow_model.hpp"
#include "fastslow/slow_motion.hpp"
#include "fastslow/stats.hpp"
#include "fastslow/suspension.hpp"
