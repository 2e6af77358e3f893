#pragma once

/// Umbrella header for the heavyrush library.

#include "heavyrush/error.hpp"
#include "heavyrush/rng.hpp"
#include "heavyrush/graph.hpp"
#include "heavyrush/gmrf.hpp"
#include "heavyrush/model.hpp"
#include "heavyrush/sampler.hpp"
#include "heavyrush/diagnostics.hpp"
#include "heavyrush/fit.hpp"
#include "heavyrush/simulate.hpp"
#include "heavyrush/study.hpp"
#include "heavyrush/io.hpp"
#include "heavyrush/schema.hpp"
#include "heavyrush/report.hpp"
#include "heavyrush/cli.hpp"
