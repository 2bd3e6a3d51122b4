#pragma once

// Umbrella header: sensitivity analysis for multi-outcome observational
// studies under factor-structured unobserved confounding.

#include "factorsens/analysis.hpp"
#include "factorsens/bootstrap.hpp"
#include "factorsens/bounds.hpp"
#include "factorsens/calibration.hpp"
#include "factorsens/csv.hpp"
#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/factor_model.hpp"
#include "factorsens/null_controls.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/regression.hpp"
#include "factorsens/rng.hpp"
#include "factorsens/robustness.hpp"
#include "factorsens/simulation.hpp"
