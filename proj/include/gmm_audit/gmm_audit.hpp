#pragma once

// Umbrella header for the numerical library (the CLI layer lives in gmm_audit/cli/).

#include "gmm_audit/errors.hpp"
#include "gmm_audit/estimation.hpp"
#include "gmm_audit/inference.hpp"
#include "gmm_audit/interval.hpp"
#include "gmm_audit/limit_lab.hpp"
#include "gmm_audit/linalg.hpp"
#include "gmm_audit/moment_core.hpp"
#include "gmm_audit/monte_carlo.hpp"
#include "gmm_audit/parallel.hpp"
#include "gmm_audit/verification.hpp"
#include "gmm_audit/weight_audit.hpp"
