#pragma once

#include "ldct/error.hpp"
#include "ldct/grid.hpp"
#include "ldct/projector.hpp"
#include "ldct/sparsity.hpp"
#include "ldct/noise.hpp"
#include "ldct/objectives.hpp"
#include "ldct/solver.hpp"
#include "ldct/metrics.hpp"
#include "ldct/templates.hpp"
#include "ldct/reirradiate.hpp"
#include "ldct/tuning.hpp"
#include "ldct/io.hpp"
#include "ldct/phantom.hpp"
#include "ldct/experiment.hpp"
