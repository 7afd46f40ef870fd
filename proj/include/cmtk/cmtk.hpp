#pragma once

// Umbrella header: numerical construction and verification of contraction
// metrics for exponentially stable periodic orbits.

#include "cmtk/core.hpp"
#include "cmtk/integrate.hpp"
#include "cmtk/system.hpp"
#include "cmtk/polynomial.hpp"
#include "cmtk/flow.hpp"
#include "cmtk/projection.hpp"
#include "cmtk/metric.hpp"
#include "cmtk/orbit.hpp"
#include "cmtk/verify.hpp"
#include "cmtk/report.hpp"
