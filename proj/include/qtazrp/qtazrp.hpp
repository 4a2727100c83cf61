#pragma once

// Umbrella header.

#include "errors.hpp"
#include "qalgebra.hpp"
#include "model.hpp"
#include "model_json.hpp"
#include "parallel.hpp"
#include "simulator.hpp"
#include "quadrature.hpp"
#include "contour.hpp"
#include "fredholm.hpp"
