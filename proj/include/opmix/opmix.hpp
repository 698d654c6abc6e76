#pragma once

// Umbrella header for the opmix library: linear-time mixed-model inference
// for functional data through Green's-function operator calculus.

#include "opmix/grid.hpp"
#include "opmix/operator_spec.hpp"
#include "opmix/spectral.hpp"
#include "opmix/green.hpp"
#include "opmix/fast_solve.hpp"
#include "opmix/logdet.hpp"
#include "opmix/mixed_model.hpp"
#include "opmix/dense_oracle.hpp"
#include "opmix/simulate.hpp"
#include "opmix/csv_io.hpp"
