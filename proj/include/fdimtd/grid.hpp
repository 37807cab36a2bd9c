// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fdimtd/grid/admittance.hpp"
#include "fdimtd/grid/case_io.hpp"
#include "fdimtd/grid/grid_model.hpp"
#include "fdimtd/grid/jacobian.hpp"
#include "fdimtd/grid/matpower.hpp"
#include "fdimtd/grid/measurement.hpp"
#include "fdimtd/grid/power_flow.hpp"
#include "fdimtd/grid/state.hpp"
