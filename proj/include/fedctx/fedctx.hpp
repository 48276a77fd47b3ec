#pragma once

#include "fedctx/aggregation.hpp"
#include "fedctx/csv.hpp"
#include "fedctx/data.hpp"
#include "fedctx/device.hpp"
#include "fedctx/engine.hpp"
#include "fedctx/errors.hpp"
#include "fedctx/experiment.hpp"
#include "fedctx/idx.hpp"
#include "fedctx/linalg.hpp"
#include "fedctx/model.hpp"
#include "fedctx/rng.hpp"
