#pragma once

#include "fid/core.hpp"
#include "fid/models.hpp"
#include "fid/scenarios.hpp"
#include "fid/stats.hpp"
#include "fid/filter.hpp"
#include "fid/engine.hpp"
#include "fid/diagnosability.hpp"
#include "fid/active.hpp"
#include "fid/harness.hpp"
