#pragma once

#include "budget.hpp"
#include "error.hpp"
#include "flow.hpp"
#include "harness.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "search.hpp"
#include "stats.hpp"
#include "task.hpp"
#include "umf.hpp"
#include "verifiers.hpp"
