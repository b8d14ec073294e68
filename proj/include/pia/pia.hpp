#pragma once

#include "errors.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "policy.hpp"
#include "paths.hpp"
#include "regression.hpp"
#include "bsde.hpp"
#include "report.hpp"
#include "pde.hpp"
#include "bench.hpp"
#include "driver.hpp"
#include "config.hpp"
