#pragma once

#include "rldp/chain.hpp"
#include "rldp/csv.hpp"
#include "rldp/error.hpp"
#include "rldp/exact_law.hpp"
#include "rldp/io_json.hpp"
#include "rldp/lowerbound.hpp"
#include "rldp/measures.hpp"
#include "rldp/parallel.hpp"
#include "rldp/rate_solver.hpp"
#include "rldp/rng.hpp"
#include "rldp/simplex_projection.hpp"
#include "rldp/time_grid.hpp"
#include "rldp/validation.hpp"
