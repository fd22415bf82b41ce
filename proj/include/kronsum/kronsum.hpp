#pragma once

#include "kronsum/errors.hpp"
#include "kronsum/linalg.hpp"
#include "kronsum/io.hpp"
#include "kronsum/random.hpp"
#include "kronsum/model.hpp"
#include "kronsum/gram.hpp"
#include "kronsum/solver.hpp"
#include "kronsum/parallel.hpp"
#include "kronsum/precision.hpp"
#include "kronsum/replicates.hpp"
#include "kronsum/harness.hpp"
