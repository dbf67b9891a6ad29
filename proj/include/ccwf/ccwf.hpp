#pragma once

#include "ccwf/core.hpp"
#include "ccwf/dataset.hpp"
#include "ccwf/synthgen.hpp"
#include "ccwf/kmeans.hpp"
#include "ccwf/forest.hpp"
#include "ccwf/stacking.hpp"
#include "ccwf/ensemble.hpp"
#include "ccwf/bench.hpp"
