#pragma once

#include "psqueeze/cluster.hpp"
#include "psqueeze/csv.hpp"
#include "psqueeze/data.hpp"
#include "psqueeze/error.hpp"
#include "psqueeze/evaluate.hpp"
#include "psqueeze/forecast.hpp"
#include "psqueeze/gre.hpp"
#include "psqueeze/leaf_set.hpp"
#include "psqueeze/localize.hpp"
#include "psqueeze/measure.hpp"
#include "psqueeze/serialize.hpp"
#include "psqueeze/simulate.hpp"
