#pragma once

#include "transport/rng.hpp"
#include "transport/errors.hpp"
#include "transport/domain.hpp"
#include "transport/dgp.hpp"
#include "transport/sampling.hpp"
#include "transport/participation.hpp"
#include "transport/outcome.hpp"
#include "transport/estimators.hpp"
#include "transport/io.hpp"
#include "transport/experiment.hpp"
