#pragma once

#include "lkate/analysis.hpp"
#include "lkate/bias.hpp"
#include "lkate/core.hpp"
#include "lkate/data_io.hpp"
#include "lkate/em.hpp"
#include "lkate/estimators.hpp"
#include "lkate/glm.hpp"
#include "lkate/inference.hpp"
#include "lkate/math.hpp"
#include "lkate/mixture.hpp"
#include "lkate/model_spec.hpp"
#include "lkate/pipeline.hpp"
#include "lkate/quadrature.hpp"
#include "lkate/random.hpp"
#include "lkate/sim.hpp"
