#pragma once

#include "kle3/types.hpp"
#include "kle3/dynamics.hpp"
#include "kle3/policies.hpp"
#include "kle3/spatial.hpp"
#include "kle3/gp.hpp"
#include "kle3/ergodic.hpp"
#include "kle3/controller.hpp"
#include "kle3/record.hpp"
#include "kle3/bayesopt.hpp"
#include "kle3/network.hpp"
#include "kle3/model_learning.hpp"
#include "kle3/coverage.hpp"
#include "kle3/harness.hpp"
