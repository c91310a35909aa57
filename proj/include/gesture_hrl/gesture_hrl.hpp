#pragma once

#include "env_sim.hpp"
#include "experiment.hpp"
#include "gesture_core.hpp"
#include "gesture_oracle.hpp"
#include "harness.hpp"
#include "her.hpp"
#include "hierarchy.hpp"
#include "learner.hpp"
#include "mlp.hpp"
#include "param_io.hpp"
#include "rng.hpp"
#include "value_backend.hpp"
