#pragma once

#include "bpa/advice.hpp"
#include "bpa/advisors.hpp"
#include "bpa/env.hpp"
#include "bpa/experiment.hpp"
#include "bpa/generalize.hpp"
#include "bpa/mountain_car.hpp"
#include "bpa/q_learning.hpp"
#include "bpa/rng.hpp"
#include "bpa/selfdrive.hpp"
#include "bpa/trainer.hpp"
