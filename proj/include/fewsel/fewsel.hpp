#pragma once

#include "fewsel/adam.hpp"
#include "fewsel/baselines.hpp"
#include "fewsel/checkpoint.hpp"
#include "fewsel/commands.hpp"
#include "fewsel/concrete.hpp"
#include "fewsel/data.hpp"
#include "fewsel/errors.hpp"
#include "fewsel/evaluation.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/model.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/run_config.hpp"
#include "fewsel/set_encoder.hpp"
#include "fewsel/tape.hpp"
#include "fewsel/trainer.hpp"
