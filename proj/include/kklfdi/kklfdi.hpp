#pragma once

#include "kklfdi/config.hpp"
#include "kklfdi/core.hpp"
#include "kklfdi/dynamics.hpp"
#include "kklfdi/experiment.hpp"
#include "kklfdi/faults.hpp"
#include "kklfdi/fdi.hpp"
#include "kklfdi/io.hpp"
#include "kklfdi/mlp.hpp"
#include "kklfdi/observer.hpp"
#include "kklfdi/pipeline.hpp"
#include "kklfdi/training.hpp"
#include "kklfdi/verify.hpp"
