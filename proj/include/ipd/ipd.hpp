#pragma once

#include "ipd/error.hpp"
#include "ipd/rng.hpp"
#include "ipd/graph.hpp"
#include "ipd/linops.hpp"
#include "ipd/smooth.hpp"
#include "ipd/prox.hpp"
#include "ipd/trace.hpp"
#include "ipd/km_engine.hpp"
#include "ipd/pd_algorithms.hpp"
#include "ipd/minibatch.hpp"
#include "ipd/distnet.hpp"
