#pragma once

#include "gatenet/checkpoint.hpp"
#include "gatenet/config.hpp"
#include "gatenet/data.hpp"
#include "gatenet/gate.hpp"
#include "gatenet/gradcheck.hpp"
#include "gatenet/harness.hpp"
#include "gatenet/layers.hpp"
#include "gatenet/losses.hpp"
#include "gatenet/metrics.hpp"
#include "gatenet/optim.hpp"
#include "gatenet/rng.hpp"
#include "gatenet/tensor.hpp"
