#pragma once

#include "uavckm/errors.hpp"
#include "uavckm/geometry.hpp"
#include "uavckm/world_io.hpp"
#include "uavckm/channel.hpp"
#include "uavckm/positioning.hpp"
#include "uavckm/nn.hpp"
#include "uavckm/weights_io.hpp"
#include "uavckm/ckm.hpp"
#include "uavckm/scheduler.hpp"
#include "uavckm/env.hpp"
#include "uavckm/ppo.hpp"
#include "uavckm/harness.hpp"
