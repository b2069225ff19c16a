// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rmtrack/linalg.hpp"
#include "rmtrack/scenario.hpp"
#include "rmtrack/radiomap.hpp"
#include "rmtrack/sensing.hpp"
#include "rmtrack/tracker.hpp"
#include "rmtrack/mapbuilder.hpp"
#include "rmtrack/metrics.hpp"
#include "rmtrack/baselines.hpp"
#include "rmtrack/config.hpp"
#include "rmtrack/experiment.hpp"
