#pragma once

#include "ovtrack/core_types.hpp"
#include "ovtrack/core_io.hpp"
#include "ovtrack/motion.hpp"
#include "ovtrack/perception.hpp"
#include "ovtrack/engine.hpp"
#include "ovtrack/track_io.hpp"
#include "ovtrack/simulator.hpp"
#include "ovtrack/hungarian.hpp"
#include "ovtrack/metrics.hpp"
