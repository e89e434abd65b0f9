#pragma once

// SPDX-License-Identifier: Apache-2.0

// Umbrella header for the whole library. The CLI and HTTP service headers
// are separate because they pull in CLI11 and cpp-httplib.

#include "fist/dataprep.hpp"
#include "fist/error.hpp"
#include "fist/gateway.hpp"
#include "fist/io.hpp"
#include "fist/kg.hpp"
#include "fist/metrics.hpp"
#include "fist/monitor.hpp"
#include "fist/pipeline.hpp"
#include "fist/random.hpp"
#include "fist/sentences.hpp"
#include "fist/synth.hpp"
#include "fist/text.hpp"
