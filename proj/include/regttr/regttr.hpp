#pragma once

// Umbrella header for the registration test-time refinement engine.

#include "regttr/core.hpp"
#include "regttr/io.hpp"
#include "regttr/loss.hpp"
#include "regttr/metrics.hpp"
#include "regttr/parallel.hpp"
#include "regttr/refine.hpp"
#include "regttr/synth.hpp"
#include "regttr/warp.hpp"
