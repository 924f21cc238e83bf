#pragma once

// Umbrella header.

#include "voxalign/geometry.hpp"
#include "voxalign/io.hpp"
#include "voxalign/metrics.hpp"
#include "voxalign/phantom.hpp"
#include "voxalign/pipeline.hpp"
#include "voxalign/plane_fit.hpp"
#include "voxalign/sampler.hpp"
#include "voxalign/volume.hpp"
