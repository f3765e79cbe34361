#pragma once

#include "mflq/affine.hpp"
#include "mflq/core.hpp"
#include "mflq/gre.hpp"
#include "mflq/linalg.hpp"
#include "mflq/moments.hpp"
#include "mflq/presets.hpp"
#include "mflq/sim.hpp"
#include "mflq/synthesis.hpp"
#include "mflq/verify.hpp"
