#pragma once

#include "svlift/error.hpp"
#include "svlift/rng.hpp"
#include "svlift/kernels.hpp"
#include "svlift/liftspace.hpp"
#include "svlift/coefficients.hpp"
#include "svlift/parallel.hpp"
#include "svlift/dynamics.hpp"
#include "svlift/gauss.hpp"
#include "svlift/coupling.hpp"
#include "svlift/serialize.hpp"
#include "svlift/config.hpp"
#include "svlift/experiments.hpp"
