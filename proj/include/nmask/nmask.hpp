#pragma once

// Umbrella header.

#include "nmask/checkpoint.hpp"
#include "nmask/config.hpp"
#include "nmask/data.hpp"
#include "nmask/distributions.hpp"
#include "nmask/error.hpp"
#include "nmask/gradcheck.hpp"
#include "nmask/gradsuite.hpp"
#include "nmask/histogram.hpp"
#include "nmask/io.hpp"
#include "nmask/mask.hpp"
#include "nmask/metrics.hpp"
#include "nmask/networks.hpp"
#include "nmask/ops.hpp"
#include "nmask/optim.hpp"
#include "nmask/probes.hpp"
#include "nmask/rng.hpp"
#include "nmask/special.hpp"
#include "nmask/tensor.hpp"
#include "nmask/training.hpp"
