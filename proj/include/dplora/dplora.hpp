#pragma once

// Umbrella header: the whole simulator is header-only under this directory.

#include "dplora/config.hpp"
#include "dplora/datagen.hpp"
#include "dplora/errors.hpp"
#include "dplora/federation.hpp"
#include "dplora/ledger.hpp"
#include "dplora/linear.hpp"
#include "dplora/lora.hpp"
#include "dplora/matrix.hpp"
#include "dplora/metrics.hpp"
#include "dplora/privacy.hpp"
#include "dplora/rng.hpp"
