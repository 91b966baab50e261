#ifndef TCINET_TCINET_HPP
#define TCINET_TCINET_HPP

// Umbrella header for the TCINet time-series causal-inference toolkit.

#include "tcinet/density.hpp"
#include "tcinet/errors.hpp"
#include "tcinet/experiment.hpp"
#include "tcinet/inference.hpp"
#include "tcinet/metrics.hpp"
#include "tcinet/neural.hpp"
#include "tcinet/pom.hpp"
#include "tcinet/rng.hpp"
#include "tcinet/synthgen.hpp"
#include "tcinet/timeseries.hpp"

#endif
