#pragma once

#include "hcl/core.hpp"
#include "hcl/downstream.hpp"
#include "hcl/experiment.hpp"
#include "hcl/hierarchy.hpp"
#include "hcl/io.hpp"
#include "hcl/metrics.hpp"
#include "hcl/plot.hpp"
#include "hcl/simulate.hpp"
#include "hcl/spectral.hpp"
#include "hcl/train.hpp"
