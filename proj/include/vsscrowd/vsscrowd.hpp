#pragma once

// Umbrella header: the whole library in dependency order.

#include "vsscrowd/common.hpp"
#include "vsscrowd/tensor.hpp"
#include "vsscrowd/ops.hpp"
#include "vsscrowd/gradcheck.hpp"
#include "vsscrowd/layers.hpp"
#include "vsscrowd/scan.hpp"
#include "vsscrowd/backbone.hpp"
#include "vsscrowd/attention.hpp"
#include "vsscrowd/fusion.hpp"
#include "vsscrowd/points.hpp"
#include "vsscrowd/head.hpp"
#include "vsscrowd/matching.hpp"
#include "vsscrowd/metrics.hpp"
#include "vsscrowd/pnm.hpp"
#include "vsscrowd/data.hpp"
#include "vsscrowd/config.hpp"
#include "vsscrowd/model.hpp"
#include "vsscrowd/train.hpp"
#include "vsscrowd/pipeline.hpp"
