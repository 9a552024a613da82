#pragma once

#include "sfad/checkpoint.hpp"
#include "sfad/config.hpp"
#include "sfad/data.hpp"
#include "sfad/decouple.hpp"
#include "sfad/error.hpp"
#include "sfad/gradcheck.hpp"
#include "sfad/graph.hpp"
#include "sfad/network.hpp"
#include "sfad/ops.hpp"
#include "sfad/optim.hpp"
#include "sfad/platform.hpp"
#include "sfad/rng.hpp"
#include "sfad/run.hpp"
#include "sfad/tensor.hpp"
#include "sfad/train.hpp"
