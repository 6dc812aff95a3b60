#pragma once

#include "fluxop/bench.hpp"
#include "fluxop/binary_io.hpp"
#include "fluxop/checkpoint.hpp"
#include "fluxop/config.hpp"
#include "fluxop/conv1d.hpp"
#include "fluxop/dataset.hpp"
#include "fluxop/error.hpp"
#include "fluxop/field_io.hpp"
#include "fluxop/geometry.hpp"
#include "fluxop/gradcheck.hpp"
#include "fluxop/loss.hpp"
#include "fluxop/metrics.hpp"
#include "fluxop/models.hpp"
#include "fluxop/nn.hpp"
#include "fluxop/parallel.hpp"
#include "fluxop/rng.hpp"
#include "fluxop/source_model.hpp"
#include "fluxop/tally.hpp"
#include "fluxop/training.hpp"
#include "fluxop/transport.hpp"
