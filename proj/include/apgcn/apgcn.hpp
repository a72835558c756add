#pragma once

#include "apgcn/bundle_io.hpp"
#include "apgcn/dense.hpp"
#include "apgcn/error.hpp"
#include "apgcn/graph.hpp"
#include "apgcn/model.hpp"
#include "apgcn/nn.hpp"
#include "apgcn/protocol.hpp"
#include "apgcn/rng.hpp"
#include "apgcn/training.hpp"
