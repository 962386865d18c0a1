#pragma once

// Umbrella header.

#include "slidegcd/autodiff.hpp"
#include "slidegcd/bag_io.hpp"
#include "slidegcd/checkpoint.hpp"
#include "slidegcd/config.hpp"
#include "slidegcd/dataset.hpp"
#include "slidegcd/error.hpp"
#include "slidegcd/gradcheck.hpp"
#include "slidegcd/hgcn.hpp"
#include "slidegcd/losses.hpp"
#include "slidegcd/matrix.hpp"
#include "slidegcd/metrics.hpp"
#include "slidegcd/mil_backbone.hpp"
#include "slidegcd/node_buffer.hpp"
#include "slidegcd/optim.hpp"
#include "slidegcd/pipeline_check.hpp"
#include "slidegcd/slide_graph.hpp"
#include "slidegcd/trainer.hpp"
