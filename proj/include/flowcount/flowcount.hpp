#pragma once

// Umbrella header.

#include "checkpoint.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "evaluate.hpp"
#include "field_io.hpp"
#include "flowgrid.hpp"
#include "image.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "oracle.hpp"
#include "tensor.hpp"
#include "training.hpp"
#include "visuals.hpp"
