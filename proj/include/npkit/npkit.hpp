#pragma once

#include "npkit/autodiff.hpp"
#include "npkit/checkpoint.hpp"
#include "npkit/config.hpp"
#include "npkit/dataio.hpp"
#include "npkit/diagnostics.hpp"
#include "npkit/distributions.hpp"
#include "npkit/errors.hpp"
#include "npkit/model.hpp"
#include "npkit/objectives.hpp"
#include "npkit/random.hpp"
#include "npkit/synthdata.hpp"
#include "npkit/tensor.hpp"
#include "npkit/training.hpp"
