// SPDX-License-Identifier: Apache-2.0
#pragma once

// Umbrella header for the delta attention library.

#include "deltattn/delta_encoding.hpp"
#include "deltattn/delta_matmul.hpp"
#include "deltattn/errors.hpp"
#include "deltattn/experiment.hpp"
#include "deltattn/hybrid_attention.hpp"
#include "deltattn/kv_cache.hpp"
#include "deltattn/matrix.hpp"
#include "deltattn/metrics.hpp"
#include "deltattn/rng.hpp"
#include "deltattn/synthetic.hpp"
#include "deltattn/tensor_io.hpp"
