// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedboost/aggregate.hpp"
#include "fedboost/bigint.hpp"
#include "fedboost/dataset.hpp"
#include "fedboost/encrypted_gradient.hpp"
#include "fedboost/error.hpp"
#include "fedboost/experiment.hpp"
#include "fedboost/message.hpp"
#include "fedboost/model.hpp"
#include "fedboost/paillier.hpp"
#include "fedboost/protocol.hpp"
#include "fedboost/quantize.hpp"
#include "fedboost/rng.hpp"
#include "fedboost/sample.hpp"
#include "fedboost/transport.hpp"
