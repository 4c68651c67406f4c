// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Verifies that an upcycled model equals its dense parent with every MoE
// layer's feedforward scaled per token by (1 + sum of selected weights).

#pragma once

#include <cstdint>
#include <vector>

#include "adamoe/policy.hpp"

namespace adamoe {

struct UpcycleCheckReport {
    std::size_t inputs = 0;
    std::size_t num_experts = 0;
    /// Max |moe velocity - scaled dense velocity| over all inputs.
    double end_to_end_deviation = 0.0;
    /// Per layer, max |moe_forward(x) - (1 + sum w) F_dense(x)| on the layer's own input.
    std::vector<double> layer_deviation;
    std::size_t worst_layer = 0;
    double max_deviation = 0.0;
    bool passed = false;
};

/// Draws `inputs` random (observation, noisy chunk, tau) triples from `seed`.
UpcycleCheckReport check_upcycle_identity(const PolicyModel& dense, const PolicyModel& moe, std::size_t inputs,
                                          std::uint64_t seed, double tol = 1e-12);

}  // namespace adamoe
