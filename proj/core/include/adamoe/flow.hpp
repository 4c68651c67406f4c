// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Straight-path conditional flow matching over action chunks.
//   noisy  = (1 - tau) * clean + tau * noise
//   target = noise - clean
// Inference integrates from tau = 1 (pure noise) to tau = 0 with N Euler steps.

#pragma once

#include <functional>

#include "adamoe/rng.hpp"
#include "adamoe/tensor.hpp"
#include "adamoe/types.hpp"

namespace adamoe {

struct FlowSample {
    ActionChunk clean;
    ActionChunk noise;
    double tau = 0.0;
    ActionChunk noisy;
    ActionChunk target;
};

struct IntegrationConfig {
    std::size_t steps = 10;

    double dt() const { return 1.0 / static_cast<double>(steps); }
    void validate() const;
};

/// noise ~ N(0, I), tau ~ U[0, 1).
FlowSample make_flow_sample(const ActionChunk& clean, Rng& rng);
/// Deterministic construction from explicit noise and tau.
FlowSample make_flow_sample(const ActionChunk& clean, const ActionChunk& noise, double tau);

/// Mean squared error between predicted velocity [H, d_a] and the sample target.
Tensor fm_loss(const Tensor& v_pred, const FlowSample& sample);

Tensor chunk_tensor(const ActionChunk& chunk, bool requires_grad = false);
ActionChunk tensor_chunk(const Tensor& t);

using VelocityField = std::function<ActionChunk(const ActionChunk& noisy, const Observation& obs, double tau)>;

/// A <- A - dt * v(A, obs, tau) for tau = 1, 1 - dt, ..., dt; returns A at tau = 0.
ActionChunk integrate(const VelocityField& field, const Observation& obs, const ActionChunk& start,
                      const IntegrationConfig& cfg);

}  // namespace adamoe
