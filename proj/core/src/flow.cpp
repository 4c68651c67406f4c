// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/flow.hpp"

#include <cmath>

#include "adamoe/errors.hpp"

namespace adamoe {

void IntegrationConfig::validate() const {
    if (steps == 0) {
        throw ConfigError("integration needs at least one Euler step");
    }
}

FlowSample make_flow_sample(const ActionChunk& clean, const ActionChunk& noise, double tau) {
    if (!clean.same_shape(noise)) {
        throw DimensionError("flow sample: clean and noise chunks differ in shape");
    }
    FlowSample s;
    s.clean = clean;
    s.noise = noise;
    s.tau = tau;
    s.noisy = clean;
    s.target = clean;
    for (std::size_t i = 0; i < clean.values.size(); ++i) {
        s.noisy.values[i] = (1.0 - tau) * clean.values[i] + tau * noise.values[i];
        s.target.values[i] = noise.values[i] - clean.values[i];
    }
    return s;
}

FlowSample make_flow_sample(const ActionChunk& clean, Rng& rng) {
    ActionChunk noise = ActionChunk::zeros(clean.horizon, clean.action_dim);
    for (double& v : noise.values) {
        v = rng.normal();
    }
    const double tau = rng.uniform();
    return make_flow_sample(clean, noise, tau);
}

Tensor chunk_tensor(const ActionChunk& chunk, bool requires_grad) {
    return Tensor::from({chunk.horizon, chunk.action_dim}, chunk.values, requires_grad);
}

ActionChunk tensor_chunk(const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError("expected a rank-2 chunk tensor, got " + shape_str(t.shape()));
    }
    return {t.dim(0), t.dim(1), t.to_vector()};
}

Tensor fm_loss(const Tensor& v_pred, const FlowSample& sample) {
    const Tensor target = chunk_tensor(sample.target);
    if (v_pred.shape() != target.shape()) {
        throw DimensionError("fm_loss: prediction " + shape_str(v_pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    return mse(v_pred, target);
}

ActionChunk integrate(const VelocityField& field, const Observation& obs, const ActionChunk& start,
                      const IntegrationConfig& cfg) {
    cfg.validate();
    const double dt = cfg.dt();
    ActionChunk a = start;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        const double tau = static_cast<double>(cfg.steps - s) / static_cast<double>(cfg.steps);
        const ActionChunk v = field(a, obs, tau);
        if (!v.same_shape(a)) {
            throw DimensionError("integrate: velocity shape differs from the chunk at step " + std::to_string(s));
        }
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            if (!std::isfinite(v.values[i])) {
                throw NumericalError("integrate: non-finite velocity at step " + std::to_string(s));
            }
            a.values[i] -= dt * v.values[i];
        }
    }
    return a;
}

}  // namespace adamoe
