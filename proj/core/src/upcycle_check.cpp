// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/upcycle_check.hpp"

#include <algorithm>
#include <cmath>

#include "adamoe/errors.hpp"

namespace adamoe {

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    const auto x = a.data();
    const auto y = b.data();
    if (x.size() != y.size()) throw DimensionError("upcycle check: output sizes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

/// (1 + sum_j w_j) * f per token.
Tensor scaled_by_weights(const Tensor& f, const RoutingDecision& d) {
    std::vector<double> wsum(d.num_tokens, 0.0);
    const auto w = d.weights.data();
    for (std::size_t t = 0; t < d.num_tokens; ++t) {
        for (std::size_t s = 0; s < d.top_k; ++s) wsum[t] += w[t * d.top_k + s];
    }
    return add(f, mul_rows(f, Tensor::from({d.num_tokens}, std::move(wsum))));
}

}  // namespace

UpcycleCheckReport check_upcycle_identity(const PolicyModel& dense, const PolicyModel& moe, std::size_t inputs,
                                          std::uint64_t seed, double tol) {
    const ModelConfig& dc = dense.config();
    const ModelConfig& mc = moe.config();
    if (dc.is_moe()) throw ConfigError("upcycle check: parent model is not dense");
    if (dc.layers != mc.layers || dc.d_model != mc.d_model || dc.horizon != mc.horizon) {
        throw ConfigError("upcycle check: dense and MoE models have different shapes");
    }
    NoGradGuard no_grad;
    UpcycleCheckReport rep;
    rep.inputs = inputs;
    rep.num_experts = mc.is_moe() ? mc.num_experts : 0;
    rep.layer_deviation.assign(mc.layers, 0.0);

    Rng rng(seed);
    for (std::size_t i = 0; i < inputs; ++i) {
        Observation obs;
        obs.task_id = rng.index(mc.num_tasks);
        for (std::size_t j = 0; j < mc.state_dim; ++j) obs.state.push_back(rng.uniform(-1.0, 1.0));
        for (std::size_t j = 0; j < mc.scene_dim; ++j) obs.scene.push_back(rng.uniform(-1.0, 1.0));
        ActionChunk noisy = ActionChunk::zeros(mc.horizon, mc.action_dim);
        for (double& v : noisy.values) v = rng.normal();
        const double tau = rng.uniform();
        const VelocityBatch batch{{obs}, {noisy}, {tau}};

        PolicyForwardOptions per_layer;
        per_layer.action_ffn_override = [&](std::size_t l, const Tensor& x) -> Tensor {
            const TransformerBlock& blk = moe.blocks()[l];
            if (!blk.moe) return blk.dense_ffn->forward(x);
            MoEOutput out = moe_forward(x, *blk.moe);
            const Tensor ref = scaled_by_weights(dense.blocks()[l].dense_ffn->forward(x), out.decision);
            rep.layer_deviation[l] = std::max(rep.layer_deviation[l], max_abs_diff(out.y, ref));
            return out.y;
        };
        const Tensor v_moe = moe.forward(batch, per_layer).velocity;

        PolicyForwardOptions scaled;
        scaled.action_ffn_override = [&](std::size_t l, const Tensor& x) -> Tensor {
            const Tensor f = dense.blocks()[l].dense_ffn->forward(x);
            const TransformerBlock& blk = moe.blocks()[l];
            if (!blk.moe) return f;
            return scaled_by_weights(f, route(*blk.moe, x));
        };
        const Tensor v_ref = dense.forward(batch, scaled).velocity;
        rep.end_to_end_deviation = std::max(rep.end_to_end_deviation, max_abs_diff(v_moe, v_ref));
    }
    rep.max_deviation = rep.end_to_end_deviation;
    for (std::size_t l = 0; l < rep.layer_deviation.size(); ++l) {
        if (rep.layer_deviation[l] > rep.layer_deviation[rep.worst_layer]) rep.worst_layer = l;
        rep.max_deviation = std::max(rep.max_deviation, rep.layer_deviation[l]);
    }
    rep.passed = rep.max_deviation <= tol;
    return rep;
}

}  // namespace adamoe
