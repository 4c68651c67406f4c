// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared + routed expert feedforward layer with three gating variants:
//
//   Vanilla  w_i = softmax(R(x))_i                 (selection and weight coupled)
//   AdaMoE   w_i = S_i(x) + softmax(R(x))_i        (additive scale adapter)
//   CSMoE    w_i = Head([x, softmax(R(x))])_i      (concatenated scale adapter)
//
// In every variant the top-k selection is taken on softmax(R(x)) only, and
//   y = F_shared(x) + sum_{i in top-k} w_i(x) F_i(x).

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adamoe/params.hpp"
#include "adamoe/rng.hpp"
#include "adamoe/tensor.hpp"

namespace adamoe {

enum class Variant { Dense, Vanilla, CSMoE, AdaMoE };

std::string variant_name(Variant v);
/// Accepts dense | vanilla | csmoe | adamoe (case-insensitive).
Variant parse_variant(std::string_view name);

struct ExpertFFN {
    Tensor up;    // [d_model, d_ff]
    Tensor down;  // [d_ff, d_model]

    std::size_t d_model() const { return up.dim(0); }
    std::size_t d_ff() const { return up.dim(1); }

    /// silu(x W_up) W_down
    Tensor forward(const Tensor& x) const;

    static ExpertFFN init(std::size_t d_model, std::size_t d_ff, Rng& rng);
    ExpertFFN copy() const { return {up.clone(true), down.clone(true)}; }
    void append_params(ParamList& out, const std::string& prefix) const;
};

struct Router {
    Linear map;  // d_model -> K
};

/// Same architecture as Router; zero at construction.
struct ScaleAdapter {
    Linear map;  // d_model -> K
};

struct CSMoEHead {
    Linear map;  // d_model + K -> K
};

struct MoEConfig {
    std::size_t num_experts = 4;  // K
    std::size_t top_k = 1;        // k
    Variant variant = Variant::AdaMoE;
    double alpha = 1.0;           // balance-loss inner coefficient
    std::size_t d_model = 64;
    std::size_t d_ff = 256;

    /// Throws ConfigError unless 1 <= k <= K, alpha >= 0 and widths are positive.
    void validate() const;
};

/// Per-token routing outcome for one MoE layer invocation.
struct RoutingDecision {
    std::size_t num_tokens = 0;
    std::size_t num_experts = 0;
    std::size_t top_k = 0;
    /// [num_tokens * top_k], each row ordered by descending router probability.
    std::vector<std::size_t> selected;
    /// [num_tokens, top_k] final gating weights (differentiable).
    Tensor weights;
    /// [num_tokens, num_experts] router softmax before top-k (differentiable).
    Tensor probs;

    std::size_t expert(std::size_t token, std::size_t slot) const { return selected[token * top_k + slot]; }
};

/// Indices of the k largest values; ties go to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

struct ExpertLoad {
    std::vector<double> fraction;   // f_i, sums to k
    std::vector<double> mean_prob;  // P_i, sums to 1
};

ExpertLoad expert_load_stats(const RoutingDecision& decision);

class MoELayer {
  public:
    MoELayer(MoEConfig cfg, ExpertFFN shared, std::vector<ExpertFFN> routed, Router router,
             std::optional<ScaleAdapter> adapter = std::nullopt, std::optional<CSMoEHead> head = std::nullopt,
             std::size_t layer_id = 0);

    const MoEConfig& config() const { return cfg_; }
    std::size_t layer_id() const { return layer_id_; }

    const ExpertFFN& shared() const { return shared_; }
    const std::vector<ExpertFFN>& routed() const { return routed_; }
    const Router& router() const { return router_; }
    const std::optional<ScaleAdapter>& scale_adapter() const { return adapter_; }
    const std::optional<CSMoEHead>& csmoe_head() const { return head_; }

    ExpertFFN& mutable_routed(std::size_t i) { return routed_.at(i); }
    std::optional<ScaleAdapter>& mutable_scale_adapter() { return adapter_; }
    std::optional<CSMoEHead>& mutable_csmoe_head() { return head_; }

    void append_params(ParamList& out, const std::string& prefix) const;
    std::size_t parameter_count() const;

  private:
    MoEConfig cfg_;
    ExpertFFN shared_;
    std::vector<ExpertFFN> routed_;
    Router router_;
    std::optional<ScaleAdapter> adapter_;
    std::optional<CSMoEHead> head_;
    std::size_t layer_id_;
};

RoutingDecision route_vanilla(const MoELayer& layer, const Tensor& x);
/// Requires a scale adapter.
RoutingDecision route_adamoe(const MoELayer& layer, const Tensor& x);
/// Requires a CSMoE head.
RoutingDecision route_csmoe(const MoELayer& layer, const Tensor& x);
/// Dispatches on the layer's configured variant.
RoutingDecision route(const MoELayer& layer, const Tensor& x);

struct MoEForwardOptions {
    /// Drop every routed contribution, leaving y = F_shared(x).
    bool zero_routed = false;
};

struct MoEOutput {
    Tensor y;
    RoutingDecision decision;
};

MoEOutput moe_forward(const Tensor& x, const MoELayer& layer, const MoEForwardOptions& options = {});

/// alpha * K * sum_i f_i P_i with f_i held constant.
Tensor load_balance_loss(const RoutingDecision& decision, const MoEConfig& cfg);

/// Shared expert and all K routed experts copy `dense`; router ~ N(0, 0.02^2)
/// with zero bias; scale adapter zero; CSMoE head passes the router
/// probabilities through unchanged.
MoELayer upcycle_from_dense(const ExpertFFN& dense, const MoEConfig& cfg, Rng& rng, std::size_t layer_id = 0);

constexpr double kRouterInitStd = 0.02;

}  // namespace adamoe
