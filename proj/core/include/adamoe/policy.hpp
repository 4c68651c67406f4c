// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy action expert: observation tokens + noisy action tokens run through a
// small pre-norm transformer whose feedforward sublayers are MoE layers on
// action tokens. Observation tokens only ever see the shared (or dense) FFN.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adamoe/flow.hpp"
#include "adamoe/moe.hpp"
#include "adamoe/params.hpp"
#include "adamoe/types.hpp"

namespace adamoe {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t horizon = 50;   // H
    std::size_t action_dim = 3; // d_a
    std::size_t state_dim = 3;  // d_q
    std::size_t scene_dim = 4;  // d_s
    std::size_t num_tasks = 3;
    std::size_t tau_embed = 32;

    Variant variant = Variant::AdaMoE;
    std::size_t num_experts = 4;
    std::size_t top_k = 1;
    double alpha = 1.0;
    /// Per-layer MoE substitution; empty means every layer.
    std::vector<bool> moe_layers;

    void validate() const;
    bool is_moe() const { return variant != Variant::Dense; }
    bool layer_is_moe(std::size_t layer) const;
    MoEConfig moe_config() const;
    /// Number of observation tokens preceding the action tokens.
    static constexpr std::size_t kObsTokens = 3;

    bool operator==(const ModelConfig&) const = default;
};

/// Canonical JSON text of a config and its 64-bit FNV-1a digest.
std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::uint64_t model_config_digest(const ModelConfig& cfg);

struct TransformerBlock {
    Tensor norm1;
    Linear wq, wk, wv, wo;
    Tensor norm2;
    std::optional<ExpertFFN> dense_ffn;
    std::optional<MoELayer> moe;
};

/// One training or inference batch for the velocity network.
struct VelocityBatch {
    std::vector<Observation> obs;
    std::vector<ActionChunk> noisy;
    std::vector<double> tau;

    std::size_t size() const { return obs.size(); }
};

struct PolicyForwardOptions {
    /// Forwarded to every MoE layer.
    bool zero_routed = false;
    /// Replaces the feedforward applied to action tokens in layer `l`;
    /// receives the normalized action rows [B*H, d_model].
    std::function<Tensor(std::size_t layer, const Tensor& action_rows)> action_ffn_override;
};

struct PolicyOutput {
    Tensor velocity;                         // [B*H, d_a]
    std::vector<RoutingDecision> decisions;  // one per MoE layer, in layer order
    std::vector<std::size_t> decision_layers;
};

using DecisionObserver = std::function<void(std::size_t step, const PolicyOutput& out)>;

class PolicyModel {
  public:
    /// Fresh model. MoE variants are built by upcycling freshly initialized dense FFNs.
    static PolicyModel create(const ModelConfig& cfg, Rng& rng);
    /// Copies every non-FFN parameter of `dense` and upcycles each FFN selected
    /// by `moe_cfg.moe_layers`. Throws ConfigError on width mismatch.
    static PolicyModel upcycle(const PolicyModel& dense, const ModelConfig& moe_cfg, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<TransformerBlock>& blocks() const { return blocks_; }
    std::vector<TransformerBlock>& mutable_blocks() { return blocks_; }

    ParamList parameters() const;
    std::size_t parameter_count() const;
    /// Parameters of layer `l`'s feedforward sublayer (experts, router, adapter, head).
    std::size_t ffn_parameter_count(std::size_t layer) const;

    /// Observation tokens [3, d_model]: state, scene, task.
    Tensor encode_observation(const Observation& obs) const;

    PolicyOutput forward(const VelocityBatch& batch, const PolicyForwardOptions& options = {}) const;

    /// Single-sample velocity; decisions are appended when `out` is non-null.
    ActionChunk velocity(const ActionChunk& noisy, const Observation& obs, double tau,
                         PolicyOutput* out = nullptr) const;

    /// Euler-integrates from fresh N(0, I) noise; `observer` sees every step's forward output.
    ActionChunk predict_action_chunk(const Observation& obs, Rng& rng, std::size_t steps = 10,
                                     const DecisionObserver& observer = {}) const;

    void check_observation(const Observation& obs) const;

  private:
    explicit PolicyModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}

    ModelConfig cfg_;
    Linear state_proj_;
    Linear scene_proj_;
    Tensor task_table_;  // [num_tasks, d_model]
    Linear action_proj_;
    Tensor pos_embed_;   // [H, d_model]
    Linear tau_proj_;
    std::vector<TransformerBlock> blocks_;
    Tensor final_norm_;
    Linear out_proj_;
};

/// Sinusoidal embedding of tau in [0, 1]; width must be even.
std::vector<double> tau_embedding(double tau, std::size_t width);

}  // namespace adamoe
