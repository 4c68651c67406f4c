// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// L_total = L_fm + lambda_balance * mean_l L_balance(l), optimized with
// two-group AdamW, global-norm clipping, EMA shadowing and a warmup-cosine
// schedule.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adamoe/dataset.hpp"
#include "adamoe/flow.hpp"
#include "adamoe/optim.hpp"
#include "adamoe/policy.hpp"
#include "adamoe/rng.hpp"

namespace adamoe {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t total_steps = 5000;
    double peak_lr = 3e-4;
    double router_lr_ratio = 2.0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;
    double ema_decay = 0.99;
    double lambda_balance = 0.01;
    double warmup_fraction = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t warmup_steps() const;
    LrSchedule schedule() const;

    /// Paper-scale values: peak 2.5e-5, router 5e-5, 120k steps.
    static TrainConfig paper_preset();

    bool operator==(const TrainConfig&) const = default;
};

struct TrainBatch {
    std::vector<Observation> obs;
    std::vector<FlowSample> samples;

    std::size_t size() const { return obs.size(); }
};

struct LossTerms {
    Tensor total;
    double fm = 0.0;
    /// Unweighted mean over MoE layers; zero for dense models.
    double balance = 0.0;
    /// lambda_balance * balance as it entered the total.
    double balance_term = 0.0;
    double total_value = 0.0;
    std::vector<std::size_t> moe_layers;
    std::vector<ExpertLoad> loads;  // one per MoE layer
};

LossTerms total_loss(const PolicyModel& model, const TrainBatch& batch, double lambda_balance);

TrainBatch sample_batch(const std::vector<TrajectoryStep>& data, std::size_t batch_size, Rng& rng);

struct StepMetrics {
    std::size_t step = 0;  // 1-based index of the completed update
    double loss_total = 0.0;
    double loss_fm = 0.0;
    double loss_balance = 0.0;  // weighted term
    double grad_norm = 0.0;
    double lr_base = 0.0;
    double lr_router = 0.0;
    std::vector<std::size_t> moe_layers;
    std::vector<std::vector<double>> fractions;  // [layer][expert]
};

class Trainer {
  public:
    Trainer(PolicyModel model, TrainConfig cfg, std::vector<TrajectoryStep> data);

    /// Samples a batch and applies one update.
    StepMetrics step();
    /// One update on a caller-supplied batch.
    StepMetrics step_on(const TrainBatch& batch);

    const PolicyModel& model() const { return model_; }
    PolicyModel& mutable_model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    std::size_t step_count() const { return opt_.step_count(); }
    Rng& rng() { return rng_; }
    const Rng& rng() const { return rng_; }
    AdamW& optimizer() { return opt_; }
    const AdamW& optimizer() const { return opt_; }
    Ema& ema() { return ema_; }
    const Ema& ema() const { return ema_; }
    const ParamList& params() const { return params_; }

    /// Deep copy of the model with EMA shadow weights.
    PolicyModel ema_model() const;

  private:
    PolicyModel model_;
    TrainConfig cfg_;
    std::vector<TrajectoryStep> data_;
    ParamList params_;
    AdamW opt_;
    Ema ema_;
    Rng rng_;
    LrSchedule schedule_;
};

/// Deep copy with fresh leaf tensors.
PolicyModel clone_model(const PolicyModel& model);
/// Overwrites parameter values in parameters() order.
void assign_parameters(const ParamList& dst, const std::vector<std::vector<double>>& values);

/// Append-only metrics CSV.
class MetricsWriter {
  public:
    MetricsWriter(const std::filesystem::path& path, const ModelConfig& cfg);
    void append(const StepMetrics& m);
    static std::string header(const ModelConfig& cfg);
    static std::string row(const StepMetrics& m);

  private:
    std::ofstream out_;
    std::filesystem::path path_;
};

}  // namespace adamoe
