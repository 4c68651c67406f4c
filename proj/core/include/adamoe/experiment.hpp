// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adamoe/analysis.hpp"
#include "adamoe/evaluate.hpp"
#include "adamoe/training.hpp"

namespace adamoe {

struct GridCell {
    Variant variant = Variant::AdaMoE;
    std::size_t num_experts = 4;
    std::size_t top_k = 1;
    double lambda_balance = 0.01;

    std::string label() const;
    bool operator==(const GridCell&) const = default;
};

/// Training protocol per seed: a dense model is trained for `pretrain_steps`,
/// then every cell fine-tunes for `finetune_steps` (dense cells keep training
/// the dense weights, MoE cells start from upcycle()). With pretrain_steps = 0
/// each cell trains from scratch for `finetune_steps`.
struct ExperimentSpec {
    ModelConfig model;
    TrainConfig train;
    std::size_t pretrain_steps = 0;
    std::size_t finetune_steps = 1000;
    std::vector<GridCell> cells;
    std::vector<std::uint64_t> seeds{0};
    std::vector<TaskSpec> tasks;
    EvalConfig eval;
    std::size_t denoise_steps = 10;
    bool eval_ema = true;
    /// Samples used for the per-run balance report.
    std::size_t balance_samples = 256;
};

struct CellRun {
    GridCell cell;
    std::uint64_t seed = 0;
    std::vector<EvalResult> results;  // one per task
    double average = 0.0;
    double final_loss_fm = 0.0;
    double collapse_score = 0.0;
    bool failed = false;
    std::string error;
};

struct ResultRow {
    GridCell cell;
    std::vector<std::uint64_t> seeds;
    std::vector<double> rates;    // mean over seeds, per task
    std::vector<Interval> ci;     // Wilson interval on pooled trials, per task
    double average = 0.0;         // mean of `rates`
    std::size_t failures = 0;
};

struct ExperimentResults {
    std::vector<std::string> tasks;
    std::vector<CellRun> runs;
    std::vector<ResultRow> rows;  // dense rows first, then grid order
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates every (cell, seed) pair. A failing cell is recorded
/// and the grid continues.
ExperimentResults run_experiment(const ExperimentSpec& spec, const std::vector<TrajectoryStep>& data,
                                 const ProgressFn& progress = {});

/// Aggregates per-seed runs into table rows.
std::vector<ResultRow> aggregate_runs(const std::vector<CellRun>& runs, std::size_t num_tasks);

ModelConfig cell_model_config(const ModelConfig& base, const GridCell& cell);

std::string results_markdown(const ExperimentResults& results);
std::string results_csv(const ExperimentResults& results);
std::string results_json(const ExperimentResults& results);

}  // namespace adamoe
