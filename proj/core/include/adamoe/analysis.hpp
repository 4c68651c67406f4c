// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert usage intensity: for frame t and expert i,
//   Intensity_i(t) = (1/T) sum_s N_i^(s)(t) / N_total(t)
// where N_i counts top-k selections of expert i among the action tokens at
// denoising step s. Per frame the intensities sum to k.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adamoe/dataset.hpp"
#include "adamoe/evaluate.hpp"
#include "adamoe/moe.hpp"
#include "adamoe/policy.hpp"

namespace adamoe {

struct IntensityTrace {
    std::size_t layer = 0;
    std::size_t top_k = 1;
    std::size_t num_experts = 1;
    std::size_t denoise_steps = 10;
    std::size_t task_id = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> values;  // [frame][expert]

    std::size_t frames() const { return values.size(); }
    bool operator==(const IntensityTrace&) const = default;
};

/// Averages selection fractions over the decisions of one frame (one per denoising step).
std::vector<double> frame_intensity(const std::vector<RoutingDecision>& steps);

/// Runs predict_action_chunk on every frame and records the routing of `layer`.
/// Throws ConfigError when `layer` is not an MoE layer of the model.
IntensityTrace expert_usage_intensity(const PolicyModel& model, const std::vector<Observation>& frames,
                                      std::size_t layer, std::size_t denoise_steps, std::uint64_t seed);

/// Observations visited by one receding-horizon episode of `policy`.
std::vector<Observation> rollout_frames(ChunkPolicy& policy, const TaskSpec& spec, std::uint64_t seed,
                                        std::size_t execute);

/// Middle MoE layer of the model.
std::size_t default_analysis_layer(const ModelConfig& cfg);

struct LayerBalance {
    std::size_t layer = 0;
    std::vector<double> fraction;   // f_i, sums to k
    std::vector<double> mean_prob;  // P_i, sums to 1
    double collapse_score = 0.0;    // max_i f_i
    double entropy = 0.0;           // of f / k, natural log
};

struct BalanceReport {
    std::size_t tokens = 0;
    std::vector<LayerBalance> layers;
    double collapse_score = 0.0;  // max over layers
    bool collapsed = false;       // collapse_score > kCollapseThreshold

    static constexpr double kCollapseThreshold = 0.9;
};

/// Report for a single layer's worth of decisions.
BalanceReport balance_from_decisions(const std::vector<RoutingDecision>& decisions, std::size_t layer = 0);

/// One pass over the dataset samples with flow-matching noise drawn from
/// `seed`; `max_samples` = 0 uses every sample.
BalanceReport balance_report(const PolicyModel& model, const std::vector<TrajectoryStep>& data, std::uint64_t seed,
                             std::size_t max_samples = 0, std::size_t batch_size = 64);

std::string intensity_csv(const IntensityTrace& trace);
/// Parses rows back into `values`; metadata other than layer is not stored in the CSV.
IntensityTrace parse_intensity_csv(const std::string& text);
std::string intensity_svg(const IntensityTrace& trace);
std::string balance_json(const BalanceReport& report);

void emit_csv(const IntensityTrace& trace, const std::filesystem::path& path);
void emit_svg_heatmap(const IntensityTrace& trace, const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// {root}/{run_id}/{task}/layer{L}
std::filesystem::path intensity_stem(const std::filesystem::path& root, const std::string& run_id,
                                     const std::string& task, std::size_t layer);

}  // namespace adamoe
