// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adamoe/bench_env.hpp"
#include "adamoe/types.hpp"

namespace adamoe {

struct TrajectoryStep {
    Observation obs;
    ActionChunk chunk;  // next H expert actions, last one repeated past the episode end

    bool operator==(const TrajectoryStep&) const = default;
};

struct Trajectory {
    std::size_t task_id = 0;
    std::uint64_t seed = 0;
    bool success = false;
    std::vector<TrajectoryStep> steps;

    bool operator==(const Trajectory&) const = default;
};

/// Rolls out expert_action from env_reset(spec, seed).
Trajectory scripted_expert(const TaskSpec& spec, std::uint64_t seed, std::size_t horizon);

/// Re-executes chunk[0] of every step from the reset state. True when every
/// stored observation and the success flag are reproduced exactly.
bool replay_matches(const Trajectory& traj);

std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& line);

struct TaskCount {
    std::string name;
    std::size_t task_id = 0;
    std::size_t requested = 0;
    std::size_t written = 0;
    std::size_t failures = 0;
    std::vector<std::uint64_t> seeds;  // of written records

    double success_rate() const {
        return requested == 0 ? 0.0 : static_cast<double>(requested - failures) / static_cast<double>(requested);
    }
};

struct DatasetManifest {
    std::string generator_version;
    std::uint64_t master_seed = 0;
    std::size_t horizon = 0;
    std::vector<TaskCount> tasks;

    std::size_t total_records() const;
    std::size_t total_failures() const;
    std::size_t total_requested() const;
};

inline constexpr const char* kGeneratorVersion = "adamoe-bench/1";

/// Per-episode seeds are derive_seed(master, task_id, index).
DatasetManifest generate_dataset(const std::vector<TaskSpec>& specs, std::size_t per_task, std::uint64_t seed,
                                 std::size_t horizon, const std::filesystem::path& out);

/// data.jsonl -> data.manifest.json
std::filesystem::path manifest_path(const std::filesystem::path& dataset);
std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::vector<Trajectory> load_dataset(const std::filesystem::path& path);

/// Flattened (observation, chunk) pairs for training: chunks truncated to
/// `horizon` rows and divided by kActionScale.
std::vector<TrajectoryStep> dataset_samples(const std::vector<Trajectory>& data, std::size_t horizon);

}  // namespace adamoe
