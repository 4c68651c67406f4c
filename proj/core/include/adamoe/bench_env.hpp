// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// 2D point-effector manipulation benchmark with a scalar gripper.
//
// Action layout is (dx, dy, dg). The position delta is norm-clipped to 0.1,
// dg to [-0.5, 0.5]; gripper opening lives in [0, 1] with 1 = open.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adamoe/types.hpp"

namespace adamoe {

enum class TaskKind { Reach, PickPlace, Sequential };

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Vec2&) const = default;
};

double distance(Vec2 a, Vec2 b);

struct Box {
    double x_lo = 0.0, x_hi = 0.0;
    double y_lo = 0.0, y_hi = 0.0;

    bool inside_workspace() const;
};

struct TaskSpec {
    std::size_t task_id = 0;
    std::string name;
    TaskKind kind = TaskKind::Reach;
    Box effector_spawn;
    std::vector<Box> object_spawn;  // one per object
    std::vector<Vec2> goals;        // reach: effector goal; otherwise one per object
    double tolerance = 0.05;
    std::size_t max_steps = 60;

    void validate() const;
};

constexpr std::size_t kActionDim = 3;
constexpr std::size_t kStateDim = 3;
constexpr std::size_t kSceneDim = 4;
constexpr std::size_t kMaxObjects = 2;
constexpr double kMaxDelta = 0.1;
constexpr double kMaxGripperDelta = 0.5;
constexpr double kGraspRadius = 0.05;

/// Per-dimension action scale; policies work in units of these limits.
constexpr std::array<double, kActionDim> kActionScale = {kMaxDelta, kMaxDelta, kMaxGripperDelta};

/// Environment units -> policy units (divide by kActionScale) and back.
ActionChunk normalize_chunk(const ActionChunk& chunk);
ActionChunk denormalize_chunk(const ActionChunk& chunk);

/// reach, pick-place, sequential, in task-id order.
const std::vector<TaskSpec>& task_registry();
/// Throws RegistryError listing the known names.
const TaskSpec& find_task(std::string_view name);
const TaskSpec& task_by_id(std::size_t task_id);
std::string task_names();

struct EnvState {
    std::size_t task_id = 0;
    Vec2 effector;
    double gripper = 1.0;
    std::vector<Vec2> objects;
    std::optional<std::size_t> held;
    std::size_t step = 0;
    bool success = false;

    bool operator==(const EnvState&) const = default;
};

using Action = std::array<double, kActionDim>;

EnvState env_reset(const TaskSpec& spec, std::uint64_t seed);
EnvState env_step(const TaskSpec& spec, const EnvState& state, const Action& action);
bool task_satisfied(const TaskSpec& spec, const EnvState& state);
bool episode_done(const TaskSpec& spec, const EnvState& state);

Observation observe(const EnvState& state);
/// Rebuilds the environment state visible in an observation (step counter and
/// success flag are not observable and come back as zero / false).
EnvState state_from_observation(const Observation& obs);

/// Proportional controller with gripper scheduling. Depends only on the
/// observation, so the same rule drives data generation and evaluation.
Action expert_action(const TaskSpec& spec, const Observation& obs);

}  // namespace adamoe
