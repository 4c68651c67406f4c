// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/bench_env.hpp"

#include <algorithm>
#include <cmath>

#include "adamoe/errors.hpp"
#include "adamoe/rng.hpp"

namespace adamoe {

namespace {

constexpr double kArriveEps = 0.01;

bool in_unit(double v) { return v >= -1.0 && v <= 1.0; }

Vec2 sample_box(const Box& b, Rng& rng) {
    const double x = rng.uniform(b.x_lo, b.x_hi);
    const double y = rng.uniform(b.y_lo, b.y_hi);
    return {x, y};
}

Vec2 clip_delta(double dx, double dy) {
    const double n = std::hypot(dx, dy);
    if (n > kMaxDelta) {
        const double s = kMaxDelta / n;
        return {dx * s, dy * s};
    }
    return {dx, dy};
}

std::vector<TaskSpec> build_registry() {
    std::vector<TaskSpec> tasks;

    TaskSpec reach;
    reach.task_id = 0;
    reach.name = "reach";
    reach.kind = TaskKind::Reach;
    reach.effector_spawn = {-0.6, -0.2, -0.6, -0.2};
    reach.goals = {{0.4, 0.4}};
    reach.max_steps = 60;
    tasks.push_back(reach);

    TaskSpec pick;
    pick.task_id = 1;
    pick.name = "pick-place";
    pick.kind = TaskKind::PickPlace;
    pick.effector_spawn = {-0.2, 0.2, -0.2, 0.2};
    pick.object_spawn = {{-0.7, -0.3, 0.3, 0.7}};
    pick.goals = {{0.5, -0.5}};
    pick.max_steps = 120;
    tasks.push_back(pick);

    TaskSpec seq = pick;
    seq.task_id = 2;
    seq.name = "sequential";
    seq.kind = TaskKind::Sequential;
    seq.object_spawn.push_back({0.3, 0.7, 0.3, 0.7});
    seq.goals.push_back({-0.5, -0.5});
    seq.max_steps = 240;
    tasks.push_back(seq);

    for (const auto& t : tasks) t.validate();
    return tasks;
}

/// Index of the object the controller is working on, or nullopt when all are placed.
std::optional<std::size_t> current_object(const TaskSpec& spec, const EnvState& s) {
    if (s.held) return s.held;
    for (std::size_t j = 0; j < s.objects.size(); ++j) {
        if (distance(s.objects[j], spec.goals[j]) >= spec.tolerance) return j;
    }
    return std::nullopt;
}

Action toward(Vec2 from, Vec2 to, double dg) {
    const Vec2 d = clip_delta(to.x - from.x, to.y - from.y);
    return {d.x, d.y, dg};
}

}  // namespace

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool Box::inside_workspace() const {
    return in_unit(x_lo) && in_unit(x_hi) && in_unit(y_lo) && in_unit(y_hi) && x_lo <= x_hi && y_lo <= y_hi;
}

void TaskSpec::validate() const {
    if (!(tolerance > 0.0)) throw ConfigError("task " + name + ": tolerance must be positive");
    if (max_steps == 0) throw ConfigError("task " + name + ": max_steps must be positive");
    if (!effector_spawn.inside_workspace()) throw ConfigError("task " + name + ": effector spawn outside workspace");
    for (const auto& b : object_spawn) {
        if (!b.inside_workspace()) throw ConfigError("task " + name + ": object spawn outside workspace");
    }
    for (const auto& g : goals) {
        if (!in_unit(g.x) || !in_unit(g.y)) throw ConfigError("task " + name + ": goal outside workspace");
    }
    const std::size_t want_goals = kind == TaskKind::Reach ? 1 : object_spawn.size();
    if (goals.size() != want_goals || object_spawn.size() > kMaxObjects) {
        throw ConfigError("task " + name + ": inconsistent object/goal counts");
    }
}

const std::vector<TaskSpec>& task_registry() {
    static const std::vector<TaskSpec> registry = build_registry();
    return registry;
}

std::string task_names() {
    std::string out;
    for (const auto& t : task_registry()) {
        if (!out.empty()) out += ", ";
        out += t.name;
    }
    return out;
}

const TaskSpec& find_task(std::string_view name) {
    for (const auto& t : task_registry()) {
        if (t.name == name) return t;
    }
    throw RegistryError("unknown task '" + std::string(name) + "' (known: " + task_names() + ")");
}

const TaskSpec& task_by_id(std::size_t task_id) {
    const auto& reg = task_registry();
    if (task_id >= reg.size()) {
        throw RegistryError("unknown task id " + std::to_string(task_id) + " (known: " + task_names() + ")");
    }
    return reg[task_id];
}

EnvState env_reset(const TaskSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    EnvState s;
    s.task_id = spec.task_id;
    s.effector = sample_box(spec.effector_spawn, rng);
    for (const auto& b : spec.object_spawn) s.objects.push_back(sample_box(b, rng));
    s.gripper = 1.0;
    return s;
}

bool task_satisfied(const TaskSpec& spec, const EnvState& s) {
    if (spec.kind == TaskKind::Reach) {
        return distance(s.effector, spec.goals[0]) < spec.tolerance;
    }
    if (s.held) return false;
    for (std::size_t j = 0; j < s.objects.size(); ++j) {
        if (distance(s.objects[j], spec.goals[j]) >= spec.tolerance) return false;
    }
    return true;
}

bool episode_done(const TaskSpec& spec, const EnvState& s) { return s.success || s.step >= spec.max_steps; }

EnvState env_step(const TaskSpec& spec, const EnvState& state, const Action& action) {
    EnvState s = state;
    const double dx = std::isfinite(action[0]) ? action[0] : 0.0;
    const double dy = std::isfinite(action[1]) ? action[1] : 0.0;
    const double dg = std::isfinite(action[2]) ? action[2] : 0.0;
    const Vec2 d = clip_delta(dx, dy);
    s.effector.x = std::clamp(s.effector.x + d.x, -1.0, 1.0);
    s.effector.y = std::clamp(s.effector.y + d.y, -1.0, 1.0);
    s.gripper = std::clamp(s.gripper + std::clamp(dg, -kMaxGripperDelta, kMaxGripperDelta), 0.0, 1.0);

    if (s.held) {
        s.objects[*s.held] = s.effector;
        if (s.gripper >= 0.5) s.held.reset();
    }
    if (!s.held && s.gripper < 0.5) {
        std::optional<std::size_t> best;
        double best_d = kGraspRadius;
        for (std::size_t j = 0; j < s.objects.size(); ++j) {
            const double dj = distance(s.effector, s.objects[j]);
            if (dj <= best_d && (!best || dj < best_d)) {
                best = j;
                best_d = dj;
            }
        }
        if (best) {
            s.held = best;
            s.objects[*best] = s.effector;
        }
    }
    ++s.step;
    s.success = s.success || task_satisfied(spec, s);
    return s;
}

ActionChunk normalize_chunk(const ActionChunk& chunk) {
    if (chunk.action_dim != kActionDim) throw DimensionError("normalize_chunk: action width must be 3");
    ActionChunk out = chunk;
    for (std::size_t h = 0; h < out.horizon; ++h) {
        for (std::size_t j = 0; j < kActionDim; ++j) out.at(h, j) /= kActionScale[j];
    }
    return out;
}

ActionChunk denormalize_chunk(const ActionChunk& chunk) {
    if (chunk.action_dim != kActionDim) throw DimensionError("denormalize_chunk: action width must be 3");
    ActionChunk out = chunk;
    for (std::size_t h = 0; h < out.horizon; ++h) {
        for (std::size_t j = 0; j < kActionDim; ++j) out.at(h, j) *= kActionScale[j];
    }
    return out;
}

Observation observe(const EnvState& s) {
    Observation obs;
    obs.task_id = s.task_id;
    obs.state = {s.effector.x, s.effector.y, s.gripper};
    obs.scene.assign(kSceneDim, 0.0);
    for (std::size_t j = 0; j < s.objects.size(); ++j) {
        obs.scene[2 * j] = s.objects[j].x;
        obs.scene[2 * j + 1] = s.objects[j].y;
    }
    return obs;
}

EnvState state_from_observation(const Observation& obs) {
    const TaskSpec& spec = task_by_id(obs.task_id);
    if (obs.state.size() != kStateDim || obs.scene.size() != kSceneDim) {
        throw DimensionError("observation has wrong state/scene width");
    }
    EnvState s;
    s.task_id = obs.task_id;
    s.effector = {obs.state[0], obs.state[1]};
    s.gripper = obs.state[2];
    for (std::size_t j = 0; j < spec.object_spawn.size(); ++j) {
        s.objects.push_back({obs.scene[2 * j], obs.scene[2 * j + 1]});
        if (s.gripper < 0.5 && s.objects[j] == s.effector) s.held = j;
    }
    return s;
}

Action expert_action(const TaskSpec& spec, const Observation& obs) {
    const EnvState s = state_from_observation(obs);
    if (spec.kind == TaskKind::Reach) {
        return toward(s.effector, spec.goals[0], kMaxGripperDelta);
    }
    const auto j = current_object(spec, s);
    if (!j) {
        return {0.0, 0.0, kMaxGripperDelta};
    }
    const Vec2 goal = spec.goals[*j];
    if (s.held) {
        if (distance(s.effector, goal) < kArriveEps) return toward(s.effector, goal, kMaxGripperDelta);
        return toward(s.effector, goal, -kMaxGripperDelta);
    }
    const Vec2 obj = s.objects[*j];
    if (distance(s.effector, obj) < kArriveEps) return toward(s.effector, obj, -kMaxGripperDelta);
    return toward(s.effector, obj, kMaxGripperDelta);
}

}  // namespace adamoe
