// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "adamoe/bench_env.hpp"
#include "adamoe/policy.hpp"
#include "adamoe/rng.hpp"

namespace adamoe {

/// Anything that maps an observation to an action chunk.
class ChunkPolicy {
  public:
    virtual ~ChunkPolicy() = default;
    virtual ActionChunk plan(const Observation& obs, Rng& rng) = 0;
    virtual std::size_t horizon() const = 0;
};

/// Wraps a trained model; its chunks are in normalized units and get scaled back.
class ModelPolicy final : public ChunkPolicy {
  public:
    ModelPolicy(const PolicyModel& model, std::size_t denoise_steps = 10)
        : model_(model), steps_(denoise_steps) {}
    ActionChunk plan(const Observation& obs, Rng& rng) override {
        return denormalize_chunk(model_.predict_action_chunk(obs, rng, steps_));
    }
    std::size_t horizon() const override { return model_.config().horizon; }

  private:
    const PolicyModel& model_;
    std::size_t steps_;
};

/// Scripted controller rolled forward from the observed state.
class ScriptedPolicy final : public ChunkPolicy {
  public:
    explicit ScriptedPolicy(std::size_t horizon) : horizon_(horizon) {}
    ActionChunk plan(const Observation& obs, Rng& rng) override;
    std::size_t horizon() const override { return horizon_; }

  private:
    std::size_t horizon_;
};

/// N(0, I) chunks; the null baseline.
class RandomPolicy final : public ChunkPolicy {
  public:
    explicit RandomPolicy(std::size_t horizon) : horizon_(horizon) {}
    ActionChunk plan(const Observation& obs, Rng& rng) override;
    std::size_t horizon() const override { return horizon_; }

  private:
    std::size_t horizon_;
};

struct EvalConfig {
    std::size_t trials = 50;
    std::uint64_t seed = 0;
    /// Actions executed from each chunk before replanning.
    std::size_t execute = 25;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Wilson score interval at z = 1.96.
Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

struct EvalResult {
    std::string task;
    std::size_t task_id = 0;
    std::size_t successes = 0;
    std::size_t trials = 0;
    double rate = 0.0;
    Interval ci;
};

EvalResult evaluate(ChunkPolicy& policy, const TaskSpec& spec, const EvalConfig& cfg);

/// Environment seed of evaluation trial `trial`; disjoint from dataset seeds.
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t task_id, std::size_t trial);

}  // namespace adamoe
