// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "adamoe/errors.hpp"

namespace adamoe {

namespace {

constexpr std::uint64_t kEvalEnvStream = 0x6576616c5f656e76ULL;
constexpr std::uint64_t kEvalPolicyStream = 0x6576616c5f706f6cULL;

}  // namespace

ActionChunk ScriptedPolicy::plan(const Observation& obs, Rng&) {
    const TaskSpec& spec = task_by_id(obs.task_id);
    EnvState s = state_from_observation(obs);
    ActionChunk chunk = ActionChunk::zeros(horizon_, kActionDim);
    Observation o = obs;
    for (std::size_t h = 0; h < horizon_; ++h) {
        const Action a = expert_action(spec, o);
        for (std::size_t j = 0; j < kActionDim; ++j) chunk.at(h, j) = a[j];
        s = env_step(spec, s, a);
        o = observe(s);
    }
    return chunk;
}

ActionChunk RandomPolicy::plan(const Observation&, Rng& rng) {
    ActionChunk chunk = ActionChunk::zeros(horizon_, kActionDim);
    for (double& v : chunk.values) v = rng.normal();
    return chunk;
}

Interval wilson_interval(std::size_t successes, std::size_t trials, double z) {
    if (trials == 0) return {0.0, 1.0};
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t task_id, std::size_t trial) {
    return derive_seed(derive_seed(seed, kEvalEnvStream), task_id, trial);
}

EvalResult evaluate(ChunkPolicy& policy, const TaskSpec& spec, const EvalConfig& cfg) {
    if (cfg.trials == 0) throw ConfigError("evaluate: trials must be at least 1");
    if (cfg.execute == 0) throw ConfigError("evaluate: execute must be at least 1");
    const std::size_t execute = std::min(cfg.execute, policy.horizon());

    EvalResult r;
    r.task = spec.name;
    r.task_id = spec.task_id;
    r.trials = cfg.trials;
    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        Rng rng(derive_seed(derive_seed(cfg.seed, kEvalPolicyStream), spec.task_id, trial));
        EnvState s = env_reset(spec, eval_episode_seed(cfg.seed, spec.task_id, trial));
        while (!episode_done(spec, s)) {
            const ActionChunk chunk = policy.plan(observe(s), rng);
            for (std::size_t h = 0; h < execute && !episode_done(spec, s); ++h) {
                Action a{};
                for (std::size_t j = 0; j < kActionDim; ++j) a[j] = chunk.at(h, j);
                s = env_step(spec, s, a);
            }
        }
        if (s.success) ++r.successes;
    }
    r.rate = static_cast<double>(r.successes) / static_cast<double>(r.trials);
    r.ci = wilson_interval(r.successes, r.trials);
    return r;
}

}  // namespace adamoe
