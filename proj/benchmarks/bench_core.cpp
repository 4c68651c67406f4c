// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "adamoe/analysis.hpp"
#include "adamoe/moe.hpp"
#include "adamoe/policy.hpp"
#include "adamoe/runtime.hpp"
#include "adamoe/training.hpp"

using namespace adamoe;

namespace {

ModelConfig desk(Variant v, std::size_t K = 4, std::size_t k = 1) {
    ModelConfig c;
    c.d_model = 32;
    c.d_ff = 64;
    c.layers = 2;
    c.heads = 2;
    c.horizon = 16;
    c.tau_embed = 16;
    c.num_experts = K;
    c.top_k = k;
    c.variant = v;
    return c;
}

std::vector<TrajectoryStep> bench_data() {
    std::vector<Trajectory> trajs;
    for (const auto& spec : task_registry()) {
        for (std::uint64_t s = 0; s < 4; ++s) trajs.push_back(scripted_expert(spec, s, 16));
    }
    return dataset_samples(trajs, 16);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor a = normal_tensor({n, n}, 1.0, rng);
    const Tensor b = normal_tensor({n, n}, 1.0, rng);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_MatmulBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    Tensor a = normal_tensor({n, n}, 1.0, rng, true);
    Tensor b = normal_tensor({n, n}, 1.0, rng, true);
    for (auto _ : state) {
        a.zero_grad();
        b.zero_grad();
        sum(matmul(a, b)).backward();
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);

static void BM_MoEForward(benchmark::State& state) {
    const auto variant = static_cast<Variant>(state.range(0));
    const auto K = static_cast<std::size_t>(state.range(1));
    MoEConfig cfg;
    cfg.variant = variant;
    cfg.num_experts = K;
    cfg.top_k = 2;
    cfg.d_model = 32;
    cfg.d_ff = 64;
    Rng rng(3);
    const MoELayer layer = upcycle_from_dense(ExpertFFN::init(32, 64, rng), cfg, rng);
    const Tensor x = normal_tensor({512, 32}, 1.0, rng);
    NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(moe_forward(x, layer).y);
    state.SetLabel(variant_name(variant) + " K=" + std::to_string(K));
    state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_MoEForward)
    ->Args({static_cast<int>(Variant::Vanilla), 4})
    ->Args({static_cast<int>(Variant::AdaMoE), 4})
    ->Args({static_cast<int>(Variant::CSMoE), 4})
    ->Args({static_cast<int>(Variant::AdaMoE), 8});

static void BM_PolicyPredict(benchmark::State& state) {
    const auto variant = static_cast<Variant>(state.range(0));
    Rng rng(4);
    const PolicyModel m = PolicyModel::create(desk(variant), rng);
    const Observation obs = observe(env_reset(find_task("pick-place"), 1));
    for (auto _ : state) benchmark::DoNotOptimize(m.predict_action_chunk(obs, rng, 10));
    state.SetLabel(variant_name(variant) + ", 10 Euler steps");
}
BENCHMARK(BM_PolicyPredict)
    ->Arg(static_cast<int>(Variant::Dense))
    ->Arg(static_cast<int>(Variant::Vanilla))
    ->Arg(static_cast<int>(Variant::AdaMoE));

static void BM_TrainStep(benchmark::State& state) {
    const auto variant = static_cast<Variant>(state.range(0));
    Rng rng(5);
    TrainConfig tc;
    tc.total_steps = 1000000;
    Trainer trainer(PolicyModel::create(desk(variant), rng), tc, bench_data());
    for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
    state.SetLabel(variant_name(variant) + ", batch 32");
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::Dense))
    ->Arg(static_cast<int>(Variant::Vanilla))
    ->Arg(static_cast<int>(Variant::AdaMoE))
    ->Unit(benchmark::kMillisecond);

static void BM_UsageIntensity(benchmark::State& state) {
    Rng rng(6);
    const PolicyModel m = PolicyModel::create(desk(Variant::AdaMoE), rng);
    std::vector<Observation> frames;
    const TaskSpec& spec = find_task("reach");
    EnvState s = env_reset(spec, 2);
    for (int i = 0; i < 20; ++i) {
        frames.push_back(observe(s));
        s = env_step(spec, s, {0.02, 0.01, 0.0});
    }
    for (auto _ : state) benchmark::DoNotOptimize(expert_usage_intensity(m, frames, 1, 10, 7));
}
BENCHMARK(BM_UsageIntensity)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
    tune_allocator();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
