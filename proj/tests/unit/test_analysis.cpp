// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "adamoe/analysis.hpp"
#include "adamoe/errors.hpp"

using namespace adamoe;

namespace {

RoutingDecision decision(std::size_t K, std::size_t k, std::vector<std::size_t> selected) {
    RoutingDecision d;
    d.num_experts = K;
    d.top_k = k;
    d.num_tokens = selected.size() / k;
    d.selected = std::move(selected);
    d.probs = Tensor::full({d.num_tokens, K}, 1.0 / static_cast<double>(K));
    return d;
}

ModelConfig small(Variant v, std::size_t K, std::size_t k) {
    ModelConfig c;
    c.d_model = 8;
    c.d_ff = 16;
    c.layers = 3;
    c.heads = 2;
    c.horizon = 4;
    c.tau_embed = 4;
    c.num_experts = K;
    c.top_k = k;
    c.variant = v;
    return c;
}

std::vector<Observation> some_frames(std::size_t n) {
    const TaskSpec& spec = find_task("pick-place");
    EnvState s = env_reset(spec, 4);
    std::vector<Observation> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(observe(s));
        s = env_step(spec, s, {0.05, 0.02, 0.0});
    }
    return out;
}

}  // namespace

TEST_CASE("frame intensity hand case") {
    const auto v = frame_intensity({decision(2, 1, {0, 0, 0, 1}), decision(2, 1, {0, 1, 0, 1})});
    REQUIRE(v.size() == 2);
    CHECK(v[0] == doctest::Approx(0.625).epsilon(1e-15));
    CHECK(v[1] == doctest::Approx(0.375).epsilon(1e-15));
    CHECK_THROWS_AS(frame_intensity({}), ContractError);
}

TEST_CASE("single expert is always fully used") {
    Rng rng(1);
    const PolicyModel m = PolicyModel::create(small(Variant::Vanilla, 1, 1), rng);
    const auto trace = expert_usage_intensity(m, some_frames(5), 1, 3, 9);
    CHECK(trace.frames() == 5);
    for (const auto& row : trace.values) CHECK(row == std::vector<double>{1.0});
}

TEST_CASE("collapsed router concentrates intensity on one expert") {
    Rng rng(2);
    PolicyModel m = PolicyModel::create(small(Variant::Vanilla, 4, 1), rng);
    for (const auto& p : m.parameters()) {
        if (p.name.find(".router.") == std::string::npos) continue;
        Tensor t = p.tensor;
        auto data = t.mutable_data();
        for (double& v : data) v = 0.0;
        if (p.name.ends_with(".bias")) data[2] = 10.0;
    }
    const auto trace = expert_usage_intensity(m, some_frames(4), 1, 2, 3);
    for (const auto& row : trace.values) CHECK(row == std::vector<double>{0.0, 0.0, 1.0, 0.0});
}

TEST_CASE("intensities per frame sum to top-k") {
    for (std::size_t k : {1, 2, 3}) {
        CAPTURE(k);
        Rng rng(10 + k);
        const PolicyModel m = PolicyModel::create(small(Variant::AdaMoE, 4, k), rng);
        const auto trace = expert_usage_intensity(m, some_frames(6), 1, 4, 7);
        CHECK(trace.top_k == k);
        for (const auto& row : trace.values) {
            double sum = 0.0;
            for (double v : row) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - static_cast<double>(k)) <= 1e-9);
        }
    }
}

TEST_CASE("layer selection") {
    CHECK(default_analysis_layer(small(Variant::Vanilla, 4, 1)) == 1);
    ModelConfig c = small(Variant::AdaMoE, 4, 1);
    c.layers = 4;
    CHECK(default_analysis_layer(c) == 2);
    CHECK_THROWS_AS(default_analysis_layer(small(Variant::Dense, 4, 1)), ConfigError);

    Rng rng(3);
    const PolicyModel dense = PolicyModel::create(small(Variant::Dense, 4, 1), rng);
    try {
        (void)expert_usage_intensity(dense, some_frames(1), 1, 2, 0);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
    const PolicyModel moe = PolicyModel::create(small(Variant::Vanilla, 4, 1), rng);
    CHECK_THROWS_AS(expert_usage_intensity(moe, some_frames(1), 7, 2, 0), ConfigError);
}

TEST_CASE("rollout frames follow the episode") {
    const TaskSpec& spec = find_task("reach");
    ScriptedPolicy expert(8);
    const auto frames = rollout_frames(expert, spec, 5, 4);
    REQUIRE(!frames.empty());
    CHECK(frames.size() < spec.max_steps);
    CHECK(frames.front() == observe(env_reset(spec, 5)));
}

TEST_CASE("balance report from decisions") {
    std::vector<std::size_t> uniform;
    for (std::size_t t = 0; t < 8; ++t) uniform.push_back(t % 4);
    const BalanceReport u = balance_from_decisions({decision(4, 1, uniform)}, 2);
    REQUIRE(u.layers.size() == 1);
    CHECK(u.layers[0].layer == 2);
    CHECK(u.tokens == 8);
    CHECK(u.layers[0].entropy == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(u.collapse_score == 0.25);
    CHECK_FALSE(u.collapsed);
    CHECK(u.layers[0].mean_prob == std::vector<double>(4, 0.25));

    const BalanceReport c = balance_from_decisions({decision(4, 1, std::vector<std::size_t>(8, 3))});
    CHECK(c.collapse_score == 1.0);
    CHECK(c.layers[0].entropy == 0.0);
    CHECK(c.collapsed);

    // top-2 with expert 0 in every row
    const BalanceReport two = balance_from_decisions({decision(4, 2, {0, 1, 0, 2, 0, 3, 0, 1})});
    CHECK(two.layers[0].fraction == std::vector<double>{1.0, 0.5, 0.25, 0.25});
    CHECK(two.collapsed);

    const BalanceReport empty = balance_from_decisions({});
    CHECK(empty.layers.empty());
    CHECK_FALSE(empty.collapsed);
}

TEST_CASE("balance report over a dataset") {
    Rng rng(4);
    const PolicyModel m = PolicyModel::create(small(Variant::Vanilla, 4, 2), rng);
    std::vector<Trajectory> trajs{scripted_expert(find_task("reach"), 1, 4)};
    const auto data = dataset_samples(trajs, 4);
    const BalanceReport r = balance_report(m, data, 5, 0, 3);
    CHECK(r.tokens == data.size() * 4);
    REQUIRE(r.layers.size() == 3);
    for (const auto& l : r.layers) {
        double fs = 0.0, ps = 0.0;
        for (double f : l.fraction) fs += f;
        for (double p : l.mean_prob) ps += p;
        CHECK(fs == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(ps == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(balance_json(r) == balance_json(balance_report(m, data, 5, 0, 3)));
    const auto j = nlohmann::json::parse(balance_json(r));
    CHECK(j.at("layers").size() == 3);
    CHECK(j.at("threshold") == 0.9);
    CHECK_THROWS_AS(balance_report(m, {}, 5), ContractError);
}

TEST_CASE("CSV emission") {
    IntensityTrace empty;
    empty.layer = 1;
    CHECK(intensity_csv(empty) == "frame,layer,expert,intensity\n");

    IntensityTrace t;
    t.layer = 3;
    t.num_experts = 2;
    t.top_k = 1;
    t.values = {{0.625, 0.375}, {0.1, 0.9}};
    const std::string csv = intensity_csv(t);
    CHECK(csv ==
          "frame,layer,expert,intensity\n0,3,0,0.625\n0,3,1,0.375\n1,3,0,0.10000000000000001\n1,3,1,0.90000000000000002\n");
    const IntensityTrace back = parse_intensity_csv(csv);
    CHECK(back.values == t.values);
    CHECK(back.layer == 3);
    CHECK(intensity_csv(back) == csv);
    CHECK_THROWS_AS(parse_intensity_csv("a,b\n"), IoError);
    CHECK_THROWS_AS(parse_intensity_csv("frame,layer,expert,intensity\n0;1\n"), IoError);
}

TEST_CASE("re-running the analysis is byte-identical") {
    Rng rng(6);
    const PolicyModel m = PolicyModel::create(small(Variant::AdaMoE, 4, 1), rng);
    const auto frames = some_frames(5);
    const auto a = expert_usage_intensity(m, frames, 1, 3, 11);
    const auto b = expert_usage_intensity(m, frames, 1, 3, 11);
    CHECK(intensity_csv(a) == intensity_csv(b));
    CHECK(intensity_svg(a) == intensity_svg(b));
}

TEST_CASE("SVG heatmap") {
    IntensityTrace t;
    t.layer = 1;
    t.num_experts = 2;
    t.values = {{0.0, 1.0}};
    const std::string svg = intensity_svg(t);
    CHECK(svg.starts_with("<svg"));
    CHECK(svg.ends_with("</svg>\n"));
    CHECK(svg.find("fill=\"#f7fbff\"") != std::string::npos);
    CHECK(svg.find("fill=\"#08306b\"") != std::string::npos);
    CHECK(svg.find("layer=1") != std::string::npos);
    CHECK(intensity_stem("out", "run", "reach", 2) == std::filesystem::path("out/run/reach/layer2"));
}
