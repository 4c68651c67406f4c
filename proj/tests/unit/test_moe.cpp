// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "adamoe/errors.hpp"
#include "adamoe/moe.hpp"

using namespace adamoe;

namespace {

Tensor randn(Shape shape, Rng& rng, bool grad = false) { return normal_tensor(std::move(shape), 1.0, rng, grad); }

MoEConfig small_cfg(Variant v, std::size_t K = 4, std::size_t k = 1) {
    MoEConfig c;
    c.variant = v;
    c.num_experts = K;
    c.top_k = k;
    c.d_model = 3;
    c.d_ff = 5;
    return c;
}

/// Router that ignores x and emits `logits` for every token.
Router constant_router(std::size_t d, const std::vector<double>& logits) {
    Router r{Linear::zeros(d, logits.size())};
    auto b = r.map.bias.mutable_data();
    for (std::size_t i = 0; i < logits.size(); ++i) b[i] = logits[i];
    return r;
}

MoELayer random_layer(Variant v, Rng& rng, std::size_t K = 4, std::size_t k = 1) {
    const MoEConfig cfg = small_cfg(v, K, k);
    std::vector<ExpertFFN> routed;
    for (std::size_t i = 0; i < K; ++i) routed.push_back(ExpertFFN::init(cfg.d_model, cfg.d_ff, rng));
    Router router{Linear::normal(cfg.d_model, K, 1.0, rng)};
    std::optional<ScaleAdapter> adapter;
    std::optional<CSMoEHead> head;
    if (v == Variant::AdaMoE) adapter = ScaleAdapter{Linear::normal(cfg.d_model, K, 0.3, rng)};
    if (v == Variant::CSMoE) head = CSMoEHead{Linear::normal(cfg.d_model + K, K, 0.3, rng)};
    return MoELayer(cfg, ExpertFFN::init(cfg.d_model, cfg.d_ff, rng), std::move(routed), std::move(router),
                    std::move(adapter), std::move(head));
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("variant names round-trip") {
    for (Variant v : {Variant::Dense, Variant::Vanilla, Variant::CSMoE, Variant::AdaMoE}) {
        CHECK(parse_variant(variant_name(v)) == v);
    }
    CHECK(parse_variant("AdaMoE") == Variant::AdaMoE);
    CHECK_THROWS_AS(parse_variant("sparse"), ConfigError);
}

TEST_CASE("config validation") {
    MoEConfig c = small_cfg(Variant::Vanilla, 4, 5);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.top_k = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.top_k = 4;
    CHECK_NOTHROW(c.validate());
    c.alpha = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("top-k picks largest with low-index ties") {
    const std::vector<double> v{0.1, 0.4, 0.4, 0.1};
    CHECK(top_k_indices(v, 1) == std::vector<std::size_t>{1});
    CHECK(top_k_indices(v, 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_k_indices(v, 3) == std::vector<std::size_t>{1, 2, 0});
    const std::vector<double> flat{0.25, 0.25, 0.25, 0.25};
    CHECK(top_k_indices(flat, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("vanilla routing closed forms") {
    Rng rng(1);
    const MoEConfig cfg = small_cfg(Variant::Vanilla);
    std::vector<ExpertFFN> routed;
    for (int i = 0; i < 4; ++i) routed.push_back(ExpertFFN::init(3, 5, rng));
    const MoELayer layer(cfg, ExpertFFN::init(3, 5, rng), std::move(routed), constant_router(3, {2, 0, 0, 0}));
    const Tensor x = randn({2, 3}, rng);
    const RoutingDecision d = route_vanilla(layer, x);
    const double want = std::exp(2.0) / (std::exp(2.0) + 3.0);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(d.expert(t, 0) == 0);
        CHECK(d.weights.at(t, 0) == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK(want == doctest::Approx(0.7112).epsilon(1e-4));

    std::vector<ExpertFFN> routed2;
    for (int i = 0; i < 4; ++i) routed2.push_back(ExpertFFN::init(3, 5, rng));
    const MoELayer tie(cfg, ExpertFFN::init(3, 5, rng), std::move(routed2), constant_router(3, {0, 0, 0, 0}));
    const RoutingDecision dt = route_vanilla(tie, x);
    CHECK(dt.expert(0, 0) == 0);
    CHECK(dt.weights.at(0, 0) == 0.25);
}

TEST_CASE("k = K selects every expert with the full softmax") {
    Rng rng(2);
    const MoELayer layer = random_layer(Variant::Vanilla, rng, 4, 4);
    const Tensor x = randn({3, 3}, rng);
    const RoutingDecision d = route_vanilla(layer, x);
    for (std::size_t t = 0; t < 3; ++t) {
        double s = 0.0;
        std::vector<bool> seen(4, false);
        for (std::size_t j = 0; j < 4; ++j) {
            seen[d.expert(t, j)] = true;
            s += d.weights.at(t, j);
            CHECK(d.weights.at(t, j) == d.probs.at(t, d.expert(t, j)));
        }
        CHECK(s == doctest::Approx(1.0));
        for (bool b : seen) CHECK(b);
    }
}

TEST_CASE("AdaMoE adds the adapter output to the selected probability") {
    Rng rng(3);
    const MoEConfig cfg = small_cfg(Variant::AdaMoE);
    std::vector<ExpertFFN> routed;
    for (int i = 0; i < 4; ++i) routed.push_back(ExpertFFN::init(3, 5, rng));
    ScaleAdapter adapter{Linear::zeros(3, 4)};
    adapter.map.bias.mutable_data()[0] = -0.2;
    const MoELayer layer(cfg, ExpertFFN::init(3, 5, rng), std::move(routed), constant_router(3, {2, 0, 0, 0}),
                         std::move(adapter));
    const RoutingDecision d = route_adamoe(layer, randn({1, 3}, rng));
    const double p = std::exp(2.0) / (std::exp(2.0) + 3.0);
    CHECK(d.expert(0, 0) == 0);
    CHECK(d.weights.at(0, 0) == doctest::Approx(p - 0.2).epsilon(1e-15));
    CHECK(d.weights.at(0, 0) == doctest::Approx(0.5112).epsilon(1e-4));
}

TEST_CASE("AdaMoE with a zero adapter is bit-identical to Vanilla") {
    Rng rng(4);
    const ExpertFFN dense = ExpertFFN::init(3, 5, rng);
    Rng r1(9), r2(9);
    MoELayer ada = upcycle_from_dense(dense, small_cfg(Variant::AdaMoE, 4, 2), r1);
    MoELayer van = upcycle_from_dense(dense, small_cfg(Variant::Vanilla, 4, 2), r2);
    for (std::size_t i = 0; i < 4; ++i) {
        ada.mutable_routed(i) = ExpertFFN::init(3, 5, rng);
        van.mutable_routed(i) = ada.routed()[i].copy();
    }
    for (int pass = 0; pass < 50; ++pass) {
        const Tensor x = randn({7, 3}, rng);
        const MoEOutput a = moe_forward(x, ada);
        const MoEOutput b = moe_forward(x, van);
        CHECK(a.y.to_vector() == b.y.to_vector());
        CHECK(a.decision.selected == b.decision.selected);
    }
}

TEST_CASE("CSMoE head: zero head leaves the shared expert, hand affine otherwise") {
    Rng rng(5);
    const MoEConfig cfg = small_cfg(Variant::CSMoE, 2, 1);
    auto build = [&](CSMoEHead head) {
        std::vector<ExpertFFN> routed{ExpertFFN::init(3, 5, rng), ExpertFFN::init(3, 5, rng)};
        return MoELayer(cfg, ExpertFFN::init(3, 5, rng), std::move(routed), constant_router(3, {1.0, 0.0}),
                        std::nullopt, std::move(head));
    };
    const Tensor x = Tensor::from({1, 3}, {0.5, -1.0, 2.0});

    const MoELayer zero = build(CSMoEHead{Linear::zeros(5, 2)});
    const MoEOutput out = moe_forward(x, zero);
    CHECK(out.decision.weights.at(0, 0) == 0.0);
    CHECK(out.y.to_vector() == zero.shared().forward(x).to_vector());

    CSMoEHead head{Linear::zeros(5, 2)};
    const std::vector<double> col0{0.1, 0.2, -0.3, 0.7, -0.5};  // weights feeding output 0
    auto w = head.map.weight.mutable_data();
    for (std::size_t r = 0; r < 5; ++r) w[r * 2] = col0[r];
    head.map.bias.mutable_data()[0] = 0.05;
    const MoELayer hand = build(std::move(head));
    const RoutingDecision d = route_csmoe(hand, x);
    const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double concat[] = {0.5, -1.0, 2.0, p0, 1.0 - p0};
    double want = 0.05;
    for (std::size_t r = 0; r < 5; ++r) want += col0[r] * concat[r];
    CHECK(d.expert(0, 0) == 0);
    CHECK(d.weights.at(0, 0) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("missing adapter or head is a config error") {
    Rng rng(6);
    std::vector<ExpertFFN> routed{ExpertFFN::init(3, 5, rng), ExpertFFN::init(3, 5, rng)};
    CHECK_THROWS_AS(MoELayer(small_cfg(Variant::AdaMoE, 2), ExpertFFN::init(3, 5, rng), routed,
                             constant_router(3, {0, 0})),
                    ConfigError);
    CHECK_THROWS_AS(MoELayer(small_cfg(Variant::CSMoE, 2), ExpertFFN::init(3, 5, rng), routed,
                             constant_router(3, {0, 0})),
                    ConfigError);
    CHECK_THROWS_AS(MoELayer(small_cfg(Variant::Vanilla, 3), ExpertFFN::init(3, 5, rng), routed,
                             constant_router(3, {0, 0, 0})),
                    ConfigError);
}

TEST_CASE("moe_forward identities") {
    Rng rng(7);
    const ExpertFFN dense = ExpertFFN::init(3, 5, rng);
    const MoELayer layer = upcycle_from_dense(dense, small_cfg(Variant::Vanilla), rng);
    const Tensor x = randn({6, 3}, rng);

    MoEForwardOptions zero;
    zero.zero_routed = true;
    CHECK(moe_forward(x, layer, zero).y.to_vector() == dense.forward(x).to_vector());

    const MoEOutput out = moe_forward(x, layer);
    const Tensor f = dense.forward(x);
    for (std::size_t t = 0; t < 6; ++t) {
        const double w = out.decision.weights.at(t, 0);
        for (std::size_t j = 0; j < 3; ++j) CHECK(out.y.at(t, j) == doctest::Approx((1.0 + w) * f.at(t, j)));
    }
}

TEST_CASE("moe_forward single token, two experts, by hand") {
    MoEConfig cfg = small_cfg(Variant::Vanilla, 2, 2);
    cfg.d_model = 1;
    cfg.d_ff = 1;
    auto scalar_ffn = [](double up, double down) {
        return ExpertFFN{Tensor::from({1, 1}, {up}, true), Tensor::from({1, 1}, {down}, true)};
    };
    std::vector<ExpertFFN> routed{scalar_ffn(2.0, 3.0), scalar_ffn(-1.0, 0.5)};
    const MoELayer layer(cfg, scalar_ffn(1.0, 1.0), std::move(routed), constant_router(1, {0.3, -0.2}));
    const double x = 0.7;
    const MoEOutput out = moe_forward(Tensor::from({1, 1}, {x}), layer);
    const double z = std::exp(0.3) + std::exp(-0.2);
    const double w0 = std::exp(0.3) / z, w1 = std::exp(-0.2) / z;
    const double want = silu(x) + w0 * 3.0 * silu(2.0 * x) + w1 * 0.5 * silu(-x);
    CHECK(out.y.item() == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("non-finite expert output names layer and expert") {
    MoEConfig cfg = small_cfg(Variant::Vanilla, 2, 1);
    cfg.d_model = 1;
    cfg.d_ff = 1;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<ExpertFFN> routed{ExpertFFN{Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {inf})},
                                  ExpertFFN{Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {1.0})}};
    const MoELayer layer(cfg, ExpertFFN{Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {1.0})}, std::move(routed),
                         constant_router(1, {1.0, 0.0}), std::nullopt, std::nullopt, 3);
    try {
        (void)moe_forward(Tensor::from({1, 1}, {1.0}), layer);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 3") != std::string::npos);
        CHECK(msg.find("expert 0") != std::string::npos);
    }
}

TEST_CASE("expert load statistics") {
    RoutingDecision d;
    d.num_tokens = 4;
    d.num_experts = 2;
    d.top_k = 1;
    d.selected = {0, 0, 1, 1};
    d.probs = Tensor::full({4, 2}, 0.5);
    d.weights = Tensor::full({4, 1}, 0.5);
    const ExpertLoad load = expert_load_stats(d);
    CHECK(load.fraction == std::vector<double>{0.5, 0.5});
    CHECK(load.mean_prob == std::vector<double>{0.5, 0.5});

    d.selected = {0, 0, 0, 0};
    CHECK(expert_load_stats(d).fraction == std::vector<double>{1.0, 0.0});
}

TEST_CASE("load balance loss closed forms") {
    for (std::size_t K : {2u, 4u, 8u}) {
        for (std::size_t k = 1; k <= K; k *= 2) {
            RoutingDecision d;
            d.num_tokens = K;
            d.num_experts = K;
            d.top_k = k;
            for (std::size_t t = 0; t < K; ++t) {
                for (std::size_t s = 0; s < k; ++s) d.selected.push_back((t + s) % K);
            }
            d.probs = Tensor::full({K, K}, 1.0 / static_cast<double>(K));
            MoEConfig cfg = small_cfg(Variant::Vanilla, K, k);
            cfg.alpha = 1.5;
            CHECK(std::abs(load_balance_loss(d, cfg).item() - 1.5 * static_cast<double>(k)) <= 1e-12);
            cfg.alpha = 0.0;
            CHECK(load_balance_loss(d, cfg).item() == 0.0);
        }
    }

    RoutingDecision c;
    c.num_tokens = 3;
    c.num_experts = 2;
    c.top_k = 1;
    c.selected = {0, 0, 0};
    c.probs = Tensor::from({3, 2}, {1, 0, 1, 0, 1, 0});
    CHECK(std::abs(load_balance_loss(c, small_cfg(Variant::Vanilla, 2)).item() - 2.0) <= 1e-12);

    RoutingDecision empty;
    empty.num_experts = 2;
    empty.top_k = 1;
    CHECK_THROWS_AS((void)load_balance_loss(empty, small_cfg(Variant::Vanilla, 2)), ContractError);
}

TEST_CASE("balance loss treats the fraction as constant") {
    Rng rng(8);
    const MoELayer layer = random_layer(Variant::Vanilla, rng);
    const Tensor x = randn({5, 3}, rng);
    const RoutingDecision d = route_vanilla(layer, x);
    load_balance_loss(d, layer.config()).backward();
    const ExpertLoad load = expert_load_stats(d);
    // Softmax chain rule with f frozen: dL/dz_tj = (alpha K / T) p_tj (f_j - sum_i f_i p_ti).
    const double c = layer.config().alpha * 4.0 / 5.0;
    std::vector<double> want(4, 0.0);
    for (std::size_t t = 0; t < 5; ++t) {
        double fp = 0.0;
        for (std::size_t i = 0; i < 4; ++i) fp += load.fraction[i] * d.probs.at(t, i);
        for (std::size_t j = 0; j < 4; ++j) want[j] += c * d.probs.at(t, j) * (load.fraction[j] - fp);
    }
    const auto gb = layer.router().map.bias.grad();
    for (std::size_t j = 0; j < 4; ++j) CHECK(gb[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("upcycle copies the dense FFN and initializes the gates") {
    Rng rng(9);
    const ExpertFFN dense = ExpertFFN::init(3, 5, rng);
    for (Variant v : {Variant::Vanilla, Variant::AdaMoE, Variant::CSMoE}) {
        const MoELayer layer = upcycle_from_dense(dense, small_cfg(v, 4), rng);
        CHECK(layer.shared().up.to_vector() == dense.up.to_vector());
        for (const auto& e : layer.routed()) {
            CHECK(e.up.to_vector() == dense.up.to_vector());
            CHECK(e.down.to_vector() == dense.down.to_vector());
            CHECK_FALSE(e.up.same_node(dense.up));
        }
        for (double b : layer.router().map.bias.data()) CHECK(b == 0.0);
        CHECK(layer.scale_adapter().has_value() == (v == Variant::AdaMoE));
        CHECK(layer.csmoe_head().has_value() == (v == Variant::CSMoE));
        if (v == Variant::AdaMoE) {
            for (double a : layer.scale_adapter()->map.weight.data()) CHECK(a == 0.0);
        }
        if (v == Variant::CSMoE) {
            const Tensor x = randn({4, 3}, rng);
            const RoutingDecision d = route_csmoe(layer, x);
            for (std::size_t t = 0; t < 4; ++t) {
                CHECK(d.weights.at(t, 0) == doctest::Approx(d.probs.at(t, d.expert(t, 0))).epsilon(1e-15));
            }
        }
    }
    CHECK_THROWS_AS(upcycle_from_dense(ExpertFFN::init(4, 5, rng), small_cfg(Variant::Vanilla), rng), ConfigError);
}

TEST_CASE("router init has the prescribed spread") {
    Rng rng(10);
    MoEConfig cfg = small_cfg(Variant::Vanilla, 8);
    cfg.d_model = 64;
    const MoELayer layer = upcycle_from_dense(ExpertFFN::init(64, 5, rng), cfg, rng);
    double ss = 0.0;
    const auto w = layer.router().map.weight.data();
    for (double v : w) ss += v * v;
    const double sd = std::sqrt(ss / static_cast<double>(w.size()));
    CHECK(sd == doctest::Approx(kRouterInitStd).epsilon(0.1));
}

TEST_CASE("gradients of the full layer match finite differences") {
    for (Variant v : {Variant::Vanilla, Variant::AdaMoE, Variant::CSMoE}) {
        CAPTURE(variant_name(v));
        Rng rng(11);
        const MoELayer layer = random_layer(v, rng, 3, 2);
        const Tensor x = randn({5, 3}, rng, true);
        const Tensor target = randn({5, 3}, rng);
        ParamList named;
        layer.append_params(named, "moe");
        std::vector<Tensor> params{x};
        for (const auto& p : named) params.push_back(p.tensor);
        auto loss = [&]() {
            const MoEOutput out = moe_forward(x, layer);
            return add(mse(out.y, target), scale(load_balance_loss(out.decision, layer.config()), 0.1));
        };
        const auto rep = finite_diff_check(loss, params);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error <= 1e-4);
    }
}

TEST_CASE("parameter groups put router-like maps in the router group") {
    Rng rng(12);
    for (Variant v : {Variant::Vanilla, Variant::AdaMoE, Variant::CSMoE}) {
        const MoELayer layer = random_layer(v, rng);
        ParamList named;
        layer.append_params(named, "m");
        std::size_t router_group = 0, total = 0;
        for (const auto& p : named) {
            total += p.tensor.numel();
            if (p.group == ParamGroup::Router) router_group += p.tensor.numel();
        }
        CHECK(total == layer.parameter_count());
        const std::size_t gate = 3 * 4 + 4;
        const std::size_t want = v == Variant::Vanilla ? gate : v == Variant::AdaMoE ? 2 * gate : gate + 7 * 4 + 4;
        CHECK(router_group == want);
    }
}
