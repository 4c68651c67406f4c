// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/moe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "adamoe/errors.hpp"

namespace adamoe {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Dense: return "dense";
        case Variant::Vanilla: return "vanilla";
        case Variant::CSMoE: return "csmoe";
        case Variant::AdaMoE: return "adamoe";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "dense") return Variant::Dense;
    if (lower == "vanilla") return Variant::Vanilla;
    if (lower == "csmoe") return Variant::CSMoE;
    if (lower == "adamoe") return Variant::AdaMoE;
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected dense|vanilla|csmoe|adamoe)");
}

Tensor ExpertFFN::forward(const Tensor& x) const { return matmul(silu(matmul(x, up)), down); }

ExpertFFN ExpertFFN::init(std::size_t d_model, std::size_t d_ff, Rng& rng) {
    ExpertFFN ffn;
    ffn.up = normal_tensor({d_model, d_ff}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
    ffn.down = normal_tensor({d_ff, d_model}, 1.0 / std::sqrt(static_cast<double>(d_ff)), rng);
    return ffn;
}

void ExpertFFN::append_params(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".up", up, ParamGroup::Base});
    out.push_back({prefix + ".down", down, ParamGroup::Base});
}

void MoEConfig::validate() const {
    if (num_experts == 0 || top_k == 0 || top_k > num_experts) {
        throw ConfigError("MoE config needs 1 <= k <= K, got k=" + std::to_string(top_k) +
                          " K=" + std::to_string(num_experts));
    }
    if (!(alpha >= 0.0)) {
        throw ConfigError("MoE config needs alpha >= 0, got " + std::to_string(alpha));
    }
    if (d_model == 0 || d_ff == 0) {
        throw ConfigError("MoE config needs positive widths");
    }
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
    if (k > values.size()) {
        throw ConfigError("top-k: k=" + std::to_string(k) + " exceeds " + std::to_string(values.size()));
    }
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    order.resize(k);
    return order;
}

ExpertLoad expert_load_stats(const RoutingDecision& d) {
    ExpertLoad load;
    load.fraction.assign(d.num_experts, 0.0);
    load.mean_prob.assign(d.num_experts, 0.0);
    if (d.num_tokens == 0) {
        return load;
    }
    for (std::size_t e : d.selected) load.fraction[e] += 1.0;
    const auto p = d.probs.data();
    for (std::size_t t = 0; t < d.num_tokens; ++t)
        for (std::size_t e = 0; e < d.num_experts; ++e) load.mean_prob[e] += p[t * d.num_experts + e];
    const double n = static_cast<double>(d.num_tokens);
    for (std::size_t e = 0; e < d.num_experts; ++e) {
        load.fraction[e] /= n;
        load.mean_prob[e] /= n;
    }
    return load;
}

MoELayer::MoELayer(MoEConfig cfg, ExpertFFN shared, std::vector<ExpertFFN> routed, Router router,
                   std::optional<ScaleAdapter> adapter, std::optional<CSMoEHead> head, std::size_t layer_id)
    : cfg_(cfg),
      shared_(std::move(shared)),
      routed_(std::move(routed)),
      router_(std::move(router)),
      adapter_(std::move(adapter)),
      head_(std::move(head)),
      layer_id_(layer_id) {
    cfg_.validate();
    const std::size_t K = cfg_.num_experts, d = cfg_.d_model;
    auto check_ffn = [&](const ExpertFFN& f, const std::string& what) {
        if (f.up.shape() != Shape{d, cfg_.d_ff} || f.down.shape() != Shape{cfg_.d_ff, d}) {
            throw ConfigError(what + " has shapes " + shape_str(f.up.shape()) + "/" + shape_str(f.down.shape()) +
                              ", expected " + shape_str({d, cfg_.d_ff}) + "/" + shape_str({cfg_.d_ff, d}));
        }
    };
    check_ffn(shared_, "shared expert");
    if (routed_.size() != K) {
        throw ConfigError("expected " + std::to_string(K) + " routed experts, got " + std::to_string(routed_.size()));
    }
    for (std::size_t i = 0; i < K; ++i) check_ffn(routed_[i], "routed expert " + std::to_string(i));
    if (router_.map.weight.shape() != Shape{d, K}) {
        throw ConfigError("router weight " + shape_str(router_.map.weight.shape()) + ", expected " + shape_str({d, K}));
    }
    if (adapter_ && adapter_->map.weight.shape() != Shape{d, K}) {
        throw ConfigError("scale adapter weight " + shape_str(adapter_->map.weight.shape()) + ", expected " +
                          shape_str({d, K}));
    }
    if (head_ && head_->map.weight.shape() != Shape{d + K, K}) {
        throw ConfigError("CSMoE head weight " + shape_str(head_->map.weight.shape()) + ", expected " +
                          shape_str({d + K, K}));
    }
    if (cfg_.variant == Variant::AdaMoE && !adapter_) {
        throw ConfigError("AdaMoE layer requires a scale adapter");
    }
    if (cfg_.variant == Variant::CSMoE && !head_) {
        throw ConfigError("CSMoE layer requires a CSMoE head");
    }
    if (cfg_.variant == Variant::Dense) {
        throw ConfigError("MoELayer cannot be built with the dense variant");
    }
}

void MoELayer::append_params(ParamList& out, const std::string& prefix) const {
    shared_.append_params(out, prefix + ".shared");
    for (std::size_t i = 0; i < routed_.size(); ++i) {
        routed_[i].append_params(out, prefix + ".expert" + std::to_string(i));
    }
    router_.map.append_params(out, prefix + ".router", ParamGroup::Router);
    if (adapter_) adapter_->map.append_params(out, prefix + ".scale_adapter", ParamGroup::Router);
    if (head_) head_->map.append_params(out, prefix + ".csmoe_head", ParamGroup::Router);
}

std::size_t MoELayer::parameter_count() const {
    ParamList params;
    append_params(params, "");
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

namespace {

struct Selection {
    std::vector<std::size_t> selected;  // [T * k]
    std::vector<std::size_t> flat;      // t * K + e for each selected entry
};

Selection select(const Tensor& probs, std::size_t k) {
    const std::size_t T = probs.dim(0), K = probs.dim(1);
    Selection s;
    s.selected.reserve(T * k);
    s.flat.reserve(T * k);
    for (std::size_t t = 0; t < T; ++t) {
        const auto row = probs.data().subspan(t * K, K);
        for (std::size_t e : top_k_indices(row, k)) {
            s.selected.push_back(e);
            s.flat.push_back(t * K + e);
        }
    }
    return s;
}

void check_input(const MoELayer& layer, const Tensor& x) {
    layer.config().validate();
    if (x.rank() != 2 || x.dim(1) != layer.config().d_model) {
        throw DimensionError("MoE input " + shape_str(x.shape()) + ", expected [T x " +
                             std::to_string(layer.config().d_model) + "]");
    }
}

// Router softmax, selection, and weights picked from `weight_source` [T, K].
RoutingDecision decide(const MoELayer& layer, const Tensor& probs, const Tensor& weight_source) {
    const MoEConfig& cfg = layer.config();
    Selection s = select(probs, cfg.top_k);
    RoutingDecision d;
    d.num_tokens = probs.dim(0);
    d.num_experts = cfg.num_experts;
    d.top_k = cfg.top_k;
    d.probs = probs;
    d.weights = reshape(take(weight_source, s.flat), {d.num_tokens, cfg.top_k});
    d.selected = std::move(s.selected);
    return d;
}

Tensor router_probs(const MoELayer& layer, const Tensor& x) { return softmax(layer.router().map.forward(x), -1); }

}  // namespace

RoutingDecision route_vanilla(const MoELayer& layer, const Tensor& x) {
    check_input(layer, x);
    const Tensor probs = router_probs(layer, x);
    return decide(layer, probs, probs);
}

RoutingDecision route_adamoe(const MoELayer& layer, const Tensor& x) {
    check_input(layer, x);
    if (!layer.scale_adapter()) {
        throw ConfigError("route_adamoe: layer " + std::to_string(layer.layer_id()) + " has no scale adapter");
    }
    const Tensor probs = router_probs(layer, x);
    const Tensor combined = add(layer.scale_adapter()->map.forward(x), probs);
    return decide(layer, probs, combined);
}

RoutingDecision route_csmoe(const MoELayer& layer, const Tensor& x) {
    check_input(layer, x);
    if (!layer.csmoe_head()) {
        throw ConfigError("route_csmoe: layer " + std::to_string(layer.layer_id()) + " has no CSMoE head");
    }
    const Tensor probs = router_probs(layer, x);
    const Tensor raw = layer.csmoe_head()->map.forward(concat_cols(x, probs));
    return decide(layer, probs, raw);
}

RoutingDecision route(const MoELayer& layer, const Tensor& x) {
    switch (layer.config().variant) {
        case Variant::Vanilla: return route_vanilla(layer, x);
        case Variant::AdaMoE: return route_adamoe(layer, x);
        case Variant::CSMoE: return route_csmoe(layer, x);
        case Variant::Dense: break;
    }
    throw ConfigError("route: dense variant has no router");
}

MoEOutput moe_forward(const Tensor& x, const MoELayer& layer, const MoEForwardOptions& options) {
    MoEOutput out;
    out.decision = route(layer, x);
    const RoutingDecision& d = out.decision;
    const std::size_t T = d.num_tokens, K = d.num_experts, k = d.top_k;

    auto check_finite = [&](const Tensor& t, const std::string& who) {
        for (double v : t.data()) {
            if (!std::isfinite(v)) {
                throw NumericalError("non-finite output in layer " + std::to_string(layer.layer_id()) + " " + who);
            }
        }
    };

    Tensor y = layer.shared().forward(x);
    check_finite(y, "shared expert");
    if (options.zero_routed) {
        out.y = y;
        return out;
    }
    for (std::size_t e = 0; e < K; ++e) {
        std::vector<std::size_t> rows;
        std::vector<std::size_t> slots;
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t s = 0; s < k; ++s) {
                if (d.selected[t * k + s] == e) {
                    rows.push_back(t);
                    slots.push_back(t * k + s);
                }
            }
        }
        if (rows.empty()) {
            continue;
        }
        const Tensor expert_out = layer.routed()[e].forward(gather_rows(x, rows));
        check_finite(expert_out, "expert " + std::to_string(e));
        const Tensor weighted = mul_rows(expert_out, take(d.weights, slots));
        y = add(y, scatter_add_rows(weighted, rows, T));
    }
    out.y = y;
    return out;
}

Tensor load_balance_loss(const RoutingDecision& d, const MoEConfig& cfg) {
    if (d.num_tokens == 0) {
        throw ContractError("load_balance_loss: decision covers no tokens");
    }
    const ExpertLoad load = expert_load_stats(d);
    const Tensor f = Tensor::from({d.num_experts}, load.fraction);
    const Tensor p = mean_rows(d.probs);
    return scale(sum(mul(p, f)), cfg.alpha * static_cast<double>(d.num_experts));
}

MoELayer upcycle_from_dense(const ExpertFFN& dense, const MoEConfig& cfg, Rng& rng, std::size_t layer_id) {
    cfg.validate();
    if (dense.up.shape() != Shape{cfg.d_model, cfg.d_ff} || dense.down.shape() != Shape{cfg.d_ff, cfg.d_model}) {
        throw ConfigError("upcycle: dense FFN " + shape_str(dense.up.shape()) + "/" + shape_str(dense.down.shape()) +
                          " does not match d_model=" + std::to_string(cfg.d_model) +
                          " d_ff=" + std::to_string(cfg.d_ff));
    }
    const std::size_t K = cfg.num_experts, d = cfg.d_model;
    std::vector<ExpertFFN> routed;
    for (std::size_t i = 0; i < K; ++i) routed.push_back(dense.copy());
    Router router{Linear::normal(d, K, kRouterInitStd, rng)};
    std::optional<ScaleAdapter> adapter;
    std::optional<CSMoEHead> head;
    if (cfg.variant == Variant::AdaMoE) {
        adapter = ScaleAdapter{Linear::zeros(d, K)};
    }
    if (cfg.variant == Variant::CSMoE) {
        Linear map = Linear::zeros(d + K, K);
        auto w = map.weight.mutable_data();
        for (std::size_t i = 0; i < K; ++i) w[(d + i) * K + i] = 1.0;
        head = CSMoEHead{std::move(map)};
    }
    return MoELayer(cfg, dense.copy(), std::move(routed), std::move(router), std::move(adapter), std::move(head),
                    layer_id);
}

}  // namespace adamoe
