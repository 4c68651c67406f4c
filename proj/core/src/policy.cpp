// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/policy.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "adamoe/errors.hpp"

namespace adamoe {

using nlohmann::json;

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(horizon, "horizon");
    positive(action_dim, "action_dim");
    positive(state_dim, "state_dim");
    positive(scene_dim, "scene_dim");
    positive(num_tasks, "num_tasks");
    positive(tau_embed, "tau_embed");
    if (d_model % heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (tau_embed % 2 != 0) {
        throw ConfigError("model config: tau_embed must be even");
    }
    if (!moe_layers.empty() && moe_layers.size() != layers) {
        throw ConfigError("model config: moe_layers mask has " + std::to_string(moe_layers.size()) +
                          " entries for " + std::to_string(layers) + " layers");
    }
    if (is_moe()) {
        moe_config().validate();
    }
}

bool ModelConfig::layer_is_moe(std::size_t layer) const {
    return is_moe() && (moe_layers.empty() || moe_layers.at(layer));
}

MoEConfig ModelConfig::moe_config() const {
    MoEConfig m;
    m.num_experts = num_experts;
    m.top_k = top_k;
    m.variant = variant;
    m.alpha = alpha;
    m.d_model = d_model;
    m.d_ff = d_ff;
    return m;
}

namespace {

json config_to_json(const ModelConfig& c) {
    std::string mask;
    for (bool b : c.moe_layers) mask += b ? '1' : '0';
    return json{{"d_model", c.d_model},     {"d_ff", c.d_ff},         {"layers", c.layers},
                {"heads", c.heads},         {"horizon", c.horizon},   {"action_dim", c.action_dim},
                {"state_dim", c.state_dim}, {"scene_dim", c.scene_dim}, {"num_tasks", c.num_tasks},
                {"tau_embed", c.tau_embed}, {"variant", variant_name(c.variant)},
                {"num_experts", c.num_experts}, {"top_k", c.top_k}, {"alpha", c.alpha},
                {"moe_layers", mask}};
}

}  // namespace

std::string model_config_json(const ModelConfig& cfg) { return config_to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig c;
    try {
        const json j = json::parse(text);
        c.d_model = j.at("d_model").get<std::size_t>();
        c.d_ff = j.at("d_ff").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.horizon = j.at("horizon").get<std::size_t>();
        c.action_dim = j.at("action_dim").get<std::size_t>();
        c.state_dim = j.at("state_dim").get<std::size_t>();
        c.scene_dim = j.at("scene_dim").get<std::size_t>();
        c.num_tasks = j.at("num_tasks").get<std::size_t>();
        c.tau_embed = j.at("tau_embed").get<std::size_t>();
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.num_experts = j.at("num_experts").get<std::size_t>();
        c.top_k = j.at("top_k").get<std::size_t>();
        c.alpha = j.at("alpha").get<double>();
        for (char ch : j.at("moe_layers").get<std::string>()) c.moe_layers.push_back(ch == '1');
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config JSON: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t model_config_digest(const ModelConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : model_config_json(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<double> tau_embedding(double tau, std::size_t width) {
    std::vector<double> out(width);
    const std::size_t half = width / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
        const double freq = std::exp(exponent * std::log(1000.0));
        out[i] = std::sin(tau * freq);
        out[half + i] = std::cos(tau * freq);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

PolicyModel PolicyModel::create(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    PolicyModel m(cfg);
    const std::size_t d = cfg.d_model;
    m.state_proj_ = Linear::normal(cfg.state_dim, d, fan_in_std(cfg.state_dim), rng);
    m.scene_proj_ = Linear::normal(cfg.scene_dim, d, fan_in_std(cfg.scene_dim), rng);
    m.task_table_ = normal_tensor({cfg.num_tasks, d}, 1.0, rng);
    m.action_proj_ = Linear::normal(cfg.action_dim, d, fan_in_std(cfg.action_dim), rng);
    m.pos_embed_ = normal_tensor({cfg.horizon, d}, 0.5, rng);
    m.tau_proj_ = Linear::normal(cfg.tau_embed, d, fan_in_std(cfg.tau_embed), rng);
    const double out_std = fan_in_std(d) / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        TransformerBlock b;
        b.norm1 = Tensor::full({d}, 1.0, true);
        b.wq = Linear::normal(d, d, fan_in_std(d), rng);
        b.wk = Linear::normal(d, d, fan_in_std(d), rng);
        b.wv = Linear::normal(d, d, fan_in_std(d), rng);
        b.wo = Linear::normal(d, d, out_std, rng);
        b.norm2 = Tensor::full({d}, 1.0, true);
        ExpertFFN ffn = ExpertFFN::init(d, cfg.d_ff, rng);
        if (cfg.layer_is_moe(l)) {
            b.moe = upcycle_from_dense(ffn, cfg.moe_config(), rng, l);
        } else {
            b.dense_ffn = std::move(ffn);
        }
        m.blocks_.push_back(std::move(b));
    }
    m.final_norm_ = Tensor::full({d}, 1.0, true);
    m.out_proj_ = Linear::normal(d, cfg.action_dim, fan_in_std(d), rng);
    return m;
}

PolicyModel PolicyModel::upcycle(const PolicyModel& dense, const ModelConfig& moe_cfg, Rng& rng) {
    moe_cfg.validate();
    const ModelConfig& dc = dense.cfg_;
    if (dc.is_moe()) {
        throw ConfigError("upcycle: parent model is not dense (variant " + variant_name(dc.variant) + ")");
    }
    if (!moe_cfg.is_moe()) {
        throw ConfigError("upcycle: target variant must be vanilla, csmoe or adamoe");
    }
    auto mismatch = [&](const char* name, std::size_t a, std::size_t b) {
        if (a != b) {
            throw ConfigError(std::string("upcycle: ") + name + " differs: dense " + std::to_string(a) + " vs moe " +
                              std::to_string(b));
        }
    };
    mismatch("d_model", dc.d_model, moe_cfg.d_model);
    mismatch("d_ff", dc.d_ff, moe_cfg.d_ff);
    mismatch("layers", dc.layers, moe_cfg.layers);
    mismatch("heads", dc.heads, moe_cfg.heads);
    mismatch("horizon", dc.horizon, moe_cfg.horizon);
    mismatch("action_dim", dc.action_dim, moe_cfg.action_dim);
    mismatch("state_dim", dc.state_dim, moe_cfg.state_dim);
    mismatch("scene_dim", dc.scene_dim, moe_cfg.scene_dim);
    mismatch("num_tasks", dc.num_tasks, moe_cfg.num_tasks);
    mismatch("tau_embed", dc.tau_embed, moe_cfg.tau_embed);

    PolicyModel m(moe_cfg);
    m.state_proj_ = dense.state_proj_.copy();
    m.scene_proj_ = dense.scene_proj_.copy();
    m.task_table_ = dense.task_table_.clone(true);
    m.action_proj_ = dense.action_proj_.copy();
    m.pos_embed_ = dense.pos_embed_.clone(true);
    m.tau_proj_ = dense.tau_proj_.copy();
    for (std::size_t l = 0; l < dc.layers; ++l) {
        const TransformerBlock& src = dense.blocks_[l];
        TransformerBlock b;
        b.norm1 = src.norm1.clone(true);
        b.wq = src.wq.copy();
        b.wk = src.wk.copy();
        b.wv = src.wv.copy();
        b.wo = src.wo.copy();
        b.norm2 = src.norm2.clone(true);
        if (moe_cfg.layer_is_moe(l)) {
            b.moe = upcycle_from_dense(*src.dense_ffn, moe_cfg.moe_config(), rng, l);
        } else {
            b.dense_ffn = src.dense_ffn->copy();
        }
        m.blocks_.push_back(std::move(b));
    }
    m.final_norm_ = dense.final_norm_.clone(true);
    m.out_proj_ = dense.out_proj_.copy();
    return m;
}

ParamList PolicyModel::parameters() const {
    ParamList p;
    state_proj_.append_params(p, "embed.state", ParamGroup::Base);
    scene_proj_.append_params(p, "embed.scene", ParamGroup::Base);
    p.push_back({"embed.task", task_table_, ParamGroup::Base});
    action_proj_.append_params(p, "embed.action", ParamGroup::Base);
    p.push_back({"embed.pos", pos_embed_, ParamGroup::Base});
    tau_proj_.append_params(p, "embed.tau", ParamGroup::Base);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const TransformerBlock& b = blocks_[l];
        const std::string pre = "layers." + std::to_string(l);
        p.push_back({pre + ".norm1", b.norm1, ParamGroup::Base});
        b.wq.append_params(p, pre + ".attn.q", ParamGroup::Base);
        b.wk.append_params(p, pre + ".attn.k", ParamGroup::Base);
        b.wv.append_params(p, pre + ".attn.v", ParamGroup::Base);
        b.wo.append_params(p, pre + ".attn.o", ParamGroup::Base);
        p.push_back({pre + ".norm2", b.norm2, ParamGroup::Base});
        if (b.moe) {
            b.moe->append_params(p, pre + ".moe");
        } else {
            b.dense_ffn->append_params(p, pre + ".ffn");
        }
    }
    p.push_back({"head.norm", final_norm_, ParamGroup::Base});
    out_proj_.append_params(p, "head.out", ParamGroup::Base);
    return p;
}

std::size_t PolicyModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

std::size_t PolicyModel::ffn_parameter_count(std::size_t layer) const {
    const TransformerBlock& b = blocks_.at(layer);
    if (b.moe) return b.moe->parameter_count();
    return b.dense_ffn->up.numel() + b.dense_ffn->down.numel();
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

void PolicyModel::check_observation(const Observation& obs) const {
    if (obs.task_id >= cfg_.num_tasks) {
        throw RegistryError("unknown task id " + std::to_string(obs.task_id) + " (model knows " +
                            std::to_string(cfg_.num_tasks) + " tasks)");
    }
    if (obs.state.size() != cfg_.state_dim || obs.scene.size() != cfg_.scene_dim) {
        throw DimensionError("observation state/scene sizes " + std::to_string(obs.state.size()) + "/" +
                             std::to_string(obs.scene.size()) + ", expected " + std::to_string(cfg_.state_dim) +
                             "/" + std::to_string(cfg_.scene_dim));
    }
}

Tensor PolicyModel::encode_observation(const Observation& obs) const {
    check_observation(obs);
    const Tensor state = state_proj_.forward(Tensor::from({1, cfg_.state_dim}, obs.state));
    const Tensor scene = scene_proj_.forward(Tensor::from({1, cfg_.scene_dim}, obs.scene));
    const std::size_t tid[] = {obs.task_id};
    const Tensor task = gather_rows(task_table_, tid);
    const std::size_t r0[] = {0}, r1[] = {1}, r2[] = {2};
    return add(add(scatter_add_rows(state, r0, 3), scatter_add_rows(scene, r1, 3)), scatter_add_rows(task, r2, 3));
}

PolicyOutput PolicyModel::forward(const VelocityBatch& batch, const PolicyForwardOptions& options) const {
    const std::size_t B = batch.size();
    if (B == 0 || batch.noisy.size() != B || batch.tau.size() != B) {
        throw ContractError("velocity batch needs matching non-empty obs/noisy/tau lists");
    }
    const std::size_t H = cfg_.horizon, A = cfg_.action_dim;
    const std::size_t n_obs = ModelConfig::kObsTokens;
    const std::size_t T = n_obs + H;

    std::vector<double> states, scenes, actions, taus;
    std::vector<std::size_t> task_ids;
    states.reserve(B * cfg_.state_dim);
    scenes.reserve(B * cfg_.scene_dim);
    actions.reserve(B * H * A);
    for (std::size_t b = 0; b < B; ++b) {
        check_observation(batch.obs[b]);
        const ActionChunk& c = batch.noisy[b];
        if (c.horizon != H || c.action_dim != A) {
            throw DimensionError("noisy chunk " + std::to_string(c.horizon) + "x" + std::to_string(c.action_dim) +
                                 ", expected " + std::to_string(H) + "x" + std::to_string(A));
        }
        states.insert(states.end(), batch.obs[b].state.begin(), batch.obs[b].state.end());
        scenes.insert(scenes.end(), batch.obs[b].scene.begin(), batch.obs[b].scene.end());
        actions.insert(actions.end(), c.values.begin(), c.values.end());
        task_ids.push_back(batch.obs[b].task_id);
        const auto emb = tau_embedding(batch.tau[b], cfg_.tau_embed);
        taus.insert(taus.end(), emb.begin(), emb.end());
    }

    std::vector<std::size_t> state_rows(B), scene_rows(B), task_rows(B), obs_rows, act_rows, pos_idx, tau_idx;
    obs_rows.reserve(B * n_obs);
    act_rows.reserve(B * H);
    for (std::size_t b = 0; b < B; ++b) {
        state_rows[b] = b * T;
        scene_rows[b] = b * T + 1;
        task_rows[b] = b * T + 2;
        for (std::size_t t = 0; t < n_obs; ++t) obs_rows.push_back(b * T + t);
        for (std::size_t h = 0; h < H; ++h) {
            act_rows.push_back(b * T + n_obs + h);
            pos_idx.push_back(h);
            tau_idx.push_back(b);
        }
    }

    const Tensor state_tok = state_proj_.forward(Tensor::from({B, cfg_.state_dim}, std::move(states)));
    const Tensor scene_tok = scene_proj_.forward(Tensor::from({B, cfg_.scene_dim}, std::move(scenes)));
    const Tensor task_tok = gather_rows(task_table_, task_ids);
    const Tensor tau_tok = tau_proj_.forward(Tensor::from({B, cfg_.tau_embed}, std::move(taus)));
    Tensor act_tok = action_proj_.forward(Tensor::from({B * H, A}, std::move(actions)));
    act_tok = add(add(act_tok, gather_rows(pos_embed_, pos_idx)), gather_rows(tau_tok, tau_idx));

    const std::size_t rows = B * T;
    Tensor x = add(add(scatter_add_rows(state_tok, state_rows, rows), scatter_add_rows(scene_tok, scene_rows, rows)),
                   add(scatter_add_rows(task_tok, task_rows, rows), scatter_add_rows(act_tok, act_rows, rows)));

    AttentionLayout layout;
    layout.batch = B;
    layout.seq = T;
    layout.heads = cfg_.heads;
    layout.key_limit.assign(T, T);
    for (std::size_t t = 0; t < n_obs; ++t) layout.key_limit[t] = n_obs;

    PolicyOutput out;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const TransformerBlock& blk = blocks_[l];
        const Tensor h1 = rms_norm(x, blk.norm1);
        const Tensor att = attention(blk.wq.forward(h1), blk.wk.forward(h1), blk.wv.forward(h1), layout);
        x = add(x, blk.wo.forward(att));

        const Tensor h2 = rms_norm(x, blk.norm2);
        const Tensor obs_in = gather_rows(h2, obs_rows);
        const Tensor act_in = gather_rows(h2, act_rows);
        const ExpertFFN& obs_ffn = blk.moe ? blk.moe->shared() : *blk.dense_ffn;
        const Tensor obs_out = obs_ffn.forward(obs_in);
        Tensor act_out;
        if (options.action_ffn_override) {
            act_out = options.action_ffn_override(l, act_in);
        } else if (blk.moe) {
            MoEForwardOptions mo;
            mo.zero_routed = options.zero_routed;
            MoEOutput r = moe_forward(act_in, *blk.moe, mo);
            act_out = r.y;
            out.decisions.push_back(std::move(r.decision));
            out.decision_layers.push_back(l);
        } else {
            act_out = blk.dense_ffn->forward(act_in);
        }
        x = add(x, add(scatter_add_rows(obs_out, obs_rows, rows), scatter_add_rows(act_out, act_rows, rows)));
    }
    const Tensor final_h = rms_norm(gather_rows(x, act_rows), final_norm_);
    out.velocity = out_proj_.forward(final_h);
    return out;
}

ActionChunk PolicyModel::velocity(const ActionChunk& noisy, const Observation& obs, double tau,
                                  PolicyOutput* out) const {
    VelocityBatch batch{{obs}, {noisy}, {tau}};
    PolicyOutput result = forward(batch);
    ActionChunk v = tensor_chunk(result.velocity);
    if (out) {
        *out = std::move(result);
    }
    return v;
}

ActionChunk PolicyModel::predict_action_chunk(const Observation& obs, Rng& rng, std::size_t steps,
                                              const DecisionObserver& observer) const {
    NoGradGuard no_grad;
    ActionChunk start = ActionChunk::zeros(cfg_.horizon, cfg_.action_dim);
    for (double& v : start.values) v = rng.normal();
    std::size_t step = 0;
    VelocityField field = [&](const ActionChunk& noisy, const Observation& o, double tau) {
        PolicyOutput out;
        ActionChunk v = velocity(noisy, o, tau, &out);
        if (observer) observer(step, out);
        ++step;
        return v;
    };
    IntegrationConfig ic;
    ic.steps = steps;
    return integrate(field, obs, start, ic);
}

}  // namespace adamoe
