// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/training.hpp"

#include <cmath>
#include <cstdio>

#include "adamoe/errors.hpp"

namespace adamoe {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (total_steps == 0) throw ConfigError("train config: total_steps must be positive");
    if (!(peak_lr > 0.0)) throw ConfigError("train config: peak_lr must be positive");
    if (!(router_lr_ratio > 0.0)) throw ConfigError("train config: router_lr_ratio must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train config: betas must lie in [0, 1)");
    }
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be non-negative");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("train config: grad_clip_norm must be positive");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train config: ema_decay must lie in (0, 1)");
    if (lambda_balance < 0.0) throw ConfigError("train config: lambda_balance must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw ConfigError("train config: warmup_fraction must lie in [0, 1)");
    }
}

std::size_t TrainConfig::warmup_steps() const {
    const auto w = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    return std::max<std::size_t>(w, 1);
}

LrSchedule TrainConfig::schedule() const { return {peak_lr, total_steps, warmup_steps()}; }

TrainConfig TrainConfig::paper_preset() {
    TrainConfig c;
    c.total_steps = 120000;
    c.peak_lr = 2.5e-5;
    c.router_lr_ratio = 2.0;
    return c;
}

TrainBatch sample_batch(const std::vector<TrajectoryStep>& data, std::size_t batch_size, Rng& rng) {
    if (data.empty()) throw ContractError("sample_batch: empty dataset");
    TrainBatch b;
    b.obs.reserve(batch_size);
    b.samples.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const TrajectoryStep& st = data[rng.index(data.size())];
        b.obs.push_back(st.obs);
        b.samples.push_back(make_flow_sample(st.chunk, rng));
    }
    return b;
}

LossTerms total_loss(const PolicyModel& model, const TrainBatch& batch, double lambda_balance) {
    if (batch.size() == 0 || batch.samples.size() != batch.obs.size()) {
        throw ContractError("total_loss: empty or inconsistent batch");
    }
    VelocityBatch vb;
    vb.obs = batch.obs;
    std::vector<double> targets;
    for (const auto& s : batch.samples) {
        vb.noisy.push_back(s.noisy);
        vb.tau.push_back(s.tau);
        targets.insert(targets.end(), s.target.values.begin(), s.target.values.end());
    }
    const PolicyOutput out = model.forward(vb);
    const Tensor target = Tensor::from(out.velocity.shape(), std::move(targets));
    const Tensor fm = mse(out.velocity, target);

    LossTerms terms;
    terms.fm = fm.item();
    if (!std::isfinite(terms.fm)) throw NumericalError("non-finite loss term: flow matching");
    if (out.decisions.empty()) {
        terms.total = fm;
        terms.total_value = terms.fm;
        return terms;
    }

    Tensor bal_sum;
    for (std::size_t i = 0; i < out.decisions.size(); ++i) {
        const std::size_t layer = out.decision_layers[i];
        const Tensor li = load_balance_loss(out.decisions[i], model.blocks()[layer].moe->config());
        bal_sum = i == 0 ? li : add(bal_sum, li);
        terms.moe_layers.push_back(layer);
        terms.loads.push_back(expert_load_stats(out.decisions[i]));
    }
    const Tensor balance = scale(bal_sum, 1.0 / static_cast<double>(out.decisions.size()));
    terms.balance = balance.item();
    if (!std::isfinite(terms.balance)) throw NumericalError("non-finite loss term: load balance");
    const Tensor weighted = scale(balance, lambda_balance);
    terms.balance_term = weighted.item();
    terms.total = add(fm, weighted);
    terms.total_value = terms.total.item();
    return terms;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(PolicyModel model, TrainConfig cfg, std::vector<TrajectoryStep> data)
    : model_(std::move(model)), cfg_(cfg), data_(std::move(data)), rng_(cfg.seed) {
    cfg_.validate();
    params_ = model_.parameters();
    opt_ = AdamW(params_, {cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay});
    ema_ = Ema(params_, cfg_.ema_decay);
    schedule_ = cfg_.schedule();
}

StepMetrics Trainer::step() {
    const TrainBatch batch = sample_batch(data_, cfg_.batch_size, rng_);
    return step_on(batch);
}

StepMetrics Trainer::step_on(const TrainBatch& batch) {
    for (auto& p : params_) p.tensor.zero_grad();
    const LossTerms terms = total_loss(model_, batch, cfg_.lambda_balance);
    terms.total.backward();
    for (const auto& p : params_) {
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p.name);
        }
    }
    const double norm = clip_grad_norm(params_, cfg_.grad_clip_norm);
    const double lr = schedule_.at(opt_.step_count());
    const double lr_router = lr * cfg_.router_lr_ratio;
    opt_.step(params_, lr, lr_router);
    ema_.update(params_);

    StepMetrics m;
    m.step = opt_.step_count();
    m.loss_total = terms.total_value;
    m.loss_fm = terms.fm;
    m.loss_balance = terms.balance_term;
    m.grad_norm = norm;
    m.lr_base = lr;
    m.lr_router = lr_router;
    m.moe_layers = terms.moe_layers;
    for (const auto& l : terms.loads) m.fractions.push_back(l.fraction);
    return m;
}

PolicyModel Trainer::ema_model() const {
    PolicyModel m = clone_model(model_);
    ema_.copy_to(m.parameters());
    return m;
}

PolicyModel clone_model(const PolicyModel& model) {
    Rng scratch(0);
    PolicyModel m = PolicyModel::create(model.config(), scratch);
    const ParamList src = model.parameters();
    std::vector<std::vector<double>> values;
    values.reserve(src.size());
    for (const auto& p : src) values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    assign_parameters(m.parameters(), values);
    return m;
}

void assign_parameters(const ParamList& dst, const std::vector<std::vector<double>>& values) {
    if (dst.size() != values.size()) {
        throw ContractError("assign_parameters: " + std::to_string(values.size()) + " value sets for " +
                            std::to_string(dst.size()) + " parameters");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        Tensor t = dst[i].tensor;
        if (t.numel() != values[i].size()) {
            throw DimensionError("assign_parameters: size mismatch for " + dst[i].name);
        }
        auto w = t.mutable_data();
        std::copy(values[i].begin(), values[i].end(), w.begin());
    }
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string MetricsWriter::header(const ModelConfig& cfg) {
    std::string h = "step,loss_total,loss_fm,loss_balance,grad_norm,lr_base,lr_router";
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        if (!cfg.layer_is_moe(l)) continue;
        for (std::size_t e = 0; e < cfg.num_experts; ++e) {
            h += ",f_l" + std::to_string(l) + "_e" + std::to_string(e);
        }
    }
    return h;
}

std::string MetricsWriter::row(const StepMetrics& m) {
    std::string r = std::to_string(m.step) + "," + fmt(m.loss_total) + "," + fmt(m.loss_fm) + "," +
                    fmt(m.loss_balance) + "," + fmt(m.grad_norm) + "," + fmt(m.lr_base) + "," + fmt(m.lr_router);
    for (const auto& layer : m.fractions) {
        for (double f : layer) r += "," + fmt(f);
    }
    return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, const ModelConfig& cfg) : path_(path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw IoError("cannot open metrics file " + path.string());
    if (fresh) out_ << header(cfg) << '\n';
}

void MetricsWriter::append(const StepMetrics& m) {
    out_ << row(m) << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing metrics file " + path_.string());
}

}  // namespace adamoe
