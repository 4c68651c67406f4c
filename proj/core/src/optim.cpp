// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/optim.hpp"

#include <cmath>
#include <numbers>

#include "adamoe/errors.hpp"

namespace adamoe {

AdamW::AdamW(const ParamList& params, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::step(const ParamList& params, double lr_base, double lr_router) {
    if (params.size() != m_.size()) {
        throw ContractError("AdamW: parameter list changed size (" + std::to_string(params.size()) + " vs " +
                            std::to_string(m_.size()) + ")");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        const double lr = params[i].group == ParamGroup::Router ? lr_router : lr_base;
        const auto g = t.grad();
        auto w = t.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
        }
    }
}

double global_grad_norm(const ParamList& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            Tensor t = p.tensor;
            for (double& g : t.mutable_grad()) g *= s;
        }
    }
    return norm;
}

Ema::Ema(const ParamList& params, double decay) : decay_(decay) {
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("EMA decay must lie in (0, 1)");
    for (const auto& p : params) {
        const auto d = p.tensor.data();
        shadow_.emplace_back(d.begin(), d.end());
    }
}

void Ema::update(const ParamList& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto d = params[i].tensor.data();
        auto& s = shadow_[i];
        for (std::size_t j = 0; j < d.size(); ++j) s[j] = decay_ * s[j] + (1.0 - decay_) * d[j];
    }
}

void Ema::copy_to(const ParamList& params) const {
    if (params.size() != shadow_.size()) throw ContractError("EMA: parameter list size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        auto w = t.mutable_data();
        std::copy(shadow_[i].begin(), shadow_[i].end(), w.begin());
    }
}

double LrSchedule::at(std::size_t step) const {
    if (step < warmup_steps) {
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return peak;
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace adamoe
