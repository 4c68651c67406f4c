// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "adamoe/params.hpp"

namespace adamoe {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW with bias correction and two learning-rate groups.
class AdamW {
  public:
    AdamW() = default;
    AdamW(const ParamList& params, AdamWConfig cfg);

    /// Applies one update from the current parameter gradients.
    void step(const ParamList& params, double lr_base, double lr_router);

    std::size_t step_count() const { return t_; }
    void set_step_count(std::size_t t) { t_ = t; }
    const AdamWConfig& config() const { return cfg_; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

  private:
    AdamWConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

double global_grad_norm(const ParamList& params);

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

/// Exponential moving average of parameter values.
class Ema {
  public:
    Ema() = default;
    Ema(const ParamList& params, double decay);

    void update(const ParamList& params);
    void copy_to(const ParamList& params) const;

    double decay() const { return decay_; }
    std::vector<std::vector<double>>& shadow() { return shadow_; }
    const std::vector<std::vector<double>>& shadow() const { return shadow_; }

  private:
    double decay_ = 0.99;
    std::vector<std::vector<double>> shadow_;
};

/// Linear warmup to `peak`, then cosine decay to zero at `total_steps`.
struct LrSchedule {
    double peak = 3e-4;
    std::size_t total_steps = 1;
    std::size_t warmup_steps = 1;

    /// Rate used for the update at zero-based `step`.
    double at(std::size_t step) const;
};

}  // namespace adamoe
