// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "adamoe/rng.hpp"
#include "adamoe/tensor.hpp"

namespace adamoe {

/// Learning-rate group. Router-like maps (router, scale adapter, CSMoE head)
/// train at the router rate; everything else at the base rate.
enum class ParamGroup { Base, Router };

struct NamedParam {
    std::string name;
    Tensor tensor;
    ParamGroup group = ParamGroup::Base;
};

using ParamList = std::vector<NamedParam>;

/// Affine map y = x W + b with W stored [in, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

    static Linear zeros(std::size_t in, std::size_t out);
    /// Weights ~ N(0, std^2), bias zero.
    static Linear normal(std::size_t in, std::size_t out, double std, Rng& rng);

    Linear copy() const { return {weight.clone(true), bias.clone(true)}; }
    void append_params(ParamList& out, const std::string& prefix, ParamGroup group) const;
};

Tensor normal_tensor(Shape shape, double std, Rng& rng, bool requires_grad = true);

}  // namespace adamoe
