// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/params.hpp"

namespace adamoe {

Tensor normal_tensor(Shape shape, double std, Rng& rng, bool requires_grad) {
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
        v = std * rng.normal();
    }
    return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Linear Linear::normal(std::size_t in, std::size_t out, double std, Rng& rng) {
    return {normal_tensor({in, out}, std, rng), Tensor::zeros({out}, true)};
}

void Linear::append_params(ParamList& out, const std::string& prefix, ParamGroup group) const {
    out.push_back({prefix + ".weight", weight, group});
    out.push_back({prefix + ".bias", bias, group});
}

}  // namespace adamoe
