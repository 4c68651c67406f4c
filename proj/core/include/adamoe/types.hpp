// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Policy I/O pair: an observation and the chunk of future actions predicted for it.

#pragma once

#include <cstddef>
#include <vector>

namespace adamoe {

/// H x d_a block of future actions, row-major (one row per step).
struct ActionChunk {
    std::size_t horizon = 0;
    std::size_t action_dim = 0;
    std::vector<double> values;

    static ActionChunk zeros(std::size_t horizon, std::size_t action_dim) {
        return {horizon, action_dim, std::vector<double>(horizon * action_dim, 0.0)};
    }

    double& at(std::size_t step, std::size_t j) { return values[step * action_dim + j]; }
    double at(std::size_t step, std::size_t j) const { return values[step * action_dim + j]; }

    bool same_shape(const ActionChunk& o) const { return horizon == o.horizon && action_dim == o.action_dim; }
    bool operator==(const ActionChunk&) const = default;
};

/// Proprioceptive state, object positions standing in for camera views, and
/// a task label standing in for the language instruction.
struct Observation {
    std::vector<double> state;
    std::vector<double> scene;
    std::size_t task_id = 0;

    bool operator==(const Observation&) const = default;
};

}  // namespace adamoe
