// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary little-endian layout:
//   "AMOE" | u32 version | u64 header length | header JSON (UTF-8)
//   then per tensor: u32 name length | name | u32 rank | u64 extents[rank] | f64 values
//
// Tensor names carry a section prefix: param/, adam_m/, adam_v/ or ema/.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adamoe/policy.hpp"
#include "adamoe/training.hpp"

namespace adamoe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedBlob {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const NamedBlob&) const = default;
};

struct Checkpoint {
    ModelConfig config;
    std::uint64_t step = 0;
    std::string rng_state;
    std::vector<NamedBlob> tensors;

    const NamedBlob* find(const std::string& name) const;
    std::vector<std::string> names() const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version, digest or truncation.
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Model weights only (param/ section).
Checkpoint model_checkpoint(const PolicyModel& model);
/// Full training state: params, optimizer moments, EMA shadow, step, RNG.
Checkpoint trainer_checkpoint(const Trainer& trainer);

/// Builds the model stored in `ckpt`; `use_ema` reads the ema/ section.
PolicyModel load_model(const Checkpoint& ckpt, bool use_ema = false);
/// Restores optimizer, EMA, step and RNG state into `trainer`. The model
/// config digest must match.
void restore_trainer(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace adamoe
