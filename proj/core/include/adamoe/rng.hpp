// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace adamoe {

/// SplitMix64 finalizer. Used to derive independent per-episode and per-run
/// seeds from one master seed: derive_seed(master, a, b) mixes each stream
/// component in turn, so (master, task, episode) triples never collide in
/// practice and reordering the components gives a different stream.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_a, std::uint64_t stream_b);

/// Seeded random source. Serializable so training can resume bit-exactly.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // N(0, 1)
    std::size_t index(std::size_t n);       // [0, n)

    std::mt19937_64& engine() { return engine_; }

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

    bool operator==(const Rng& other) const;

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace adamoe
