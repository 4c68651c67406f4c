// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "adamoe/rng.hpp"

#include <sstream>

#include "adamoe/errors.hpp"

namespace adamoe {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ stream);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_a, std::uint64_t stream_b) {
    return derive_seed(derive_seed(master, stream_a), stream_b);
}

double Rng::uniform() {
    // 53 random mantissa bits; never returns 1.0.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::index(std::size_t n) {
    if (n == 0) {
        throw ContractError("Rng::index: empty range");
    }
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

Rng Rng::deserialize(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng.engine_ >> rng.normal_;
    if (!is) {
        throw CheckpointError("malformed RNG state");
    }
    return rng;
}

bool Rng::operator==(const Rng& other) const {
    return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace adamoe
