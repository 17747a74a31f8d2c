#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace meshsched {

/// Raised when a configuration document or CLI argument is invalid.
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a runtime invariant that must hold by construction is broken
/// (caller contract violation or internal bug). The CLI maps this to exit
/// code 3.
struct InvariantViolation : std::logic_error {
    explicit InvariantViolation(const std::string& what) : std::logic_error(what) {}
};

/// Raised for out-of-domain arguments such as unknown node ids.
struct DomainError : std::invalid_argument {
    explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

using Rng = std::mt19937_64;

using NodeId = int;
using FlowId = int;

/// Packed (flow, node, ttd) key, 20 bits per component.
using StateKey = std::uint64_t;

inline StateKey pack_state(int flow, int node, int ttd) {
    constexpr std::uint64_t kMax = (1u << 20) - 1;
    if (flow < 0 || node < 0 || ttd < 0 || static_cast<std::uint64_t>(flow) > kMax ||
        static_cast<std::uint64_t>(node) > kMax || static_cast<std::uint64_t>(ttd) > kMax)
        throw InvariantViolation("pack_state: component out of range");
    return (static_cast<std::uint64_t>(flow) << 40) | (static_cast<std::uint64_t>(node) << 20) |
           static_cast<std::uint64_t>(ttd);
}

inline int unpack_flow(StateKey k) { return static_cast<int>(k >> 40); }
inline int unpack_node(StateKey k) { return static_cast<int>((k >> 20) & 0xFFFFF); }
inline int unpack_ttd(StateKey k) { return static_cast<int>(k & 0xFFFFF); }

/// Derives an independent, reproducible RNG stream from a master seed.
/// Streams with distinct tags never share state, so e.g. the arrival
/// process stays identical across scheduler variants under one seed.
inline Rng make_stream(std::uint64_t seed, std::uint64_t tag) {
    std::seed_seq seq{seed, tag, seed ^ std::uint64_t{0x9E3779B97F4A7C15},
                      tag * std::uint64_t{0xBF58476D1CE4E5B9}};
    return Rng(seq);
}

}  // namespace meshsched
