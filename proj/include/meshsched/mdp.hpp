#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "meshsched/core.hpp"
#include "meshsched/net_model.hpp"

namespace meshsched {

/// The per-packet decision state: where the packet is and how many slots
/// remain before its deadline. States are scoped per flow; only packets of
/// the same flow share a state.
struct PacketState {
    FlowId flow = 0;
    NodeId node = 0;
    int ttd = 0;

    bool operator==(const PacketState& o) const {
        return flow == o.flow && node == o.node && ttd == o.ttd;
    }
    bool operator!=(const PacketState& o) const { return !(*this == o); }
    StateKey key() const { return pack_state(flow, node, ttd); }
};

/// One scheduling choice: next hop plus the subcarrier count and the index
/// into the discrete power grid. subcarriers == 0 encodes "hold" (no
/// transmission this slot).
struct ScheduleAction {
    NodeId next_hop = -1;
    int subcarriers = 0;
    int power_level = -1;

    static ScheduleAction hold() { return {}; }
    bool is_hold() const { return subcarriers == 0; }
    bool operator==(const ScheduleAction& o) const {
        return next_hop == o.next_hop && subcarriers == o.subcarriers &&
               power_level == o.power_level;
    }
};

/// Evenly spaced transmit power levels in (0, P].
struct PowerGrid {
    int levels = 4;
    double max_mw = 100.0;

    double level_mw(int idx) const {
        if (idx < 0 || idx >= levels) throw DomainError("power level out of range");
        return max_mw * (idx + 1) / levels;
    }
};

struct Packet {
    long id = 0;
    PacketState state;
    std::optional<PacketState> prev_state;  // none until the first slot completes
    int size_bits = 100;                    // n_sigma
    long birth_slot = 0;
    long arrived_at_node_slot = 0;  // for FIFO queue order in the CSMA baselines
    int hops = 0;
    bool delivered = false;
    bool dropped = false;
    long end_slot = -1;

    bool live() const { return !delivered && !dropped; }
};

/// SINR at the receiver: n_p * h_ij^2 / (N0 * n_c * delta_c + I).
/// Noise power scales with the occupied bandwidth n_c * delta_c.
inline double sinr(const NetworkGraph& g, NodeId tx, NodeId rx, int n_c, double n_p_mw,
                   double interference_mw) {
    if (n_c < 1) throw InvariantViolation("sinr needs n_c >= 1");
    if (!(n_p_mw > 0.0)) throw InvariantViolation("sinr needs n_p > 0");
    const double h = g.gain(tx, rx);
    const double noise = g.noise_density_mw_hz * n_c * g.subcarrier_spacing_hz;
    return n_p_mw * h * h / (noise + interference_mw);
}

/// Shannon bit budget of one slot over n_c subcarriers at power n_p and
/// amplitude gain h (no interference assumed at selection time):
///   n_c * delta_c * log2(1 + n_p h^2 / (N0 n_c delta_c)) * delta_t.
inline double bit_budget(const NetworkGraph& g, int n_c, double n_p_mw, double h) {
    if (n_c < 0) throw InvariantViolation("negative subcarrier count");
    if (n_c == 0) return 0.0;
    const double noise = g.noise_density_mw_hz * n_c * g.subcarrier_spacing_hz;
    const double snr = n_p_mw * h * h / noise;
    return n_c * g.subcarrier_spacing_hz * std::log2(1.0 + snr) * g.slot_duration_s;
}

/// Packet error abstraction on top of the SINR threshold gate.
enum class ErrorModel { kIdeal, kExpErr };

inline double success_probability(double sinr_value, ErrorModel model, double k) {
    switch (model) {
        case ErrorModel::kIdeal: return 1.0;
        case ErrorModel::kExpErr: return sinr_value > 0.0 ? std::exp(-k / sinr_value) : 0.0;
    }
    return 1.0;
}

struct TransitionResult {
    PacketState next;
    bool success = false;
};

/// One-hop stochastic transition. Success moves the packet to the chosen
/// next hop; failure or hold leaves it in place. Either way the ttd
/// decrements by exactly one. Depends only on (state, action, interference,
/// rng state); no history.
inline TransitionResult transition(const NetworkGraph& g, const PacketState& s,
                                   const ScheduleAction& a, double n_p_mw,
                                   double interference_mw, Rng& rng,
                                   ErrorModel model = ErrorModel::kIdeal, double err_k = 1.0) {
    if (s.ttd < 1) throw InvariantViolation("transition on an expired packet");
    if (a.is_hold()) return {{s.flow, s.node, s.ttd - 1}, false};
    if (!g.has_link(s.node, a.next_hop)) throw DomainError("next hop is not adjacent");
    const double q = sinr(g, s.node, a.next_hop, a.subcarriers, n_p_mw, interference_mw);
    bool ok = q >= g.sinr_threshold;
    if (ok && model != ErrorModel::kIdeal) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        ok = u(rng) < success_probability(q, model, err_k);
    }
    if (ok) return {{s.flow, a.next_hop, s.ttd - 1}, true};
    return {{s.flow, s.node, s.ttd - 1}, false};
}

/// What a delivered packet is worth.
enum class RewardMode { kThroughput, kWeightedUnit };

/// Reward generated only when the packet lands at its flow's destination
/// on time; zero anywhere else. Throughput mode pays the packet size so
/// aggregate reward per slot equals delivered bits per slot.
inline double primary_reward(const FlowSpec& flow, const PacketState& next_state,
                             RewardMode mode, int n_sigma_bits) {
    if (next_state.node != flow.destination || next_state.ttd < 0) return 0.0;
    return mode == RewardMode::kThroughput ? static_cast<double>(n_sigma_bits) : 1.0;
}

/// Per-step reward after the Lagrangian decomposition:
///   w_f * r - lambda_i * n_c - mu_i * n_p - (lambda_i / N_i) * sum of
/// subcarriers used concurrently inside node i's interference field.
/// r is the combined delivery-plus-shaping reward for the step.
inline double lagrangian_reward(double w_f, double r, double lambda_i, int n_c, double mu_i,
                                double n_p_mw, int node_packet_count,
                                int interference_subcarriers) {
    double field_term = 0.0;
    if (interference_subcarriers != 0) {
        if (node_packet_count < 1)
            throw InvariantViolation("interference term needs at least one packet at the node");
        field_term = lambda_i / node_packet_count * interference_subcarriers;
    }
    return w_f * r - lambda_i * n_c - mu_i * n_p_mw - field_term;
}

}  // namespace meshsched
