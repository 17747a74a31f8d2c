#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meshsched/core.hpp"
#include "meshsched/mdp.hpp"
#include "meshsched/net_model.hpp"
#include "meshsched/policy.hpp"

namespace meshsched {

/// One packet's slice of the slot schedule. n_c / n_p_mw are the finalized
/// resources: zero when the packet holds, or when capacity resolution
/// removed it. The sampled action is kept unchanged so learning can credit
/// the choice the policy actually made.
struct ScheduleEntry {
    long packet_id = 0;
    PacketState state;
    int action_index = 0;
    ScheduleAction sampled;
    int n_c = 0;
    double n_p_mw = 0.0;
    int packet_bits = 0;
    bool removed = false;          // forced to hold by capacity resolution
    bool require_min_bits = false; // baselines: reception also needs budget >= size

    bool transmits() const { return !removed && n_c > 0; }
};

struct SlotSchedule {
    std::vector<ScheduleEntry> entries;

    long removed_count() const {
        long n = 0;
        for (const auto& e : entries) n += e.removed ? 1 : 0;
        return n;
    }

    /// Subcarriers in flight at node i's own pool: transmissions at i plus
    /// at every node inside i's interference field.
    int field_subcarriers(const NetworkGraph& g, NodeId i) const {
        const auto& field = g.field_at_max(i);
        int total = 0;
        for (const auto& e : entries) {
            if (!e.transmits()) continue;
            const NodeId tx = e.state.node;
            if (tx == i || std::binary_search(field.begin(), field.end(), tx)) total += e.n_c;
        }
        return total;
    }

    double node_power(NodeId i) const {
        double total = 0.0;
        for (const auto& e : entries)
            if (e.transmits() && e.state.node == i) total += e.n_p_mw;
        return total;
    }
};

struct ResourceSamplerParams {
    double n_epsilon = 10.0;  // acceptable |budget - packet size| in bits
    int retry_limit = 8;
};

/// Draws actions from the policy until one matches the packet's bit budget
/// (|n_tilde - n_sigma| <= n_epsilon) or is a hold; after retry_limit
/// resamples the packet gives up and holds (c = 0, p = 0).
inline std::pair<int, ScheduleAction> sample_resources(const PolicyTable& policy,
                                                       const ActionSpace& space,
                                                       const NetworkGraph& g, const PacketState& s,
                                                       int packet_bits,
                                                       const ResourceSamplerParams& params,
                                                       Rng& rng) {
    if (s.ttd < 1) throw InvariantViolation("cannot schedule an expired packet");
    for (int attempt = 0; attempt <= params.retry_limit; ++attempt) {
        const int idx = policy.sample(s, rng);
        const ScheduleAction& a = space.actions(s.node)[static_cast<size_t>(idx)];
        if (a.is_hold()) return {idx, a};
        const double budget =
            bit_budget(g, a.subcarriers, space.power_mw(a), g.gain(s.node, a.next_hop));
        if (std::abs(budget - packet_bits) <= params.n_epsilon) return {idx, a};
    }
    return {0, ScheduleAction::hold()};
}

struct RemovalStats {
    long pool = 0;
    long power = 0;
    long half_duplex = 0;
};

/// Capacity-unavailable condition plus the power and half-duplex rules.
///
/// Wherever a node's interference field oversubscribes the C-subcarrier
/// pool, the entry with the smallest state-value estimate gives up the
/// transmission in advance (ties break toward the lower packet id); the
/// same rule then bounds per-node power and finally breaks
/// transmit/receive conflicts. Removal only converts entries to hold; it
/// never alters the survivors.
inline void resolve_capacity(SlotSchedule& schedule, const NetworkGraph& g,
                             const std::function<double(const PacketState&)>& state_value,
                             RemovalStats* stats = nullptr) {
    auto remove_min = [&](const std::vector<size_t>& members) {
        size_t worst = members.front();
        double worst_v = state_value(schedule.entries[worst].state);
        for (size_t idx : members) {
            const double v = state_value(schedule.entries[idx].state);
            if (v < worst_v ||
                (v == worst_v && schedule.entries[idx].packet_id <
                                     schedule.entries[worst].packet_id)) {
                worst = idx;
                worst_v = v;
            }
        }
        auto& e = schedule.entries[worst];
        e.removed = true;
        e.n_c = 0;
        e.n_p_mw = 0.0;
    };

    // Shared subcarrier pool per interference field.
    for (bool changed = true; changed;) {
        changed = false;
        for (NodeId i = 0; i < g.num_nodes(); ++i) {
            while (schedule.field_subcarriers(g, i) > g.num_subcarriers) {
                const auto& field = g.field_at_max(i);
                std::vector<size_t> members;
                for (size_t idx = 0; idx < schedule.entries.size(); ++idx) {
                    const auto& e = schedule.entries[idx];
                    if (!e.transmits()) continue;
                    const NodeId tx = e.state.node;
                    if (tx == i || std::binary_search(field.begin(), field.end(), tx))
                        members.push_back(idx);
                }
                remove_min(members);
                if (stats) ++stats->pool;
                changed = true;
            }
        }
    }

    // Per-node power budget.
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
        while (schedule.node_power(i) > g.max_power_mw + 1e-9) {
            std::vector<size_t> members;
            for (size_t idx = 0; idx < schedule.entries.size(); ++idx)
                if (schedule.entries[idx].transmits() && schedule.entries[idx].state.node == i)
                    members.push_back(idx);
            remove_min(members);
            if (stats) ++stats->power;
        }
    }

    // Half-duplex: a node cannot transmit and receive in one slot.
    for (bool changed = true; changed;) {
        changed = false;
        for (NodeId x = 0; x < g.num_nodes(); ++x) {
            std::vector<size_t> tx_side, rx_side;
            for (size_t idx = 0; idx < schedule.entries.size(); ++idx) {
                const auto& e = schedule.entries[idx];
                if (!e.transmits()) continue;
                if (e.state.node == x) tx_side.push_back(idx);
                if (e.sampled.next_hop == x) rx_side.push_back(idx);
            }
            if (tx_side.empty() || rx_side.empty()) continue;
            std::vector<size_t> members = tx_side;
            members.insert(members.end(), rx_side.begin(), rx_side.end());
            remove_min(members);
            if (stats) ++stats->half_duplex;
            changed = true;
        }
    }
}

/// Checks the three slot invariants; returns a description of the first
/// violation, or nullopt when the schedule is feasible.
inline std::optional<std::string> find_infeasibility(const SlotSchedule& schedule,
                                                     const NetworkGraph& g) {
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
        const int used = schedule.field_subcarriers(g, i);
        if (used > g.num_subcarriers)
            return "field of node " + std::to_string(i) + " uses " + std::to_string(used) +
                   " subcarriers";
        if (schedule.node_power(i) > g.max_power_mw + 1e-9)
            return "node " + std::to_string(i) + " exceeds the power budget";
    }
    for (const auto& e : schedule.entries) {
        if (!e.transmits()) continue;
        for (const auto& o : schedule.entries)
            if (o.transmits() && o.state.node == e.sampled.next_hop)
                return "node " + std::to_string(o.state.node) + " transmits and receives";
    }
    return std::nullopt;
}

struct SlotOutcome {
    bool success = false;
    NodeId to_node = -1;
};

/// Executes the finalized schedule through the shared PHY.
///
/// Subcarrier counts are assumed orthogonalizable whenever the pool seen at
/// a receiver fits within C; a receiver whose covering transmissions
/// oversubscribe the pool takes the full interference power of every other
/// covering sender. PGDS schedules are interference-free by construction
/// after capacity resolution; uncoordinated baselines collide here.
inline std::vector<SlotOutcome> execute_slot(const SlotSchedule& schedule, const NetworkGraph& g,
                                             Rng& rng, ErrorModel model = ErrorModel::kIdeal,
                                             double err_k = 1.0) {
    std::vector<SlotOutcome> outcomes(schedule.entries.size());
    std::vector<char> node_transmits(static_cast<size_t>(g.num_nodes()), 0);
    for (const auto& e : schedule.entries)
        if (e.transmits()) node_transmits[static_cast<size_t>(e.state.node)] = 1;

    for (size_t idx = 0; idx < schedule.entries.size(); ++idx) {
        const auto& e = schedule.entries[idx];
        SlotOutcome& out = outcomes[idx];
        out.to_node = e.state.node;
        if (!e.transmits()) continue;
        const NodeId rx = e.sampled.next_hop;

        int pool = e.n_c;
        double interference = 0.0;
        for (size_t j = 0; j < schedule.entries.size(); ++j) {
            if (j == idx) continue;
            const auto& o = schedule.entries[j];
            if (!o.transmits()) continue;
            const double h = g.gain(o.state.node, rx);
            const double reach = o.n_p_mw * h * h;
            if (reach > g.detect_threshold_mw) {
                pool += o.n_c;
                if (o.state.node != e.state.node) interference += reach;
            }
        }
        const double interference_mw = pool > g.num_subcarriers ? interference : 0.0;

        auto result = transition(g, e.state, e.sampled, e.n_p_mw, interference_mw, rng, model,
                                 err_k);
        bool ok = result.success;
        if (ok && node_transmits[static_cast<size_t>(rx)]) ok = false;  // half-duplex at the PHY
        if (ok && e.require_min_bits) {
            const double budget = bit_budget(g, e.n_c, e.n_p_mw, g.gain(e.state.node, rx));
            if (budget < e.packet_bits) ok = false;
        }
        out.success = ok;
        if (ok) out.to_node = rx;
    }
    return outcomes;
}

}  // namespace meshsched
