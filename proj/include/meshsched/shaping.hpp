#pragma once

#include <unordered_map>
#include <vector>

#include "meshsched/core.hpp"
#include "meshsched/mdp.hpp"
#include "meshsched/net_model.hpp"

namespace meshsched {

/// Per-slot view the shaping reward is computed against: state occupancy
/// u_L (live same-flow packets per (node, ttd)) and hop distances to each
/// flow's destination. Built once at the start of a slot and immutable
/// while the slot is scheduled, so every packet sees consistent potentials.
class PotentialSnapshot {
  public:
    PotentialSnapshot(const NetworkGraph& graph, const std::vector<FlowSpec>& flows)
        : graph_(&graph), flows_(&flows) {}

    template <typename PacketRange>
    static PotentialSnapshot build(const NetworkGraph& graph, const std::vector<FlowSpec>& flows,
                                   const PacketRange& packets) {
        PotentialSnapshot snap(graph, flows);
        for (const Packet& p : packets)
            if (p.live()) ++snap.counts_[p.state.key()];
        return snap;
    }

    int occupancy(const PacketState& s) const {
        auto it = counts_.find(s.key());
        return it == counts_.end() ? 0 : it->second;
    }

    void set_occupancy(const PacketState& s, int count) { counts_[s.key()] = count; }

    /// Potential u_L[s] / d, where d is the hop distance from s.node to the
    /// flow's destination. Zero at the destination (d = 0), at unreachable
    /// nodes, and for expired states: every terminal state has potential 0,
    /// which keeps the telescoped shaped return equal to the unshaped one.
    double potential(const PacketState& s) const {
        if (s.ttd <= 0) return 0.0;
        const FlowSpec& f = (*flows_)[static_cast<size_t>(s.flow)];
        const auto d = graph_->hop_distance(s.node, f.destination);
        if (!d || *d == 0) return 0.0;
        const int u = occupancy(s);
        return u == 0 ? 0.0 : static_cast<double>(u) / *d;
    }

    /// Policy-invariant shaping term: potential(next) - potential(current).
    double auxiliary_reward(const PacketState& s, const PacketState& s_next) const {
        if (s.flow != s_next.flow) throw InvariantViolation("shaping across flows");
        return potential(s_next) - potential(s);
    }

  private:
    const NetworkGraph* graph_;
    const std::vector<FlowSpec>* flows_;
    std::unordered_map<StateKey, int> counts_;
};

}  // namespace meshsched
