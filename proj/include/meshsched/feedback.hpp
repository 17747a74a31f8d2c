#pragma once

#include <deque>
#include <optional>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "meshsched/core.hpp"
#include "meshsched/mdp.hpp"

namespace meshsched {

/// Everything needed to rebuild the step's Lagrangian reward when the
/// delivery reward backtracks through the node later: resources actually
/// spent, concurrent subcarrier usage inside the node's interference field,
/// the node's packet count, the shaping term, and the prices in force at
/// transmission time.
struct StepComponents {
    int n_c = 0;
    double n_p_mw = 0.0;
    int interference_subcarriers = 0;
    int node_packet_count = 1;  // N_i
    double shaping = 0.0;       // auxiliary reward H for this step
    double lambda = 0.0;
    double mu = 0.0;
};

/// One hop (or hold) of one packet as remembered by the node it happened
/// at: previous/current/next state triple plus the action and reward
/// components. previous_state is empty for the packet's first step.
struct FeedbackRecord {
    FlowId flow = 0;
    std::optional<PacketState> previous_state;
    PacketState current_state;
    PacketState next_state;
    ScheduleAction action_taken;
    StepComponents components;
    long slot = 0;
    long packet_id = 0;
};

/// A backtracking reward message: which flow it belongs to, the state it
/// currently "carries" (the state the packet moved into at the hop being
/// credited), and the return accumulated so far on the walk back.
struct FeedbackMessage {
    FlowId flow = 0;
    PacketState carried;
    NodeId at_node = 0;
    double accumulated_return = 0.0;
    double terminal_reward = 0.0;
    std::vector<std::tuple<PacketState, ScheduleAction, double>> trail;  // dest-to-source order
};

/// Reconstructed trajectory step in source-to-destination order.
struct TrajectoryStep {
    PacketState state;
    ScheduleAction action;
    double reward;  // per-step Lagrangian reward r_L
};

/// Rebuilds the step's Lagrangian reward from the stored components plus
/// the step's primary reward (nonzero only on the terminal hop).
inline double step_lagrangian(const FeedbackRecord& rec, double r_d, double flow_weight) {
    const auto& c = rec.components;
    return lagrangian_reward(flow_weight, r_d + c.shaping, c.lambda, c.n_c, c.mu, c.n_p_mw,
                             c.node_packet_count, c.interference_subcarriers);
}

/// Per-node feedback tables. Records are keyed by (flow, next state); a
/// backtracking walk matches the carried state against "next state",
/// infers the current state from the one-slot hop time, consumes the
/// matched record, and continues at the previous state's node. Records are
/// consumed exactly once; duplicates from distinct packets queue FIFO.
class FeedbackTables {
  public:
    explicit FeedbackTables(int num_nodes) : tables_(num_nodes) {}

    void record_hop(NodeId node, FeedbackRecord rec) {
        if (node < 0 || node >= static_cast<int>(tables_.size()))
            throw DomainError("unknown node id");
        if (rec.current_state.node != node)
            throw InvariantViolation("record does not belong to this node");
        if (rec.next_state.ttd != rec.current_state.ttd - 1)
            throw InvariantViolation("record ttd must decrement by one");
        tables_[node][match_key(rec.flow, rec.next_state)].push_back(std::move(rec));
        ++size_;
    }

    /// Walks the reward back from the terminal hop, consuming one record
    /// per step. first_node is the node that transmitted into the carried
    /// state (the destination's last-hop sender, or the dropping node).
    /// Returns the trajectory in source-to-destination order, with the
    /// terminal primary reward u folded into the last step. A missing
    /// record aborts the walk: the partial trajectory is discarded and the
    /// missing-record counter is incremented.
    std::optional<std::vector<TrajectoryStep>> backtrack(FlowId flow, PacketState carried,
                                                         NodeId first_node, double terminal_u,
                                                         double flow_weight) {
        std::vector<TrajectoryStep> reversed;
        NodeId node = first_node;
        bool terminal = true;
        while (true) {
            auto rec = consume(node, flow, carried);
            if (!rec) {
                // Aborted walk: the partial trajectory is discarded and the
                // records it consumed stay gone; the expiry pass bounds the
                // damage of whatever corrupted the table.
                ++missing_records_;
                return std::nullopt;
            }
            const double r_l = step_lagrangian(*rec, terminal ? terminal_u : 0.0, flow_weight);
            terminal = false;
            reversed.push_back({rec->current_state, rec->action_taken, r_l});
            if (!rec->previous_state) break;
            carried = rec->current_state;
            node = rec->previous_state->node;
        }
        return std::vector<TrajectoryStep>(reversed.rbegin(), reversed.rend());
    }

    /// Consumes the single record matching (flow, carried) at `node`, for
    /// hop-by-hop walks. A miss counts as a missing record.
    std::optional<FeedbackRecord> try_consume(NodeId node, FlowId flow,
                                              const PacketState& carried) {
        auto rec = consume(node, flow, carried);
        if (!rec) ++missing_records_;
        return rec;
    }

    /// Purges records older than the horizon; their reward can no longer
    /// arrive. Returns the purge count.
    long expire(long current_slot, long horizon_slots) {
        long purged = 0;
        for (auto& table : tables_) {
            for (auto it = table.begin(); it != table.end();) {
                auto& q = it->second;
                while (!q.empty() && q.front().slot + horizon_slots < current_slot) {
                    q.pop_front();
                    ++purged;
                }
                it = q.empty() ? table.erase(it) : std::next(it);
            }
        }
        size_ -= purged;
        return purged;
    }

    long size() const { return size_; }
    long missing_records() const { return missing_records_; }

    /// Debug view: every stored record as one JSON object per line.
    std::string dump_ndjson() const {
        std::string out;
        for (size_t node = 0; node < tables_.size(); ++node) {
            for (const auto& [key, q] : tables_[node]) {
                for (const auto& r : q) {
                    nlohmann::json j{{"node", node},
                                     {"flow", r.flow},
                                     {"slot", r.slot},
                                     {"packet", r.packet_id},
                                     {"current", {r.current_state.node, r.current_state.ttd}},
                                     {"next", {r.next_state.node, r.next_state.ttd}}};
                    if (r.previous_state)
                        j["previous"] = {r.previous_state->node, r.previous_state->ttd};
                    out += j.dump();
                    out += '\n';
                }
            }
        }
        return out;
    }

  private:
    static std::uint64_t match_key(FlowId flow, const PacketState& next) {
        return pack_state(flow, next.node, next.ttd);
    }

    std::optional<FeedbackRecord> consume(NodeId node, FlowId flow, const PacketState& carried) {
        if (node < 0 || node >= static_cast<int>(tables_.size())) return std::nullopt;
        auto& table = tables_[node];
        auto it = table.find(match_key(flow, carried));
        if (it == table.end() || it->second.empty()) return std::nullopt;
        FeedbackRecord rec = std::move(it->second.front());
        it->second.pop_front();
        if (it->second.empty()) table.erase(it);
        --size_;
        return rec;
    }

    std::vector<std::unordered_map<std::uint64_t, std::deque<FeedbackRecord>>> tables_;
    long size_ = 0;
    long missing_records_ = 0;
};

}  // namespace meshsched
