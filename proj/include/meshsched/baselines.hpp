#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "meshsched/core.hpp"
#include "meshsched/mdp.hpp"
#include "meshsched/net_model.hpp"
#include "meshsched/scheduler.hpp"

namespace meshsched {

/// Static shortest-path next hop toward dest; lowest node id wins ties.
inline std::optional<NodeId> next_hop_shortest(const NetworkGraph& g, NodeId from, NodeId dest) {
    const auto& dist = g.dist_to(dest);
    if (from == dest || dist[from] < 0) return std::nullopt;
    for (NodeId j : g.neighbors(from))
        if (dist[j] >= 0 && dist[j] == dist[from] - 1) return j;
    return std::nullopt;
}

struct CsmaParams {
    int cw_min = 16;
    int cw_cap = 1024;
};

/// Slotted CSMA baseline. Each node backs off while the channel around it
/// is idle, transmits its head-of-line packet over the full subcarrier pool
/// at maximum power when the counter hits zero, and doubles its contention
/// window after a failed transmission. Deadlines never enter the decision.
class CsmaScheduler {
  public:
    CsmaScheduler(const NetworkGraph& g, const std::vector<FlowSpec>& flows, CsmaParams params,
                  Rng& rng)
        : graph_(&g), flows_(&flows), params_(params) {
        windows_.assign(static_cast<size_t>(g.num_nodes()), params.cw_min);
        counters_.resize(static_cast<size_t>(g.num_nodes()));
        std::uniform_int_distribution<int> pick(0, params.cw_min - 1);
        for (auto& c : counters_) c = pick(rng);
    }

    SlotSchedule plan(const std::vector<std::vector<const Packet*>>& queues, Rng&) {
        SlotSchedule schedule;
        for (NodeId x = 0; x < graph_->num_nodes(); ++x) {
            const auto& q = queues[static_cast<size_t>(x)];
            if (q.empty() || counters_[static_cast<size_t>(x)] > 0) continue;
            const Packet* head = q.front();
            const auto hop =
                next_hop_shortest(*graph_, x, (*flows_)[static_cast<size_t>(head->state.flow)]
                                                  .destination);
            if (!hop) continue;
            ScheduleEntry e;
            e.packet_id = head->id;
            e.state = head->state;
            e.sampled = {*hop, graph_->num_subcarriers, -1};
            e.n_c = graph_->num_subcarriers;
            e.n_p_mw = graph_->max_power_mw;
            e.packet_bits = head->size_bits;
            e.require_min_bits = true;
            schedule.entries.push_back(e);
        }
        return schedule;
    }

    void after_slot(const SlotSchedule& schedule, const std::vector<SlotOutcome>& outcomes,
                    const std::vector<std::vector<const Packet*>>& queues, Rng& rng) {
        std::vector<char> transmitted(static_cast<size_t>(graph_->num_nodes()), 0);
        for (size_t i = 0; i < schedule.entries.size(); ++i) {
            const NodeId x = schedule.entries[i].state.node;
            transmitted[static_cast<size_t>(x)] = 1;
            auto& w = windows_[static_cast<size_t>(x)];
            w = outcomes[i].success ? params_.cw_min : std::min(2 * w, params_.cw_cap);
            std::uniform_int_distribution<int> pick(0, w - 1);
            counters_[static_cast<size_t>(x)] = pick(rng);
        }
        for (NodeId x = 0; x < graph_->num_nodes(); ++x) {
            if (transmitted[static_cast<size_t>(x)] || queues[static_cast<size_t>(x)].empty())
                continue;
            if (counters_[static_cast<size_t>(x)] > 0 && channel_idle(schedule, x))
                --counters_[static_cast<size_t>(x)];
        }
    }

    int window(NodeId x) const { return windows_.at(static_cast<size_t>(x)); }
    int counter(NodeId x) const { return counters_.at(static_cast<size_t>(x)); }
    void set_counter(NodeId x, int c) { counters_.at(static_cast<size_t>(x)) = c; }
    void set_window(NodeId x, int w) { windows_.at(static_cast<size_t>(x)) = w; }

  private:
    bool channel_idle(const SlotSchedule& schedule, NodeId x) const {
        for (const auto& e : schedule.entries) {
            if (!e.transmits() || e.state.node == x) continue;
            const double h = graph_->gain(e.state.node, x);
            if (e.n_p_mw * h * h > graph_->detect_threshold_mw) return false;
        }
        return true;
    }

    const NetworkGraph* graph_;
    const std::vector<FlowSpec>* flows_;
    CsmaParams params_;
    std::vector<int> windows_;
    std::vector<int> counters_;
};

struct AdaptiveCsmaParams {
    double base_mean = 8.0;  // mean timer in slots at an empty queue
    double beta = 1.0;       // queue-pressure gain

    /// Mean timer under queue length q; nonincreasing in q.
    double mean_for(int queue_len) const { return base_mean / (1.0 + beta * queue_len); }
};

/// Adaptive CSMA baseline: every link keeps an exponentially distributed
/// transmission timer whose mean shrinks as the link's backlog grows. The
/// exact adaptation dynamics of the method this stands in for live in an
/// external work; this queue-proportional rule reproduces the qualitative
/// behaviour only.
class AdaptiveCsmaScheduler {
  public:
    AdaptiveCsmaScheduler(const NetworkGraph& g, const std::vector<FlowSpec>& flows,
                          AdaptiveCsmaParams params)
        : graph_(&g), flows_(&flows), params_(params) {}

    SlotSchedule plan(const std::vector<std::vector<const Packet*>>& queues, Rng& rng) {
        SlotSchedule schedule;
        for (NodeId x = 0; x < graph_->num_nodes(); ++x) {
            // Regroup the node's FIFO by the link each packet wants.
            std::map<NodeId, std::vector<const Packet*>> per_link;
            for (const Packet* p : queues[static_cast<size_t>(x)]) {
                const auto hop = next_hop_shortest(
                    *graph_, x, (*flows_)[static_cast<size_t>(p->state.flow)].destination);
                if (hop) per_link[*hop].push_back(p);
            }
            // Arm timers for backlogged links, drop timers for drained ones.
            auto& node_timers = timers_[x];
            for (auto it = node_timers.begin(); it != node_timers.end();)
                it = per_link.count(it->first) ? std::next(it) : node_timers.erase(it);
            for (const auto& [link, q] : per_link) {
                if (!node_timers.count(link))
                    node_timers[link] = draw_timer(static_cast<int>(q.size()), rng);
            }
            // Fire at most one link per slot: longest backlog, lowest id.
            const std::vector<const Packet*>* chosen = nullptr;
            NodeId chosen_link = -1;
            for (const auto& [link, q] : per_link) {
                if (node_timers[link] > 0) continue;
                if (!chosen || q.size() > chosen->size()) {
                    chosen = &q;
                    chosen_link = link;
                }
            }
            if (!chosen) continue;
            const Packet* head = chosen->front();
            ScheduleEntry e;
            e.packet_id = head->id;
            e.state = head->state;
            e.sampled = {chosen_link, graph_->num_subcarriers, -1};
            e.n_c = graph_->num_subcarriers;
            e.n_p_mw = graph_->max_power_mw;
            e.packet_bits = head->size_bits;
            e.require_min_bits = true;
            schedule.entries.push_back(e);
            node_timers.erase(chosen_link);  // re-armed next slot at the fresh queue length
        }
        return schedule;
    }

    void after_slot(const SlotSchedule&, const std::vector<SlotOutcome>&,
                    const std::vector<std::vector<const Packet*>>&, Rng&) {
        for (auto& [node, node_timers] : timers_)
            for (auto& [link, t] : node_timers)
                if (t > 0) --t;
    }

    int draw_timer(int queue_len, Rng& rng) const {
        std::exponential_distribution<double> exp_draw(1.0 / params_.mean_for(queue_len));
        return std::max(1, static_cast<int>(std::ceil(exp_draw(rng))));
    }

    const AdaptiveCsmaParams& params() const { return params_; }

  private:
    const NetworkGraph* graph_;
    const std::vector<FlowSpec>* flows_;
    AdaptiveCsmaParams params_;
    std::map<NodeId, std::map<NodeId, int>> timers_;
};

}  // namespace meshsched
