#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "meshsched/baselines.hpp"
#include "meshsched/core.hpp"
#include "meshsched/feedback.hpp"
#include "meshsched/mdp.hpp"
#include "meshsched/net_model.hpp"
#include "meshsched/policy.hpp"
#include "meshsched/scheduler.hpp"
#include "meshsched/shaping.hpp"

namespace meshsched {

enum class SchedulerKind { kPgds, kCsma, kAdaptiveCsma };
enum class ArrivalProcess { kPoisson, kDeterministic };
enum class FeedbackLatency { kInstant, kHopDelayed };

struct PgdsParams {
    double eta1 = 0.5;
    double eta2 = 0.01;
    double eta3 = 0.01;
    double n_epsilon = 10.0;
    int retry_limit = 8;
    int power_levels = 4;
    double estimator_decay = 0.99;
    DualVariables::Mode dual_mode = DualVariables::Mode::kAscent;
    bool shaping = true;
    FeedbackLatency feedback = FeedbackLatency::kInstant;
    double lambda_cap = 100.0;
    ErrorModel error_model = ErrorModel::kIdeal;
    double error_k = 1.0;
    RewardMode reward_mode = RewardMode::kThroughput;
    // Removed entries can credit learning either with the action the policy
    // actually sampled (teaches congestion avoidance) or with the hold they
    // were converted into (keeps removals from poisoning transmit values).
    bool credit_removed_as_sampled = false;
};

struct SimConfig {
    NetworkGraph graph;
    std::vector<FlowSpec> flows;
    ChannelModel channel;
    SchedulerKind scheduler = SchedulerKind::kPgds;
    PgdsParams pgds;
    CsmaParams csma;
    AdaptiveCsmaParams adaptive;
    ArrivalProcess arrivals = ArrivalProcess::kPoisson;
    int packet_bits = 100;
    long slots = 2000;
    std::uint64_t seed = 1;
    double warmup_fraction = 0.2;
    std::optional<std::string> schedule_trace_path;
    std::optional<std::string> feedback_trace_path;

    int max_deadline() const {
        int m = 1;
        for (const auto& f : flows) m = std::max(m, f.deadline_slots);
        return m;
    }

    void validate() const {
        graph.validate();
        if (flows.empty()) throw ConfigError("at least one flow is required");
        for (const auto& f : flows) f.validate(graph);
        if (slots < 1) throw ConfigError("slot count must be >= 1");
        if (packet_bits < 1) throw ConfigError("packet size must be >= 1 bit");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
            throw ConfigError("warmup_fraction must lie in [0,1)");
        if (pgds.power_levels < 1) throw ConfigError("power_levels must be >= 1");
        if (pgds.retry_limit < 0) throw ConfigError("retry_limit must be >= 0");
        if (pgds.n_epsilon < 0) throw ConfigError("n_epsilon must be >= 0");
        if (channel.coherence_slots < 1) throw ConfigError("coherence_slots must be >= 1");
    }

    nlohmann::json to_json() const;
    static SimConfig from_json(const nlohmann::json& j);
};

struct SlotRow {
    long slot = 0;
    long arrivals = 0;
    long delivered = 0;
    long dropped = 0;
    long in_flight = 0;
    double delivered_bits = 0.0;
    double lambda_mean = 0.0;
    double mu_mean = 0.0;
};

struct PacketRecord {
    long id = 0;
    int flow = 0;
    long birth_slot = 0;
    long end_slot = -1;
    int outcome = 0;  // 0 in flight, 1 delivered, 2 dropped
    int delay_slots = -1;
    int hops = 0;
};

/// Per-slot series plus per-packet records of one run, with the derived
/// throughput/delay/convergence measurements used by the experiment
/// harness.
struct MetricsLog {
    std::vector<SlotRow> rows;
    std::vector<PacketRecord> packets;
    long generated = 0;
    long delivered = 0;
    long dropped = 0;
    double delivered_bits_total = 0.0;
    int packet_bits = 100;
    double warmup_fraction = 0.2;
    long missing_feedback_records = 0;
    long feedback_records_purged = 0;
    long tx_attempts = 0;
    long tx_successes = 0;
    RemovalStats removals;
    std::uint64_t seed = 0;

    long warmup_slots() const {
        return static_cast<long>(std::floor(warmup_fraction * rows.size()));
    }

    /// Mean delivered unit packets per slot after warmup.
    double steady_throughput() const {
        const long w = warmup_slots();
        if (static_cast<long>(rows.size()) <= w) return 0.0;
        double s = 0.0;
        for (size_t t = static_cast<size_t>(w); t < rows.size(); ++t) s += rows[t].delivered;
        return s / (rows.size() - w);
    }

    double steady_throughput_bits() const { return steady_throughput() * packet_bits; }

    /// Mean delivered unit packets per slot over the final tail of the run.
    double terminal_throughput(double tail_fraction = 0.2) const {
        if (rows.empty()) return 0.0;
        const size_t n = std::max<size_t>(1, static_cast<size_t>(tail_fraction * rows.size()));
        double s = 0.0;
        for (size_t t = rows.size() - n; t < rows.size(); ++t) s += rows[t].delivered;
        return s / n;
    }

    /// First slot where the windowed mean throughput reaches
    /// frac * terminal throughput; rows.size() when it never does.
    long time_to_fraction(double frac = 0.9, int window = 50) const {
        const double target = frac * terminal_throughput();
        if (target <= 0.0) return 0;
        double acc = 0.0;
        for (size_t t = 0; t < rows.size(); ++t) {
            acc += rows[t].delivered;
            if (t >= static_cast<size_t>(window)) acc -= rows[t - window].delivered;
            const double denom = std::min<double>(window, static_cast<double>(t) + 1.0);
            if (acc / denom >= target) return static_cast<long>(t);
        }
        return static_cast<long>(rows.size());
    }

    /// Fraction of post-warmup packets that missed their deadline, over
    /// resolved (delivered or dropped) packets.
    double violation_probability() const {
        const long w = warmup_slots();
        long ok = 0, bad = 0;
        for (const auto& p : packets) {
            if (p.birth_slot < w) continue;
            if (p.outcome == 1) ++ok;
            if (p.outcome == 2) ++bad;
        }
        return ok + bad == 0 ? 0.0 : static_cast<double>(bad) / (ok + bad);
    }

    std::vector<int> delivered_delays() const {
        const long w = warmup_slots();
        std::vector<int> d;
        for (const auto& p : packets)
            if (p.outcome == 1 && p.birth_slot >= w) d.push_back(p.delay_slots);
        std::sort(d.begin(), d.end());
        return d;
    }

    double mean_delay() const {
        auto d = delivered_delays();
        if (d.empty()) return 0.0;
        return std::accumulate(d.begin(), d.end(), 0.0) / d.size();
    }

    double delay_quantile(double q) const {
        auto d = delivered_delays();
        if (d.empty()) return 0.0;
        const size_t idx = std::min(d.size() - 1, static_cast<size_t>(q * d.size()));
        return d[idx];
    }

    /// P(delay <= x) for x = 1..max_delay over delivered post-warmup packets.
    std::vector<double> delay_cdf(int max_delay) const {
        auto d = delivered_delays();
        std::vector<double> cdf(static_cast<size_t>(max_delay), 0.0);
        if (d.empty()) return cdf;
        for (int x = 1; x <= max_delay; ++x) {
            const auto it = std::upper_bound(d.begin(), d.end(), x);
            cdf[static_cast<size_t>(x - 1)] = static_cast<double>(it - d.begin()) / d.size();
        }
        return cdf;
    }

    void write_metrics_csv(std::ostream& os) const {
        os << "slot,arrivals,delivered,dropped,in_flight,delivered_bits,lambda_mean,mu_mean\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%ld,%ld,%ld,%ld,%ld,%.10g,%.10g,%.10g\n", r.slot,
                          r.arrivals, r.delivered, r.dropped, r.in_flight, r.delivered_bits,
                          r.lambda_mean, r.mu_mean);
            os << buf;
        }
    }

    void write_packets_csv(std::ostream& os) const {
        os << "id,flow,birth_slot,end_slot,outcome,delay_slots,hops\n";
        for (const auto& p : packets) {
            os << p.id << ',' << p.flow << ',' << p.birth_slot << ',' << p.end_slot << ','
               << (p.outcome == 1 ? "delivered" : p.outcome == 2 ? "dropped" : "in_flight") << ','
               << p.delay_slots << ',' << p.hops << '\n';
        }
    }

    nlohmann::json summary_json() const {
        return nlohmann::json{{"seed", seed},
                              {"slots", rows.size()},
                              {"generated", generated},
                              {"delivered", delivered},
                              {"dropped", dropped},
                              {"in_flight", generated - delivered - dropped},
                              {"steady_throughput_pkts_per_slot", steady_throughput()},
                              {"steady_throughput_bits_per_slot", steady_throughput_bits()},
                              {"terminal_throughput_pkts_per_slot", terminal_throughput()},
                              {"time_to_90pct_slots", time_to_fraction()},
                              {"delay_violation_probability", violation_probability()},
                              {"mean_delay_slots", mean_delay()},
                              {"p50_delay_slots", delay_quantile(0.5)},
                              {"p95_delay_slots", delay_quantile(0.95)},
                              {"missing_feedback_records", missing_feedback_records},
                              {"feedback_records_purged", feedback_records_purged}};
    }
};

/// The time-slotted engine. One instance runs one replication,
/// deterministically for a given config: arrivals, channel fading, and
/// scheduling decisions draw from three independent RNG streams derived
/// from the master seed, so the offered traffic and the channel trajectory
/// stay identical across scheduler and shaping variants.
class Engine {
  public:
    explicit Engine(SimConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        graph_ = cfg_.graph;
        channel_ = cfg_.channel;
        channel_.rng_seed = cfg_.seed ^ 0xC0FFEEull;
        channel_.bind(graph_);
        arrivals_rng_ = make_stream(cfg_.seed, 1);
        decisions_rng_ = make_stream(cfg_.seed, 2);
        if (cfg_.scheduler == SchedulerKind::kPgds) {
            space_ = std::make_unique<ActionSpace>(
                graph_, PowerGrid{cfg_.pgds.power_levels, graph_.max_power_mw});
            policy_ = std::make_unique<PolicyTable>(*space_);
            policy_->step_size = cfg_.pgds.eta1;
            estimator_ = std::make_unique<ReturnEstimator>(*space_, cfg_.pgds.estimator_decay);
            duals_ = std::make_unique<DualVariables>(graph_.num_nodes());
            duals_->eta2 = cfg_.pgds.eta2;
            duals_->eta3 = cfg_.pgds.eta3;
            duals_->cap = cfg_.pgds.lambda_cap;
            duals_->mode = cfg_.pgds.dual_mode;
            tables_ = std::make_unique<FeedbackTables>(graph_.num_nodes());
        } else if (cfg_.scheduler == SchedulerKind::kCsma) {
            csma_ = std::make_unique<CsmaScheduler>(graph_, cfg_.flows, cfg_.csma,
                                                    decisions_rng_);
        } else {
            adaptive_ =
                std::make_unique<AdaptiveCsmaScheduler>(graph_, cfg_.flows, cfg_.adaptive);
        }
        arrival_accum_.assign(cfg_.flows.size(), 0.0);
    }

    MetricsLog run() {
        log_ = MetricsLog{};
        log_.packet_bits = cfg_.packet_bits;
        log_.warmup_fraction = cfg_.warmup_fraction;
        log_.seed = cfg_.seed;
        std::ofstream trace;
        if (cfg_.schedule_trace_path) {
            trace.open(*cfg_.schedule_trace_path);
            trace << "slot,packet,node,action,finalized,reason\n";
        }
        std::ofstream fb_trace;
        if (cfg_.feedback_trace_path) fb_trace.open(*cfg_.feedback_trace_path);

        for (long t = 0; t < cfg_.slots; ++t) {
            channel_.regenerate(graph_, t);
            const long arrived = spawn_arrivals(t);

            std::vector<size_t> live = live_indices();
            SlotRow row;
            row.slot = t;
            row.arrivals = arrived;

            SlotSchedule schedule;
            std::vector<SlotOutcome> outcomes;
            std::optional<PotentialSnapshot> snapshot;

            if (!live.empty()) {
                if (cfg_.scheduler == SchedulerKind::kPgds) {
                    if (cfg_.pgds.shaping)
                        snapshot.emplace(PotentialSnapshot::build(graph_, cfg_.flows, packets_));
                    schedule = plan_pgds(live);
                    resolve_capacity(
                        schedule, graph_,
                        [&](const PacketState& s) { return estimator_->v_hat(s); },
                        &log_.removals);
                    if (auto why = find_infeasibility(schedule, graph_))
                        throw InvariantViolation("slot " + std::to_string(t) + ": " + *why);
                } else {
                    auto queues = build_queues(live);
                    schedule = cfg_.scheduler == SchedulerKind::kCsma
                                   ? csma_->plan(queues, decisions_rng_)
                                   : adaptive_->plan(queues, decisions_rng_);
                }
                outcomes = execute_slot(schedule, graph_, decisions_rng_, cfg_.pgds.error_model,
                                        cfg_.pgds.error_k);
                for (size_t k = 0; k < schedule.entries.size(); ++k) {
                    if (!schedule.entries[k].transmits()) continue;
                    ++log_.tx_attempts;
                    log_.tx_successes += outcomes[k].success ? 1 : 0;
                }
            }

            apply_outcomes(t, live, schedule, outcomes, snapshot, row);

            if (cfg_.scheduler == SchedulerKind::kPgds) {
                process_feedback(t, row);
                for (NodeId i = 0; i < graph_.num_nodes(); ++i)
                    duals_->update(i, schedule.field_subcarriers(graph_, i),
                                   schedule.node_power(i), graph_.num_subcarriers,
                                   graph_.max_power_mw);
                const long horizon =
                    cfg_.max_deadline() +
                    (cfg_.pgds.feedback == FeedbackLatency::kInstant ? 1 : cfg_.max_deadline());
                log_.feedback_records_purged += tables_->expire(t, horizon);
                row.lambda_mean = duals_->lambda_mean();
                row.mu_mean = duals_->mu_mean();
            } else if (!live.empty()) {
                auto queues = build_queues(live_indices());
                if (cfg_.scheduler == SchedulerKind::kCsma)
                    csma_->after_slot(schedule, outcomes, queues, decisions_rng_);
                else
                    adaptive_->after_slot(schedule, outcomes, queues, decisions_rng_);
            }

            if (trace.is_open()) write_trace(trace, t, schedule);
            if (fb_trace.is_open() && tables_) fb_trace << tables_->dump_ndjson();

            row.in_flight = static_cast<long>(live_indices().size());
            if (log_.generated != log_.delivered + log_.dropped + row.in_flight)
                throw InvariantViolation("packet conservation broken at slot " +
                                         std::to_string(t));
            log_.rows.push_back(row);
        }

        finalize_packet_records();
        if (tables_) log_.missing_feedback_records = tables_->missing_records();
        return log_;
    }

    const NetworkGraph& graph() const { return graph_; }
    const PolicyTable* policy() const { return policy_.get(); }
    PolicyTable* policy() { return policy_.get(); }
    const ReturnEstimator* estimator() const { return estimator_.get(); }
    const DualVariables* duals() const { return duals_.get(); }

  private:
    struct PendingMessage {
        FlowId flow = 0;
        PacketState carried;
        NodeId at_node = 0;
        double terminal_u = 0.0;
        bool terminal_pending = true;
        bool done = false;
        std::vector<TrajectoryStep> reversed;
    };

    std::vector<size_t> live_indices() const {
        std::vector<size_t> out;
        for (size_t i = 0; i < packets_.size(); ++i)
            if (packets_[i].live()) out.push_back(i);
        return out;
    }

    long spawn_arrivals(long slot) {
        long n = 0;
        for (size_t f = 0; f < cfg_.flows.size(); ++f) {
            const auto& flow = cfg_.flows[f];
            long k = 0;
            if (flow.arrival_rate > 0.0) {
                if (cfg_.arrivals == ArrivalProcess::kPoisson) {
                    std::poisson_distribution<long> pois(flow.arrival_rate);
                    k = pois(arrivals_rng_);
                } else {
                    arrival_accum_[f] += flow.arrival_rate;
                    k = static_cast<long>(std::floor(arrival_accum_[f]));
                    arrival_accum_[f] -= static_cast<double>(k);
                }
            }
            for (long c = 0; c < k; ++c) {
                Packet p;
                p.id = next_packet_id_++;
                p.state = {flow.flow_id, flow.source, flow.deadline_slots};
                p.size_bits = cfg_.packet_bits;
                p.birth_slot = slot;
                p.arrived_at_node_slot = slot;
                packets_.push_back(p);
                ++log_.generated;
                ++n;
            }
        }
        return n;
    }

    SlotSchedule plan_pgds(const std::vector<size_t>& live) {
        SlotSchedule schedule;
        ResourceSamplerParams params{cfg_.pgds.n_epsilon, cfg_.pgds.retry_limit};
        for (size_t i : live) {
            const Packet& p = packets_[i];
            auto [idx, action] = sample_resources(*policy_, *space_, graph_, p.state,
                                                  p.size_bits, params, decisions_rng_);
            ScheduleEntry e;
            e.packet_id = p.id;
            e.state = p.state;
            e.action_index = idx;
            e.sampled = action;
            e.n_c = action.subcarriers;
            e.n_p_mw = space_->power_mw(action);
            e.packet_bits = p.size_bits;
            schedule.entries.push_back(e);
        }
        return schedule;
    }

    std::vector<std::vector<const Packet*>> build_queues(const std::vector<size_t>& live) const {
        std::vector<std::vector<const Packet*>> queues(
            static_cast<size_t>(graph_.num_nodes()));
        std::vector<size_t> order = live;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            const Packet &pa = packets_[a], &pb = packets_[b];
            if (pa.arrived_at_node_slot != pb.arrived_at_node_slot)
                return pa.arrived_at_node_slot < pb.arrived_at_node_slot;
            return pa.id < pb.id;
        });
        for (size_t i : order)
            queues[static_cast<size_t>(packets_[i].state.node)].push_back(&packets_[i]);
        return queues;
    }

    void apply_outcomes(long t, const std::vector<size_t>& live, const SlotSchedule& schedule,
                        const std::vector<SlotOutcome>& outcomes,
                        const std::optional<PotentialSnapshot>& snapshot, SlotRow& row) {
        std::unordered_map<long, size_t> entry_of;
        for (size_t k = 0; k < schedule.entries.size(); ++k)
            entry_of[schedule.entries[k].packet_id] = k;

        // Per-node usage of the finalized schedule, for the interference
        // term of the step reward.
        std::vector<int> own_sc(static_cast<size_t>(graph_.num_nodes()), 0);
        for (const auto& e : schedule.entries)
            if (e.transmits()) own_sc[static_cast<size_t>(e.state.node)] += e.n_c;
        std::vector<int> node_live(static_cast<size_t>(graph_.num_nodes()), 0);
        for (size_t i : live) ++node_live[static_cast<size_t>(packets_[i].state.node)];

        for (size_t i : live) {
            Packet& p = packets_[i];
            const PacketState old_state = p.state;
            const NodeId old_node = old_state.node;

            ScheduleAction taken = ScheduleAction::hold();
            int n_c = 0;
            double n_p = 0.0;
            bool moved = false;
            NodeId to = old_node;
            auto it = entry_of.find(p.id);
            if (it != entry_of.end()) {
                const auto& e = schedule.entries[it->second];
                taken = e.removed && !cfg_.pgds.credit_removed_as_sampled
                            ? ScheduleAction::hold()
                            : e.sampled;
                n_c = e.n_c;
                n_p = e.n_p_mw;
                if (outcomes[it->second].success) {
                    moved = true;
                    to = outcomes[it->second].to_node;
                }
            }
            p.state = {old_state.flow, to, old_state.ttd - 1};
            if (moved) {
                ++p.hops;
                p.arrived_at_node_slot = t;
            }

            if (cfg_.scheduler == SchedulerKind::kPgds) {
                FeedbackRecord rec;
                rec.flow = old_state.flow;
                rec.previous_state = p.prev_state;
                rec.current_state = old_state;
                rec.next_state = p.state;
                rec.action_taken = taken;
                rec.components.n_c = n_c;
                rec.components.n_p_mw = n_p;
                rec.components.interference_subcarriers =
                    schedule.field_subcarriers(graph_, old_node) -
                    own_sc[static_cast<size_t>(old_node)];
                rec.components.node_packet_count = node_live[static_cast<size_t>(old_node)];
                rec.components.shaping =
                    snapshot ? snapshot->auxiliary_reward(old_state, p.state) : 0.0;
                rec.components.lambda = duals_->lambda(old_node);
                rec.components.mu = duals_->mu(old_node);
                rec.slot = t;
                rec.packet_id = p.id;
                tables_->record_hop(old_node, std::move(rec));
            }
            p.prev_state = old_state;

            const FlowSpec& flow = cfg_.flows[static_cast<size_t>(old_state.flow)];
            if (p.state.node == flow.destination) {
                p.delivered = true;
                p.end_slot = t;
                ++log_.delivered;
                ++row.delivered;
                row.delivered_bits += p.size_bits;
                log_.delivered_bits_total += p.size_bits;
                if (cfg_.scheduler == SchedulerKind::kPgds) {
                    const double u =
                        primary_reward(flow, p.state, cfg_.pgds.reward_mode, p.size_bits);
                    queue_feedback(flow, p.state, old_node, u);
                }
            } else if (p.state.ttd <= 0) {
                p.dropped = true;
                p.end_slot = t;
                ++log_.dropped;
                ++row.dropped;
                if (cfg_.scheduler == SchedulerKind::kPgds)
                    queue_feedback(flow, p.state, old_node, 0.0);
            }
        }
    }

    void queue_feedback(const FlowSpec& flow, const PacketState& final_state, NodeId sender,
                        double terminal_u) {
        PendingMessage msg;
        msg.flow = flow.flow_id;
        msg.carried = final_state;
        msg.at_node = sender;
        msg.terminal_u = terminal_u;
        pending_.push_back(std::move(msg));
    }

    /// Runs the reward backtracking. Instant mode drains every pending
    /// message in one pass; hop-delayed mode advances each message a single
    /// hop per slot.
    void process_feedback(long, SlotRow&) {
        const bool instant = cfg_.pgds.feedback == FeedbackLatency::kInstant;
        std::vector<PendingMessage> keep;
        for (auto& msg : pending_) {
            if (instant) {
                const FlowSpec& flow = cfg_.flows[static_cast<size_t>(msg.flow)];
                auto traj = tables_->backtrack(msg.flow, msg.carried, msg.at_node,
                                               msg.terminal_u, flow.weight);
                if (traj) learn_from(*traj);
            } else {
                advance_one_hop(msg);
                if (!msg.done) keep.push_back(std::move(msg));
            }
        }
        pending_ = std::move(keep);
    }

    /// Moves a hop-delayed feedback message one node toward the source,
    /// consuming the matched record. Applies the learning updates once the
    /// source record is reached.
    void advance_one_hop(PendingMessage& msg) {
        auto rec = tables_->try_consume(msg.at_node, msg.flow, msg.carried);
        if (!rec) {
            msg.done = true;  // table corruption; partial walk discarded
            return;
        }
        const FlowSpec& flow = cfg_.flows[static_cast<size_t>(msg.flow)];
        const double r_l =
            step_lagrangian(*rec, msg.terminal_pending ? msg.terminal_u : 0.0, flow.weight);
        msg.terminal_pending = false;
        msg.reversed.push_back({rec->current_state, rec->action_taken, r_l});
        if (!rec->previous_state) {
            std::vector<TrajectoryStep> traj(msg.reversed.rbegin(), msg.reversed.rend());
            learn_from(traj);
            msg.done = true;
            return;
        }
        msg.carried = rec->current_state;
        msg.at_node = rec->previous_state->node;
    }

    void learn_from(const std::vector<TrajectoryStep>& traj) {
        std::vector<std::tuple<PacketState, int, double>> steps;
        steps.reserve(traj.size());
        for (const auto& s : traj)
            steps.emplace_back(s.state, space_->index_of(s.state.node, s.action), s.reward);
        estimator_->record_trajectory(steps);
        for (const auto& s : traj)
            policy_->npg_update(s.state, estimator_->advantages(s.state));
    }

    void write_trace(std::ofstream& os, long t, const SlotSchedule& schedule) const {
        for (const auto& e : schedule.entries) {
            os << t << ',' << e.packet_id << ',' << e.state.node << ','
               << PolicyTable::action_name(e.sampled) << ',' << (e.transmits() ? 1 : 0) << ','
               << (e.removed ? "removed" : e.sampled.is_hold() ? "hold" : "ok") << '\n';
        }
    }

    void finalize_packet_records() {
        log_.packets.reserve(packets_.size());
        for (const auto& p : packets_) {
            PacketRecord r;
            r.id = p.id;
            r.flow = p.state.flow;
            r.birth_slot = p.birth_slot;
            r.end_slot = p.end_slot;
            r.outcome = p.delivered ? 1 : p.dropped ? 2 : 0;
            const int deadline =
                cfg_.flows[static_cast<size_t>(p.state.flow)].deadline_slots;
            r.delay_slots = p.delivered ? deadline - p.state.ttd : -1;
            r.hops = p.hops;
            log_.packets.push_back(r);
        }
    }

    SimConfig cfg_;
    NetworkGraph graph_;
    ChannelModel channel_;
    Rng arrivals_rng_;
    Rng decisions_rng_;
    std::unique_ptr<ActionSpace> space_;
    std::unique_ptr<PolicyTable> policy_;
    std::unique_ptr<ReturnEstimator> estimator_;
    std::unique_ptr<DualVariables> duals_;
    std::unique_ptr<FeedbackTables> tables_;
    std::unique_ptr<CsmaScheduler> csma_;
    std::unique_ptr<AdaptiveCsmaScheduler> adaptive_;
    std::vector<Packet> packets_;
    std::vector<double> arrival_accum_;
    std::vector<PendingMessage> pending_;
    long next_packet_id_ = 0;
    MetricsLog log_;
};

inline nlohmann::json SimConfig::to_json() const {
    nlohmann::json j;
    j["topology"] = graph.to_json();
    auto fj = nlohmann::json::array();
    for (const auto& f : flows)
        fj.push_back({{"id", f.flow_id},
                      {"source", f.source},
                      {"destination", f.destination},
                      {"deadline", f.deadline_slots},
                      {"weight", f.weight},
                      {"rate", f.arrival_rate}});
    j["flows"] = fj;
    j["channel"] = {
        {"mode", channel.mode == ChannelModel::Mode::kStatic ? "static" : "block_fading"},
        {"coherence_slots", channel.coherence_slots},
        {"path_loss_exponent", channel.path_loss_exponent},
        {"rayleigh_scale", channel.rayleigh_scale}};
    j["scheduler"] = scheduler == SchedulerKind::kPgds
                         ? "pgds"
                         : scheduler == SchedulerKind::kCsma ? "csma" : "adaptive-csma";
    j["pgds"] = {{"eta1", pgds.eta1},
                 {"eta2", pgds.eta2},
                 {"eta3", pgds.eta3},
                 {"n_epsilon", pgds.n_epsilon},
                 {"retry_limit", pgds.retry_limit},
                 {"power_levels", pgds.power_levels},
                 {"estimator_decay", pgds.estimator_decay},
                 {"dual_mode",
                  pgds.dual_mode == DualVariables::Mode::kAscent ? "ascent" : "paper_literal"},
                 {"shaping", pgds.shaping},
                 {"feedback",
                  pgds.feedback == FeedbackLatency::kInstant ? "instant" : "hop_delayed"},
                 {"lambda_cap", pgds.lambda_cap},
                 {"error_model", pgds.error_model == ErrorModel::kIdeal ? "ideal" : "exp_err"},
                 {"error_k", pgds.error_k},
                 {"reward_mode",
                  pgds.reward_mode == RewardMode::kThroughput ? "throughput" : "weighted_unit"}};
    j["csma"] = {{"cw_min", csma.cw_min}, {"cw_cap", csma.cw_cap}};
    j["adaptive_csma"] = {{"base_mean", adaptive.base_mean}, {"beta", adaptive.beta}};
    j["arrivals"] = arrivals == ArrivalProcess::kPoisson ? "poisson" : "deterministic";
    j["packet_bits"] = packet_bits;
    j["slots"] = slots;
    j["seed"] = seed;
    j["warmup_fraction"] = warmup_fraction;
    return j;
}

inline SimConfig SimConfig::from_json(const nlohmann::json& j) {
    try {
        SimConfig cfg;
        nlohmann::json topo = j.at("topology");
        if (topo.contains("file")) {
            std::ifstream in(topo["file"].get<std::string>());
            if (!in) throw ConfigError("topology file not found: " +
                                       topo["file"].get<std::string>());
            in >> topo;
        }
        if (topo.contains("kind")) {
            cfg.graph = make_topology(topo.at("kind").get<std::string>(),
                                      topo.at("nodes").get<int>());
        } else {
            cfg.graph = NetworkGraph::from_json(topo);
        }
        if (j.contains("phy")) {
            const auto& p = j["phy"];
            if (p.contains("C")) cfg.graph.num_subcarriers = p["C"].get<int>();
            if (p.contains("P_mw")) cfg.graph.max_power_mw = p["P_mw"].get<double>();
            cfg.graph.detect_threshold_mw = p.contains("P_th_mw")
                                                ? p["P_th_mw"].get<double>()
                                                : 0.01 * cfg.graph.max_power_mw;
            if (p.contains("sinr_th")) cfg.graph.sinr_threshold = p["sinr_th"].get<double>();
            if (p.contains("n0")) cfg.graph.noise_density_mw_hz = p["n0"].get<double>();
            if (p.contains("delta_c_hz"))
                cfg.graph.subcarrier_spacing_hz = p["delta_c_hz"].get<double>();
            if (p.contains("delta_t_s")) cfg.graph.slot_duration_s = p["delta_t_s"].get<double>();
        }
        for (const auto& f : j.at("flows")) {
            FlowSpec fs;
            fs.flow_id = f.contains("id") ? f["id"].get<int>()
                                          : static_cast<int>(cfg.flows.size());
            fs.source = f.at("source").get<int>();
            fs.destination = f.at("destination").get<int>();
            if (f.contains("deadline")) fs.deadline_slots = f["deadline"].get<int>();
            if (f.contains("weight")) fs.weight = f["weight"].get<double>();
            if (f.contains("rate")) fs.arrival_rate = f["rate"].get<double>();
            cfg.flows.push_back(fs);
        }
        if (j.contains("channel")) {
            const auto& c = j["channel"];
            if (c.contains("mode"))
                cfg.channel.mode = c["mode"].get<std::string>() == "block_fading"
                                       ? ChannelModel::Mode::kBlockFading
                                       : ChannelModel::Mode::kStatic;
            if (c.contains("coherence_slots"))
                cfg.channel.coherence_slots = c["coherence_slots"].get<int>();
            if (c.contains("path_loss_exponent"))
                cfg.channel.path_loss_exponent = c["path_loss_exponent"].get<double>();
            if (c.contains("rayleigh_scale"))
                cfg.channel.rayleigh_scale = c["rayleigh_scale"].get<double>();
        }
        if (j.contains("scheduler")) {
            const auto s = j["scheduler"].get<std::string>();
            if (s == "pgds")
                cfg.scheduler = SchedulerKind::kPgds;
            else if (s == "csma")
                cfg.scheduler = SchedulerKind::kCsma;
            else if (s == "adaptive-csma" || s == "adaptive_csma")
                cfg.scheduler = SchedulerKind::kAdaptiveCsma;
            else
                throw ConfigError("unknown scheduler '" + s + "'");
        }
        if (j.contains("pgds")) {
            const auto& p = j["pgds"];
            if (p.contains("eta1")) cfg.pgds.eta1 = p["eta1"].get<double>();
            if (p.contains("eta2")) cfg.pgds.eta2 = p["eta2"].get<double>();
            if (p.contains("eta3")) cfg.pgds.eta3 = p["eta3"].get<double>();
            if (p.contains("n_epsilon")) cfg.pgds.n_epsilon = p["n_epsilon"].get<double>();
            if (p.contains("retry_limit")) cfg.pgds.retry_limit = p["retry_limit"].get<int>();
            if (p.contains("power_levels")) cfg.pgds.power_levels = p["power_levels"].get<int>();
            if (p.contains("estimator_decay"))
                cfg.pgds.estimator_decay = p["estimator_decay"].get<double>();
            if (p.contains("dual_mode"))
                cfg.pgds.dual_mode = p["dual_mode"].get<std::string>() == "paper_literal"
                                         ? DualVariables::Mode::kPaperLiteral
                                         : DualVariables::Mode::kAscent;
            if (p.contains("shaping")) cfg.pgds.shaping = p["shaping"].get<bool>();
            if (p.contains("feedback"))
                cfg.pgds.feedback = p["feedback"].get<std::string>() == "hop_delayed"
                                        ? FeedbackLatency::kHopDelayed
                                        : FeedbackLatency::kInstant;
            if (p.contains("lambda_cap")) cfg.pgds.lambda_cap = p["lambda_cap"].get<double>();
            if (p.contains("error_model"))
                cfg.pgds.error_model = p["error_model"].get<std::string>() == "exp_err"
                                           ? ErrorModel::kExpErr
                                           : ErrorModel::kIdeal;
            if (p.contains("error_k")) cfg.pgds.error_k = p["error_k"].get<double>();
            if (p.contains("reward_mode"))
                cfg.pgds.reward_mode = p["reward_mode"].get<std::string>() == "weighted_unit"
                                           ? RewardMode::kWeightedUnit
                                           : RewardMode::kThroughput;
        }
        if (j.contains("csma")) {
            if (j["csma"].contains("cw_min")) cfg.csma.cw_min = j["csma"]["cw_min"].get<int>();
            if (j["csma"].contains("cw_cap")) cfg.csma.cw_cap = j["csma"]["cw_cap"].get<int>();
        }
        if (j.contains("adaptive_csma")) {
            const auto& a = j["adaptive_csma"];
            if (a.contains("base_mean")) cfg.adaptive.base_mean = a["base_mean"].get<double>();
            if (a.contains("beta")) cfg.adaptive.beta = a["beta"].get<double>();
        }
        if (j.contains("arrivals"))
            cfg.arrivals = j["arrivals"].get<std::string>() == "deterministic"
                               ? ArrivalProcess::kDeterministic
                               : ArrivalProcess::kPoisson;
        if (j.contains("packet_bits")) cfg.packet_bits = j["packet_bits"].get<int>();
        if (j.contains("slots")) cfg.slots = j["slots"].get<long>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("warmup_fraction"))
            cfg.warmup_fraction = j["warmup_fraction"].get<double>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config document: ") + e.what());
    }
}

}  // namespace meshsched
