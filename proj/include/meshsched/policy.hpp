#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "meshsched/core.hpp"
#include "meshsched/mdp.hpp"
#include "meshsched/net_model.hpp"

namespace meshsched {

/// Enumerates the legal action set of every node once: hold, then
/// (neighbor, subcarrier count, power level) in a fixed order shared by the
/// policy table, the return estimator, and the schedulers. The set depends
/// only on the node, not on the packet's ttd.
class ActionSpace {
  public:
    ActionSpace(const NetworkGraph& graph, PowerGrid grid)
        : grid_(grid), num_subcarriers_(graph.num_subcarriers),
          per_neighbor_(graph.num_subcarriers * grid.levels) {
        actions_.resize(graph.num_nodes());
        nbrs_.resize(graph.num_nodes());
        for (NodeId i = 0; i < graph.num_nodes(); ++i) {
            nbrs_[i] = graph.neighbors(i);  // sorted
            auto& list = actions_[i];
            list.push_back(ScheduleAction::hold());
            for (NodeId j : nbrs_[i])
                for (int c = 1; c <= graph.num_subcarriers; ++c)
                    for (int l = 0; l < grid.levels; ++l) list.push_back({j, c, l});
        }
    }

    const std::vector<ScheduleAction>& actions(NodeId node) const {
        return actions_.at(static_cast<size_t>(node));
    }
    int size(NodeId node) const { return static_cast<int>(actions(node).size()); }
    const PowerGrid& grid() const { return grid_; }

    double power_mw(const ScheduleAction& a) const {
        return a.is_hold() ? 0.0 : grid_.level_mw(a.power_level);
    }

    int index_of(NodeId node, const ScheduleAction& a) const {
        if (a.is_hold()) return 0;
        const auto& nb = nbrs_.at(static_cast<size_t>(node));
        const auto it = std::lower_bound(nb.begin(), nb.end(), a.next_hop);
        if (it == nb.end() || *it != a.next_hop || a.subcarriers < 1 ||
            a.subcarriers > num_subcarriers_ || a.power_level < 0 ||
            a.power_level >= grid_.levels)
            throw DomainError("action not in the node's action set");
        const int pos = static_cast<int>(it - nb.begin());
        return 1 + pos * per_neighbor_ + (a.subcarriers - 1) * grid_.levels + a.power_level;
    }

  private:
    PowerGrid grid_;
    int num_subcarriers_;
    int per_neighbor_;
    std::vector<std::vector<ScheduleAction>> actions_;
    std::vector<std::vector<NodeId>> nbrs_;
};

/// Tabular softmax policy, one table entry per visited (flow, node, ttd)
/// state. pi(a|s) = exp(theta_sa) / sum_a' exp(theta_sa'); an absent entry
/// means theta = 0, i.e. the uniform cold-start policy.
class PolicyTable {
  public:
    double step_size = 0.5;  // eta_1

    explicit PolicyTable(const ActionSpace& space) : space_(&space) {}

    std::vector<double> probs(const PacketState& s) const {
        const int n = space_->size(s.node);
        auto it = theta_.find(s.key());
        std::vector<double> p(static_cast<size_t>(n));
        if (it == theta_.end()) {
            std::fill(p.begin(), p.end(), 1.0 / n);
            return p;
        }
        const auto& th = it->second;
        const double m = *std::max_element(th.begin(), th.end());
        double z = 0.0;
        for (int a = 0; a < n; ++a) z += (p[a] = std::exp(th[a] - m));
        for (double& v : p) v /= z;
        return p;
    }

    /// Samples an action index from pi(.|s). Uses a cached cumulative
    /// distribution; the cache is dropped whenever theta changes.
    int sample(const PacketState& s, Rng& rng) const {
        const StateKey key = s.key();
        auto it = theta_.find(key);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        if (it == theta_.end()) {
            // uniform over the action set
            const int n = space_->size(s.node);
            std::uniform_int_distribution<int> pick(0, n - 1);
            return pick(rng);
        }
        auto cit = cdf_.find(key);
        if (cit == cdf_.end()) {
            std::vector<double> cdf = probs(s);
            for (size_t a = 1; a < cdf.size(); ++a) cdf[a] += cdf[a - 1];
            cdf.back() = 1.0;
            cit = cdf_.emplace(key, std::move(cdf)).first;
        }
        const double u = uni(rng);
        const auto& cdf = cit->second;
        return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    }

    /// Exponentiated update pi_new ∝ pi_old * exp(eta_1 * advantage), i.e.
    /// theta_sa += eta_1 * advantage(a). Adding a constant to all
    /// advantages leaves the policy unchanged.
    void npg_update(const PacketState& s, const std::vector<double>& advantages) {
        const int n = space_->size(s.node);
        if (static_cast<int>(advantages.size()) != n)
            throw InvariantViolation("advantage vector size mismatch");
        auto& th = theta_ref(s);
        for (int a = 0; a < n; ++a) th[a] += step_size * advantages[a];
        cdf_.erase(s.key());
    }

    const std::vector<double>* theta(const PacketState& s) const {
        auto it = theta_.find(s.key());
        return it == theta_.end() ? nullptr : &it->second;
    }

    /// JSON checkpoint: {flow: {"node,ttd": {"hold"|"j,nc,level": theta}}}.
    /// Only non-zero parameters are written.
    nlohmann::json to_json() const {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [key, th] : theta_) {
            const int flow = unpack_flow(key);
            const int node = unpack_node(key);
            const int ttd = unpack_ttd(key);
            const auto& acts = space_->actions(node);
            nlohmann::json entry = nlohmann::json::object();
            for (size_t a = 0; a < th.size(); ++a) {
                if (th[a] == 0.0) continue;
                entry[action_name(acts[a])] = th[a];
            }
            if (entry.empty()) continue;
            out[std::to_string(flow)][std::to_string(node) + "," + std::to_string(ttd)] = entry;
        }
        return out;
    }

    void load_json(const nlohmann::json& j) {
        try {
            for (auto flow_it = j.begin(); flow_it != j.end(); ++flow_it) {
                const int flow = std::stoi(flow_it.key());
                for (auto st = flow_it.value().begin(); st != flow_it.value().end(); ++st) {
                    const auto comma = st.key().find(',');
                    const int node = std::stoi(st.key().substr(0, comma));
                    const int ttd = std::stoi(st.key().substr(comma + 1));
                    PacketState s{flow, node, ttd};
                    auto& th = theta_ref(s);
                    for (auto a = st.value().begin(); a != st.value().end(); ++a)
                        th[space_->index_of(node, parse_action(a.key()))] = a.value().get<double>();
                    cdf_.erase(s.key());
                }
            }
        } catch (const std::exception& e) {
            throw ConfigError(std::string("bad policy checkpoint: ") + e.what());
        }
    }

    static std::string action_name(const ScheduleAction& a) {
        if (a.is_hold()) return "hold";
        return std::to_string(a.next_hop) + "," + std::to_string(a.subcarriers) + "," +
               std::to_string(a.power_level);
    }

    static ScheduleAction parse_action(const std::string& s) {
        if (s == "hold") return ScheduleAction::hold();
        const auto c1 = s.find(',');
        const auto c2 = s.find(',', c1 + 1);
        return {std::stoi(s.substr(0, c1)), std::stoi(s.substr(c1 + 1, c2 - c1 - 1)),
                std::stoi(s.substr(c2 + 1))};
    }

  private:
    std::vector<double>& theta_ref(const PacketState& s) {
        auto it = theta_.find(s.key());
        if (it == theta_.end())
            it = theta_.emplace(s.key(), std::vector<double>(space_->size(s.node), 0.0)).first;
        return it->second;
    }

    const ActionSpace* space_;
    std::unordered_map<StateKey, std::vector<double>> theta_;
    mutable std::unordered_map<StateKey, std::vector<double>> cdf_;
};

/// Monte-Carlo running means of observed Lagrangian returns, per state
/// (v_hat) and per state-action (q_hat). Incremental averaging with
/// optional exponential forgetting so estimates can track a fading channel.
class ReturnEstimator {
  public:
    explicit ReturnEstimator(const ActionSpace& space, double decay = 0.99)
        : space_(&space), min_alpha_(decay >= 1.0 ? 0.0 : 1.0 - decay) {}

    /// Folds a completed trajectory (source to terminal order) into the
    /// estimates: step k contributes the suffix return G_k = sum_{m>=k} r_m.
    void record_trajectory(const std::vector<std::tuple<PacketState, int, double>>& steps) {
        if (steps.empty()) return;
        double g = 0.0;
        std::vector<double> returns(steps.size());
        for (size_t k = steps.size(); k-- > 0;) {
            g += std::get<2>(steps[k]);
            returns[k] = g;
        }
        for (size_t k = 0; k < steps.size(); ++k) {
            const auto& [s, a, r] = steps[k];
            fold(v_.try_emplace(s.key()).first->second, returns[k]);
            auto& qrow = q_row(s);
            fold(qrow[static_cast<size_t>(a)], returns[k]);
        }
    }

    double v_hat(const PacketState& s) const {
        auto it = v_.find(s.key());
        return it == v_.end() ? 0.0 : it->second.mean;
    }

    /// q_hat(s,a) - v_hat(s); zero while (s,a) is unvisited.
    double advantage(const PacketState& s, int action_idx) const {
        auto it = q_.find(s.key());
        if (it == q_.end()) return 0.0;
        const Avg& q = it->second.at(static_cast<size_t>(action_idx));
        if (q.count == 0) return 0.0;
        return q.mean - v_hat(s);
    }

    /// Advantage of every legal action of s (zeros for unvisited pairs).
    std::vector<double> advantages(const PacketState& s) const {
        std::vector<double> out(static_cast<size_t>(space_->size(s.node)), 0.0);
        auto it = q_.find(s.key());
        if (it == q_.end()) return out;
        const double v = v_hat(s);
        for (size_t a = 0; a < out.size(); ++a)
            if (it->second[a].count > 0) out[a] = it->second[a].mean - v;
        return out;
    }

    long visits(const PacketState& s) const {
        auto it = v_.find(s.key());
        return it == v_.end() ? 0 : it->second.count;
    }

    long visits(const PacketState& s, int action_idx) const {
        auto it = q_.find(s.key());
        return it == q_.end() ? 0 : it->second.at(static_cast<size_t>(action_idx)).count;
    }

    double q_hat(const PacketState& s, int action_idx) const {
        auto it = q_.find(s.key());
        if (it == q_.end()) return 0.0;
        return it->second.at(static_cast<size_t>(action_idx)).mean;
    }

  private:
    struct Avg {
        double mean = 0.0;
        long count = 0;
    };

    void fold(Avg& avg, double g) const {
        ++avg.count;
        const double alpha = std::max(1.0 / avg.count, min_alpha_);
        avg.mean += alpha * (g - avg.mean);
    }

    std::vector<Avg>& q_row(const PacketState& s) {
        auto it = q_.find(s.key());
        if (it == q_.end())
            it = q_.emplace(s.key(), std::vector<Avg>(space_->size(s.node))).first;
        return it->second;
    }

    const ActionSpace* space_;
    double min_alpha_;
    std::unordered_map<StateKey, Avg> v_;
    std::unordered_map<StateKey, std::vector<Avg>> q_;
};

/// Per-node Lagrange multipliers pricing subcarrier and power usage.
///
/// The default `kAscent` mode raises a price while its constraint is
/// violated (lambda += eta_2 * (usage - C), projected onto [0, cap]).
/// `kPaperLiteral` applies the opposite printed sign (C - usage) and is
/// kept for fidelity experiments only.
class DualVariables {
  public:
    enum class Mode { kAscent, kPaperLiteral };

    double eta2 = 0.01;
    double eta3 = 0.01;
    double cap = 100.0;  // Lambda_max
    Mode mode = Mode::kAscent;

    explicit DualVariables(int num_nodes) : lambda_(num_nodes, 0.0), mu_(num_nodes, 0.0) {}

    double lambda(NodeId i) const { return lambda_.at(static_cast<size_t>(i)); }
    double mu(NodeId i) const { return mu_.at(static_cast<size_t>(i)); }
    int num_nodes() const { return static_cast<int>(lambda_.size()); }

    void update(NodeId i, double used_subcarriers, double used_power_mw, int capacity_c,
                double capacity_p_mw) {
        const double sc_slack = used_subcarriers - capacity_c;
        const double pw_slack = used_power_mw - capacity_p_mw;
        const double sign = mode == Mode::kAscent ? 1.0 : -1.0;
        auto& l = lambda_.at(static_cast<size_t>(i));
        auto& m = mu_.at(static_cast<size_t>(i));
        l = std::clamp(l + eta2 * sign * sc_slack, 0.0, cap);
        m = std::clamp(m + eta3 * sign * pw_slack, 0.0, cap);
    }

    double lambda_mean() const { return mean(lambda_); }
    double mu_mean() const { return mean(mu_); }

  private:
    static double mean(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / v.size();
    }

    std::vector<double> lambda_;
    std::vector<double> mu_;
};

}  // namespace meshsched
