#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "meshsched/core.hpp"

namespace meshsched {

/// Mesh topology plus the physical-layer budget shared by every scheduler:
/// subcarrier pool C, per-node power cap P, detection threshold used for
/// interference-field membership, and the SINR/noise constants.
///
/// Channel gains h_ij in [0,1] are stored for *every* ordered node pair,
/// not just linked ones: interference reaches beyond the link set. The
/// link set independently controls which pairs may carry traffic.
///
/// Mutated only by ChannelModel::regenerate from the single-threaded
/// simulation loop; safe to share read-only otherwise.
class NetworkGraph {
  public:
    int num_subcarriers = 20;           // C
    double max_power_mw = 100.0;        // P (20 dBm)
    double detect_threshold_mw = 1.0;   // P_Th, defaults to 1% of P
    double sinr_threshold = 1.0;        // linear ratio
    double noise_density_mw_hz = 1e-7;  // N0
    double subcarrier_spacing_hz = 15000.0;
    double slot_duration_s = 0.25e-3;

    NetworkGraph() = default;
    explicit NetworkGraph(int num_nodes)
        : n_(num_nodes), gains_(static_cast<size_t>(num_nodes) * num_nodes, 0.0),
          neighbors_(num_nodes) {
        if (num_nodes <= 0) throw ConfigError("topology needs at least one node");
    }

    int num_nodes() const { return n_; }

    void check_node(NodeId i) const {
        if (i < 0 || i >= n_) throw DomainError("unknown node id " + std::to_string(i));
    }

    /// Adds the directed link (i,j). Adjacency controls traffic only.
    void add_link(NodeId i, NodeId j) {
        check_node(i);
        check_node(j);
        if (i == j) throw ConfigError("self-links are not allowed");
        auto& nb = neighbors_[i];
        if (std::find(nb.begin(), nb.end(), j) == nb.end()) {
            nb.push_back(j);
            std::sort(nb.begin(), nb.end());
        }
    }

    /// Adds both directed links between i and j.
    void add_edge(NodeId i, NodeId j) {
        add_link(i, j);
        add_link(j, i);
    }

    bool has_link(NodeId i, NodeId j) const {
        check_node(i);
        check_node(j);
        const auto& nb = neighbors_[i];
        return std::binary_search(nb.begin(), nb.end(), j);
    }

    const std::vector<NodeId>& neighbors(NodeId i) const {
        check_node(i);
        return neighbors_[i];
    }

    double gain(NodeId i, NodeId j) const {
        check_node(i);
        check_node(j);
        return gains_[static_cast<size_t>(i) * n_ + j];
    }

    void set_gain(NodeId i, NodeId j, double h) {
        check_node(i);
        check_node(j);
        if (!(h >= 0.0 && h <= 1.0)) throw ConfigError("gain must lie in [0,1]");
        gains_[static_cast<size_t>(i) * n_ + j] = h;
        ++gain_version_;
    }

    const std::vector<double>& all_gains() const { return gains_; }

    void set_all_gains(std::vector<double> g) {
        if (g.size() != gains_.size()) throw InvariantViolation("gain matrix size mismatch");
        for (double h : g)
            if (!(h >= 0.0 && h <= 1.0)) throw ConfigError("gain must lie in [0,1]");
        gains_ = std::move(g);
        ++gain_version_;
    }

    const std::vector<std::array<double, 2>>& coords() const { return coords_; }
    void set_coords(std::vector<std::array<double, 2>> c) {
        if (static_cast<int>(c.size()) != n_) throw ConfigError("coords size must equal node count");
        coords_ = std::move(c);
    }

    /// Nodes that detect a transmission from i at tx_power:
    /// { j != i : tx_power * h_ij^2 > P_Th }.
    std::vector<NodeId> interference_field(NodeId i, double tx_power_mw) const {
        check_node(i);
        if (!(tx_power_mw > 0.0) || tx_power_mw > max_power_mw)
            throw DomainError("tx_power must lie in (0, P]");
        std::vector<NodeId> out;
        for (NodeId j = 0; j < n_; ++j) {
            if (j == i) continue;
            const double h = gain(i, j);
            if (tx_power_mw * h * h > detect_threshold_mw) out.push_back(j);
        }
        return out;
    }

    /// Interference field at the maximum power budget, cached. This is the
    /// field used for the shared-subcarrier constraint and dual accounting;
    /// it is conservative for any actual transmit power <= P.
    const std::vector<NodeId>& field_at_max(NodeId i) const {
        check_node(i);
        if (field_cache_version_ != gain_version_) {
            field_cache_.assign(n_, {});
            for (NodeId k = 0; k < n_; ++k) field_cache_[k] = interference_field(k, max_power_mw);
            field_cache_version_ = gain_version_;
        }
        return field_cache_[i];
    }

    /// BFS hop count from i to dest over the link set; nullopt if unreachable.
    std::optional<int> hop_distance(NodeId i, NodeId dest) const {
        check_node(i);
        const int d = dist_to(dest)[i];
        if (d < 0) return std::nullopt;
        return d;
    }

    /// Hop distances of every node to dest (-1 = unreachable), cached per dest.
    const std::vector<int>& dist_to(NodeId dest) const {
        check_node(dest);
        auto it = dist_cache_.find(dest);
        if (it != dist_cache_.end()) return it->second;
        std::vector<int> dist(n_, -1);
        std::vector<NodeId> queue{dest};
        dist[dest] = 0;
        // BFS over reversed links: we need distance *to* dest along directed links.
        std::vector<std::vector<NodeId>> rev(n_);
        for (NodeId a = 0; a < n_; ++a)
            for (NodeId b : neighbors_[a]) rev[b].push_back(a);
        for (size_t head = 0; head < queue.size(); ++head) {
            const NodeId u = queue[head];
            for (NodeId v : rev[u]) {
                if (dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        return dist_cache_.emplace(dest, std::move(dist)).first->second;
    }

    void validate() const {
        if (n_ < 1) throw ConfigError("empty topology");
        if (num_subcarriers < 1) throw ConfigError("C must be >= 1");
        if (!(max_power_mw > 0)) throw ConfigError("P must be > 0");
        if (!(subcarrier_spacing_hz > 0)) throw ConfigError("delta_c must be > 0");
        if (!(slot_duration_s > 0)) throw ConfigError("delta_t must be > 0");
        if (!(noise_density_mw_hz > 0)) throw ConfigError("n0 must be > 0");
        if (detect_threshold_mw < 0) throw ConfigError("P_th must be >= 0");
        for (double h : gains_)
            if (!(h >= 0.0 && h <= 1.0)) throw ConfigError("gain out of [0,1]");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["nodes"] = n_;
        auto links = nlohmann::json::array();
        for (NodeId a = 0; a < n_; ++a)
            for (NodeId b : neighbors_[a]) links.push_back({a, b});
        j["links"] = links;
        auto coords = nlohmann::json::array();
        for (const auto& c : coords_) coords.push_back({c[0], c[1]});
        j["coords"] = coords;
        j["C"] = num_subcarriers;
        j["P_mw"] = max_power_mw;
        j["P_th_mw"] = detect_threshold_mw;
        j["sinr_th"] = sinr_threshold;
        j["n0"] = noise_density_mw_hz;
        j["delta_c_hz"] = subcarrier_spacing_hz;
        j["delta_t_s"] = slot_duration_s;
        return j;
    }

    static NetworkGraph from_json(const nlohmann::json& j) {
        try {
            NetworkGraph g(j.at("nodes").get<int>());
            for (const auto& l : j.at("links")) g.add_link(l.at(0).get<int>(), l.at(1).get<int>());
            if (j.contains("coords") && !j["coords"].empty()) {
                std::vector<std::array<double, 2>> coords;
                for (const auto& c : j["coords"])
                    coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
                g.set_coords(std::move(coords));
            }
            if (j.contains("C")) g.num_subcarriers = j["C"].get<int>();
            if (j.contains("P_mw")) g.max_power_mw = j["P_mw"].get<double>();
            g.detect_threshold_mw =
                j.contains("P_th_mw") ? j["P_th_mw"].get<double>() : 0.01 * g.max_power_mw;
            if (j.contains("sinr_th")) g.sinr_threshold = j["sinr_th"].get<double>();
            if (j.contains("n0")) g.noise_density_mw_hz = j["n0"].get<double>();
            if (j.contains("delta_c_hz")) g.subcarrier_spacing_hz = j["delta_c_hz"].get<double>();
            if (j.contains("delta_t_s")) g.slot_duration_s = j["delta_t_s"].get<double>();
            if (j.contains("gains")) {
                std::vector<double> flat;
                for (const auto& row : j["gains"])
                    for (const auto& v : row) flat.push_back(v.get<double>());
                g.set_all_gains(std::move(flat));
            }
            g.validate();
            return g;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad topology document: ") + e.what());
        }
    }

  private:
    int n_ = 0;
    std::vector<double> gains_;  // row-major n x n amplitude gains
    std::vector<std::vector<NodeId>> neighbors_;
    std::vector<std::array<double, 2>> coords_;
    std::uint64_t gain_version_ = 0;
    mutable std::uint64_t field_cache_version_ = std::numeric_limits<std::uint64_t>::max();
    mutable std::vector<std::vector<NodeId>> field_cache_;
    mutable std::unordered_map<NodeId, std::vector<int>> dist_cache_;
};

/// One deadline-constrained flow: unit packets of the flow enter at the
/// source with ttd = deadline_slots and must reach the destination before
/// the ttd runs out.
struct FlowSpec {
    FlowId flow_id = 0;
    NodeId source = 0;
    NodeId destination = 0;
    int deadline_slots = 10;    // tau_f
    double weight = 1.0;        // w_f
    double arrival_rate = 0.0;  // mean unit packets per slot

    void validate(const NetworkGraph& g) const {
        g.check_node(source);
        g.check_node(destination);
        if (source == destination) throw ConfigError("flow source equals destination");
        if (deadline_slots < 1) throw ConfigError("deadline must be >= 1 slot");
        if (weight < 0) throw ConfigError("flow weight must be >= 0");
        if (arrival_rate < 0) throw ConfigError("arrival rate must be >= 0");
    }
};

/// Gain process: static path-loss gains, or block fading that redraws a
/// Rayleigh multiplier on every pair each coherence period. Gains are
/// symmetric and always clamped to [0,1]; the trajectory is a pure
/// function of rng_seed.
class ChannelModel {
  public:
    enum class Mode { kStatic, kBlockFading };

    Mode mode = Mode::kStatic;
    int coherence_slots = 1;
    double path_loss_exponent = 3.5;
    double rayleigh_scale = 0.7071067811865476;  // E[R^2] = 1
    std::uint64_t rng_seed = 0;

    /// Captures base gains: from unit-grid coordinates via log-distance path
    /// loss when coordinates exist, otherwise from the gains already present
    /// on the graph. Writes the slot-0 gains.
    void bind(NetworkGraph& g) {
        if (coherence_slots < 1) throw ConfigError("coherence_slots must be >= 1");
        const int n = g.num_nodes();
        base_.assign(static_cast<size_t>(n) * n, 0.0);
        if (!g.coords().empty()) {
            const auto& c = g.coords();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    if (i == j) continue;
                    const double dx = c[i][0] - c[j][0];
                    const double dy = c[i][1] - c[j][1];
                    const double d = std::sqrt(dx * dx + dy * dy);
                    // amplitude gain: h^2 = min(1, d^-alpha)
                    const double h = d <= 1.0 ? 1.0 : std::pow(d, -path_loss_exponent / 2.0);
                    base_[static_cast<size_t>(i) * n + j] = std::min(1.0, h);
                }
            }
        } else {
            base_ = g.all_gains();
        }
        rng_ = make_stream(rng_seed, 0x6368616Eull);
        g.set_all_gains(base_);
        bound_ = true;
    }

    /// Redraws gains iff block fading is on and slot hits the coherence
    /// boundary; otherwise leaves the graph untouched.
    bool regenerate(NetworkGraph& g, long slot) {
        if (!bound_) throw InvariantViolation("ChannelModel::bind must run before regenerate");
        if (slot < 0) throw InvariantViolation("negative slot");
        if (mode != Mode::kBlockFading || slot % coherence_slots != 0) return false;
        const int n = g.num_nodes();
        std::vector<double> gains(base_.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                // Rayleigh amplitude, one draw per unordered pair keeps gains symmetric.
                std::normal_distribution<double> normal(0.0, rayleigh_scale);
                const double x = normal(rng_);
                const double y = normal(rng_);
                const double r = std::sqrt(x * x + y * y);
                const size_t ij = static_cast<size_t>(i) * n + j;
                const size_t ji = static_cast<size_t>(j) * n + i;
                gains[ij] = std::clamp(base_[ij] * r, 0.0, 1.0);
                gains[ji] = std::clamp(base_[ji] * r, 0.0, 1.0);
            }
        }
        g.set_all_gains(std::move(gains));
        return true;
    }

  private:
    bool bound_ = false;
    std::vector<double> base_;
    Rng rng_;
};

// --- Topology generators -----------------------------------------------
//
// All generators lay nodes on a unit grid, link both directions of every
// edge, and leave gains zeroed; ChannelModel::bind fills them from the
// coordinates.

inline NetworkGraph make_line(int n) {
    NetworkGraph g(n);
    std::vector<std::array<double, 2>> coords;
    for (int i = 0; i < n; ++i) coords.push_back({static_cast<double>(i), 0.0});
    g.set_coords(std::move(coords));
    for (int i = 0; i + 1 < n; ++i) g.add_edge(i, i + 1);
    return g;
}

/// Balanced binary tree; leaves one unit apart, parents midway above.
inline NetworkGraph make_tree(int n) {
    NetworkGraph g(n);
    int depth = 0;
    while ((1 << (depth + 1)) - 1 < n) ++depth;
    std::vector<std::array<double, 2>> coords(n);
    // Place bottom-up: deepest level spaced 1 apart, parents midway.
    for (int i = n - 1; i >= 0; --i) {
        int level = 0;
        while ((1 << (level + 1)) - 1 <= i) ++level;
        const int l = 2 * i + 1, r = 2 * i + 2;
        if (l >= n) {
            const int pos = i - ((1 << level) - 1);
            const double spread = static_cast<double>(1 << (depth - level));
            coords[i] = {pos * spread + spread / 2.0, static_cast<double>(depth - level)};
        } else if (r >= n) {
            coords[i] = {coords[l][0], coords[l][1] + 1.0};
        } else {
            coords[i] = {(coords[l][0] + coords[r][0]) / 2.0, coords[l][1] + 1.0};
        }
    }
    g.set_coords(std::move(coords));
    for (int i = 1; i < n; ++i) g.add_edge(i, (i - 1) / 2);
    return g;
}

/// k x k lattice with 4-neighborhoods; n must be a perfect square.
inline NetworkGraph make_grid(int n) {
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (k * k != n) throw ConfigError("grid topology needs a square node count");
    NetworkGraph g(n);
    std::vector<std::array<double, 2>> coords;
    for (int i = 0; i < n; ++i)
        coords.push_back({static_cast<double>(i % k), static_cast<double>(i / k)});
    g.set_coords(std::move(coords));
    for (int i = 0; i < n; ++i) {
        if (i % k + 1 < k) g.add_edge(i, i + 1);
        if (i / k + 1 < k) g.add_edge(i, i + k);
    }
    return g;
}

/// Hub node 0 at the center, leaves on the unit circle.
inline NetworkGraph make_star(int n) {
    if (n < 2) throw ConfigError("star topology needs at least 2 nodes");
    NetworkGraph g(n);
    std::vector<std::array<double, 2>> coords{{0.0, 0.0}};
    const double pi = std::acos(-1.0);
    for (int i = 1; i < n; ++i) {
        const double a = 2.0 * pi * (i - 1) / (n - 1);
        coords.push_back({std::cos(a), std::sin(a)});
        g.add_edge(0, i);
    }
    g.set_coords(std::move(coords));
    return g;
}

/// k x k lattice with diagonals (8-neighborhoods); n must be a perfect square.
inline NetworkGraph make_mesh(int n) {
    NetworkGraph g = make_grid(n);
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    for (int i = 0; i < n; ++i) {
        const int x = i % k, y = i / k;
        if (x + 1 < k && y + 1 < k) g.add_edge(i, i + k + 1);
        if (x > 0 && y + 1 < k) g.add_edge(i, i + k - 1);
    }
    return g;
}

inline NetworkGraph make_topology(const std::string& kind, int n) {
    if (kind == "line") return make_line(n);
    if (kind == "tree") return make_tree(n);
    if (kind == "grid") return make_grid(n);
    if (kind == "star") return make_star(n);
    if (kind == "mesh") return make_mesh(n);
    throw ConfigError("unknown topology kind '" + kind + "'");
}

}  // namespace meshsched
