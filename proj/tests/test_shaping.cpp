#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <vector>

#include "meshsched/net_model.hpp"
#include "meshsched/shaping.hpp"

using namespace meshsched;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<FlowSpec> line_flow(int dest) {
    return {FlowSpec{0, 0, dest, 8, 1.0, 0.0}};
}

/// Finite-horizon value iteration over a line network with frozen
/// occupancies; used as the independent oracle for policy invariance.
struct MiniMdp {
    int nodes;
    int dest;
    int horizon;
    double delivery_reward;
    std::map<std::pair<int, int>, double> move_success;  // (node, nb) -> prob
    std::map<std::pair<int, int>, int> occupancy;        // (node, ttd) -> u_L

    double potential(int node, int ttd) const {
        if (node == dest || ttd <= 0) return 0.0;
        const int d = std::abs(dest - node);  // line distance
        auto it = occupancy.find({node, ttd});
        const int u = it == occupancy.end() ? 0 : it->second;
        return d == 0 ? 0.0 : static_cast<double>(u) / d;
    }

    // Actions: 0 = hold, 1 = move left, 2 = move right.
    std::vector<int> actions(int node) const {
        std::vector<int> a{0};
        if (node - 1 >= 0) a.push_back(1);
        if (node + 1 < nodes) a.push_back(2);
        return a;
    }

    double step_reward(int, int to, bool shaped, int from_node, int from_ttd) const {
        const double r_d = to == dest ? delivery_reward : 0.0;
        if (!shaped) return r_d;
        return r_d + potential(to, from_ttd - 1) - potential(from_node, from_ttd);
    }

    /// Returns greedy action per (node, ttd). Ties resolve to the first
    /// maximal action; values within 1e-9 count as tied so that exact
    /// mathematical ties survive floating-point noise.
    std::map<std::pair<int, int>, int> greedy_policy(bool shaped) const {
        std::map<std::pair<int, int>, double> value;  // terminal states implicit 0
        std::map<std::pair<int, int>, int> greedy;
        for (int ttd = 1; ttd <= horizon; ++ttd) {
            for (int node = 0; node < nodes; ++node) {
                if (node == dest) continue;
                std::vector<double> q_values;
                for (int a : actions(node)) {
                    double q;
                    auto next_value = [&](int to) {
                        if (to == dest || ttd - 1 == 0) return 0.0;
                        auto it = value.find({to, ttd - 1});
                        return it == value.end() ? 0.0 : it->second;
                    };
                    if (a == 0) {
                        q = step_reward(node, node, shaped, node, ttd) + next_value(node);
                    } else {
                        const int to = a == 1 ? node - 1 : node + 1;
                        const double p = move_success.at({node, to});
                        q = p * (step_reward(node, to, shaped, node, ttd) + next_value(to)) +
                            (1 - p) *
                                (step_reward(node, node, shaped, node, ttd) + next_value(node));
                    }
                    q_values.push_back(q);
                }
                const double best = *std::max_element(q_values.begin(), q_values.end());
                int best_a = -1;
                for (size_t k = 0; k < q_values.size(); ++k) {
                    if (q_values[k] >= best - 1e-9) {
                        best_a = actions(node)[k];
                        break;
                    }
                }
                value[{node, ttd}] = best;
                greedy[{node, ttd}] = best_a;
            }
        }
        return greedy;
    }
};

}  // namespace

TEST_CASE("potential divides occupancy by hop distance") {
    auto g = make_line(4);
    auto flows = line_flow(3);
    PotentialSnapshot snap(g, flows);
    snap.set_occupancy({0, 1, 5}, 4);  // node 1 is 2 hops from node 3
    CHECK_THAT(snap.potential({0, 1, 5}), WithinAbs(2.0, 1e-12));
}

TEST_CASE("potential is zero at the destination") {
    auto g = make_line(4);
    auto flows = line_flow(3);
    PotentialSnapshot snap(g, flows);
    snap.set_occupancy({0, 3, 5}, 7);
    CHECK(snap.potential({0, 3, 5}) == 0.0);
}

TEST_CASE("potential is zero for empty states and unreachable nodes") {
    NetworkGraph g(4);
    g.add_edge(0, 1);
    g.add_edge(1, 3);
    std::vector<FlowSpec> flows{{0, 0, 3, 8, 1.0, 0.0}};
    PotentialSnapshot snap(g, flows);
    CHECK(snap.potential({0, 1, 5}) == 0.0);  // no packets there
    snap.set_occupancy({0, 2, 5}, 3);
    CHECK(snap.potential({0, 2, 5}) == 0.0);  // node 2 disconnected
}

TEST_CASE("auxiliary reward is the potential difference") {
    auto g = make_line(4);
    auto flows = line_flow(3);
    PotentialSnapshot snap(g, flows);
    snap.set_occupancy({0, 1, 5}, 4);  // phi = 4/2
    snap.set_occupancy({0, 2, 4}, 6);  // phi = 6/1
    CHECK_THAT(snap.auxiliary_reward({0, 1, 5}, {0, 2, 4}), WithinAbs(4.0, 1e-12));
}

TEST_CASE("equal potentials shape to zero") {
    auto g = make_line(4);
    auto flows = line_flow(3);
    PotentialSnapshot snap(g, flows);
    snap.set_occupancy({0, 1, 5}, 4);
    snap.set_occupancy({0, 1, 4}, 4);
    CHECK_THAT(snap.auxiliary_reward({0, 1, 5}, {0, 1, 4}), WithinAbs(0.0, 1e-12));
}

TEST_CASE("shaping terms telescope along any trajectory") {
    auto g = make_mesh(9);
    std::vector<FlowSpec> flows{{0, 0, 8, 12, 1.0, 0.0}};
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> occ(0, 6);
    PotentialSnapshot snap(g, flows);
    for (int node = 0; node < 9; ++node)
        for (int ttd = 1; ttd <= 12; ++ttd) snap.set_occupancy({0, node, ttd}, occ(rng));

    for (int trial = 0; trial < 200; ++trial) {
        std::vector<PacketState> traj;
        int node = 0;
        int ttd = 12;
        traj.push_back({0, node, ttd});
        std::uniform_int_distribution<int> coin(0, 1);
        while (ttd > 0 && node != 8) {
            const auto& nb = g.neighbors(node);
            if (coin(rng)) node = nb[std::uniform_int_distribution<size_t>(0, nb.size() - 1)(rng)];
            --ttd;
            traj.push_back({0, node, ttd});
        }
        double sum = 0.0;
        for (size_t k = 0; k + 1 < traj.size(); ++k)
            sum += snap.auxiliary_reward(traj[k], traj[k + 1]);
        CHECK_THAT(sum, WithinAbs(snap.potential(traj.back()) - snap.potential(traj.front()),
                                  1e-9));
    }
}

TEST_CASE("shaping leaves the greedy policy unchanged on a frozen-occupancy MDP") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> prob(0.2, 1.0);
    std::uniform_int_distribution<int> occ(0, 5);
    for (int instance = 0; instance < 12; ++instance) {
        MiniMdp mdp;
        mdp.nodes = 4;
        mdp.dest = 3;
        mdp.horizon = 4;
        mdp.delivery_reward = 100.0;
        for (int i = 0; i < 4; ++i) {
            if (i - 1 >= 0) mdp.move_success[{i, i - 1}] = prob(rng);
            if (i + 1 < 4) mdp.move_success[{i, i + 1}] = prob(rng);
        }
        for (int node = 0; node < 4; ++node)
            for (int ttd = 1; ttd <= 4; ++ttd) mdp.occupancy[{node, ttd}] = occ(rng);
        CHECK(mdp.greedy_policy(false) == mdp.greedy_policy(true));
    }
}
