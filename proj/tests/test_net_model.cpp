#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "meshsched/net_model.hpp"

using namespace meshsched;

namespace {

NetworkGraph three_node_graph() {
    NetworkGraph g(3);
    g.max_power_mw = 100.0;
    g.detect_threshold_mw = 1.0;
    g.set_gain(0, 1, std::sqrt(0.02));
    g.set_gain(1, 0, std::sqrt(0.02));
    g.set_gain(0, 2, std::sqrt(0.0005));
    g.set_gain(2, 0, std::sqrt(0.0005));
    return g;
}

}  // namespace

TEST_CASE("interference field applies the detection threshold") {
    auto g = three_node_graph();
    // 100 mW * 0.02 = 2 mW > 1 mW; 100 mW * 0.0005 = 0.05 mW <= 1 mW
    CHECK(g.interference_field(0, 100.0) == std::vector<NodeId>{1});
}

TEST_CASE("interference field is empty with zero gains") {
    NetworkGraph g(4);
    g.max_power_mw = 100.0;
    CHECK(g.interference_field(2, 100.0).empty());
}

TEST_CASE("zero detection threshold admits every positive gain") {
    auto g = three_node_graph();
    g.detect_threshold_mw = 0.0;
    CHECK(g.interference_field(0, 100.0) == std::vector<NodeId>{1, 2});
}

TEST_CASE("interference field rejects unknown nodes and bad powers") {
    auto g = three_node_graph();
    CHECK_THROWS_AS(g.interference_field(7, 10.0), DomainError);
    CHECK_THROWS_AS(g.interference_field(0, 0.0), DomainError);
    CHECK_THROWS_AS(g.interference_field(0, 1000.0), DomainError);
}

TEST_CASE("interference field grows monotonically with power") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    NetworkGraph g(8);
    g.max_power_mw = 100.0;
    g.detect_threshold_mw = 1.0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            if (i != j) g.set_gain(i, j, uni(rng));
    for (int trial = 0; trial < 50; ++trial) {
        const double p1 = 1.0 + 99.0 * uni(rng);
        const double p2 = p1 + (100.0 - p1) * uni(rng);
        for (int i = 0; i < 8; ++i) {
            const auto f1 = g.interference_field(i, p1);
            const auto f2 = g.interference_field(i, p2);
            CHECK(std::includes(f2.begin(), f2.end(), f1.begin(), f1.end()));
        }
    }
}

TEST_CASE("hop distance on a line") {
    auto g = make_line(4);
    CHECK(g.hop_distance(0, 3) == 3);
    CHECK(g.hop_distance(2, 3) == 1);
}

TEST_CASE("hop distance of a node to itself is zero") {
    auto g = make_line(4);
    CHECK(g.hop_distance(1, 1) == 0);
}

TEST_CASE("hop distance reports unreachable nodes") {
    NetworkGraph g(3);
    g.add_edge(0, 1);
    CHECK_FALSE(g.hop_distance(2, 0).has_value());
    CHECK_FALSE(g.hop_distance(0, 2).has_value());
}

TEST_CASE("hop distance changes by at most one across a link") {
    auto g = make_mesh(16);
    for (NodeId dest = 0; dest < 16; ++dest) {
        for (NodeId i = 0; i < 16; ++i) {
            for (NodeId j : g.neighbors(i)) {
                const auto di = g.hop_distance(i, dest);
                const auto dj = g.hop_distance(j, dest);
                REQUIRE(di.has_value());
                REQUIRE(dj.has_value());
                CHECK(std::abs(*di - *dj) <= 1);
            }
        }
    }
}

TEST_CASE("static channel never rewrites gains") {
    auto g = make_line(3);
    ChannelModel ch;
    ch.mode = ChannelModel::Mode::kStatic;
    ch.bind(g);
    const auto before = g.all_gains();
    for (long t = 0; t < 100; ++t) ch.regenerate(g, t);
    CHECK(g.all_gains() == before);
}

TEST_CASE("block fading redraws only on coherence boundaries") {
    auto g = make_line(3);
    ChannelModel ch;
    ch.mode = ChannelModel::Mode::kBlockFading;
    ch.coherence_slots = 20;
    ch.rng_seed = 5;
    ch.bind(g);
    CHECK(ch.regenerate(g, 0));
    const auto after0 = g.all_gains();
    for (long t = 1; t < 20; ++t) {
        CHECK_FALSE(ch.regenerate(g, t));
        CHECK(g.all_gains() == after0);
    }
    CHECK(ch.regenerate(g, 20));
}

TEST_CASE("fading trajectories are reproducible and clamped") {
    auto run = [](std::uint64_t seed) {
        auto g = make_grid(9);
        ChannelModel ch;
        ch.mode = ChannelModel::Mode::kBlockFading;
        ch.coherence_slots = 5;
        ch.rng_seed = seed;
        ch.bind(g);
        std::vector<double> samples;
        for (long t = 0; t < 40; ++t) {
            ch.regenerate(g, t);
            samples.push_back(g.gain(0, 1));
            for (double h : g.all_gains()) {
                REQUIRE(h >= 0.0);
                REQUIRE(h <= 1.0);
            }
        }
        return samples;
    };
    CHECK(run(11) == run(11));
    CHECK(run(11) != run(12));
}

TEST_CASE("fading keeps gains symmetric") {
    auto g = make_grid(9);
    ChannelModel ch;
    ch.mode = ChannelModel::Mode::kBlockFading;
    ch.coherence_slots = 1;
    ch.rng_seed = 3;
    ch.bind(g);
    ch.regenerate(g, 0);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) CHECK(g.gain(i, j) == g.gain(j, i));
}

TEST_CASE("generators emit the documented JSON schema and round-trip") {
    for (const char* kind : {"line", "tree", "grid", "star", "mesh"}) {
        const int n = std::string(kind) == "grid" || std::string(kind) == "mesh" ? 16 : 15;
        auto g = make_topology(kind, n);
        auto doc = g.to_json();
        for (const char* key :
             {"nodes", "links", "coords", "C", "P_mw", "P_th_mw", "sinr_th", "n0", "delta_c_hz",
              "delta_t_s"})
            REQUIRE(doc.contains(key));
        auto g2 = NetworkGraph::from_json(doc);
        CHECK(g2.num_nodes() == g.num_nodes());
        for (NodeId i = 0; i < g.num_nodes(); ++i) CHECK(g2.neighbors(i) == g.neighbors(i));
        CHECK(g2.coords() == g.coords());
    }
}

TEST_CASE("generator links are bidirectional and coordinates sane") {
    auto g = make_mesh(16);
    for (NodeId i = 0; i < 16; ++i)
        for (NodeId j : g.neighbors(i)) CHECK(g.has_link(j, i));
    CHECK(g.neighbors(5).size() == 8);   // interior node of a 4x4 mesh
    CHECK(g.neighbors(0).size() == 3);   // corner
    auto grid = make_grid(16);
    CHECK(grid.neighbors(5).size() == 4);
    CHECK_THROWS_AS(make_grid(15), ConfigError);
}

TEST_CASE("path loss fills gains from coordinates") {
    auto g = make_grid(9);
    ChannelModel ch;
    ch.bind(g);
    CHECK(g.gain(0, 1) == 1.0);  // unit spacing clamps to 1
    // two units apart: h = 2^(-3.5/2)
    CHECK_THAT(g.gain(0, 2), Catch::Matchers::WithinRel(std::pow(2.0, -1.75), 1e-12));
    CHECK(g.gain(0, 8) < g.gain(0, 4));
}
