#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "meshsched/sim.hpp"

namespace meshsched {

/// One point of an experiment grid; seeds are assigned per replication.
struct ExperimentArm {
    std::string label;
    SimConfig config;
};

/// The desk-scale experiment setup: k x k mesh, four corner-to-corner
/// flows splitting the offered sum rate equally, 10-slot deadlines,
/// C = 20 subcarriers, 100 mW (20 dBm) power budget, 100-bit unit packets
/// over 15 kHz subcarriers and 0.25 ms slots.
inline SimConfig mesh_corners_config(int nodes, double arrival_sum, long slots = 2000) {
    SimConfig cfg;
    cfg.graph = make_mesh(nodes);
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(nodes))));
    const NodeId a = 0, b = k - 1, c = nodes - k, d = nodes - 1;
    const std::vector<std::pair<NodeId, NodeId>> pairs{{a, d}, {d, a}, {b, c}, {c, b}};
    for (size_t f = 0; f < pairs.size(); ++f)
        cfg.flows.push_back({static_cast<int>(f), pairs[f].first, pairs[f].second, 10, 1.0,
                             arrival_sum / pairs.size()});
    cfg.slots = slots;
    return cfg;
}

inline SimConfig single_flow_grid_config(int nodes, double rate, long slots = 3000) {
    SimConfig cfg;
    cfg.graph = make_grid(nodes);
    cfg.flows.push_back({0, 0, nodes - 1, 10, 1.0, rate});
    cfg.slots = slots;
    return cfg;
}

/// Flow sets that span the edge nodes of each reference topology.
inline SimConfig topology_config(const std::string& kind, double arrival_sum,
                                 long slots = 2000) {
    SimConfig cfg;
    if (kind == "tree") {
        cfg.graph = make_tree(15);
        cfg.flows.push_back({0, 7, 14, 10, 1.0, arrival_sum / 2});   // leaf to leaf across root
        cfg.flows.push_back({1, 10, 12, 10, 1.0, arrival_sum / 2});
    } else if (kind == "grid") {
        cfg.graph = make_grid(16);
        cfg.flows.push_back({0, 0, 15, 10, 1.0, arrival_sum / 2});
        cfg.flows.push_back({1, 3, 12, 10, 1.0, arrival_sum / 2});
    } else if (kind == "star") {
        cfg.graph = make_star(16);
        cfg.flows.push_back({0, 1, 8, 10, 1.0, arrival_sum / 2});
        cfg.flows.push_back({1, 5, 12, 10, 1.0, arrival_sum / 2});
    } else {
        throw ConfigError("unknown reference topology '" + kind + "'");
    }
    cfg.slots = slots;
    return cfg;
}

inline std::vector<ExperimentArm> preset_arms(const std::string& name) {
    std::vector<ExperimentArm> arms;
    auto add = [&](std::string label, SimConfig cfg) {
        arms.push_back({std::move(label), std::move(cfg)});
    };
    if (name == "fig3a") {
        for (double sum : {1.0, 2.0, 3.0, 4.0})
            add("sum=" + std::to_string(static_cast<int>(sum)), mesh_corners_config(16, sum));
    } else if (name == "fig3b") {
        for (double sum : {1.0, 2.0, 3.0}) {
            for (bool shaping : {true, false}) {
                auto cfg = mesh_corners_config(16, sum);
                cfg.pgds.shaping = shaping;
                add("sum=" + std::to_string(static_cast<int>(sum)) +
                        (shaping ? " shaping=on" : " shaping=off"),
                    std::move(cfg));
            }
        }
    } else if (name == "fig3c") {
        for (int nodes : {9, 16, 25})
            add("nodes=" + std::to_string(nodes), single_flow_grid_config(nodes, 1.0));
    } else if (name == "fig4a" || name == "fig4b") {
        for (const char* kind : {"tree", "grid", "star"})
            add(std::string("topology=") + kind, topology_config(kind, 2.0));
    } else if (name == "fig4c") {
        for (double sum : {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}) {
            auto cfg = mesh_corners_config(16, sum, 5000);
            add("sum=" + std::to_string(static_cast<int>(sum)), std::move(cfg));
        }
    } else if (name == "fig5a" || name == "fig5b") {
        const std::vector<double> sums =
            name == "fig5a" ? std::vector<double>{1.0, 2.0, 3.0, 4.0} : std::vector<double>{2.0};
        for (double sum : sums) {
            for (auto [kind, kname] :
                 {std::pair{SchedulerKind::kPgds, "pgds"},
                  std::pair{SchedulerKind::kCsma, "csma"},
                  std::pair{SchedulerKind::kAdaptiveCsma, "adaptive-csma"}}) {
                auto cfg = mesh_corners_config(16, sum, 3000);
                cfg.scheduler = kind;
                add("scheduler=" + std::string(kname) + " sum=" +
                        std::to_string(static_cast<int>(sum)),
                    std::move(cfg));
            }
        }
    } else if (name == "fig5c") {
        for (auto [label, coherence] :
             {std::pair{"static", 0}, std::pair{"fast", 8}, std::pair{"slow", 50}}) {
            auto cfg = mesh_corners_config(16, 2.0, 3000);
            if (coherence > 0) {
                cfg.channel.mode = ChannelModel::Mode::kBlockFading;
                cfg.channel.coherence_slots = coherence;
            }
            add(std::string("channel=") + label, std::move(cfg));
        }
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return arms;
}

struct RunResult {
    std::string arm;
    std::uint64_t seed = 0;
    double steady_throughput = 0.0;
    double terminal_throughput = 0.0;
    long t90 = 0;
    double violation = 0.0;
    double mean_delay = 0.0;
    double p95_delay = 0.0;
    long generated = 0;
    long delivered = 0;
    long dropped = 0;
    std::vector<double> delay_cdf;
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
}

inline double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (v.size() - 1) / v.size());
}

/// Runs every arm of a preset across `reps` seeds and writes
/// <preset>_runs.csv, <preset>_summary.csv, and <preset>_summary.json
/// under outdir. Returns the summary document.
inline nlohmann::json run_experiment(const std::string& preset, int reps,
                                     std::uint64_t base_seed, const std::string& outdir) {
    if (reps < 1) throw ConfigError("replication count must be >= 1");
    const auto arms = preset_arms(preset);
    std::filesystem::create_directories(outdir);

    std::vector<RunResult> results;
    for (const auto& arm : arms) {
        for (int rep = 0; rep < reps; ++rep) {
            SimConfig cfg = arm.config;
            cfg.seed = base_seed + static_cast<std::uint64_t>(rep);
            Engine engine(cfg);
            MetricsLog log = engine.run();
            RunResult r;
            r.arm = arm.label;
            r.seed = cfg.seed;
            r.steady_throughput = log.steady_throughput();
            r.terminal_throughput = log.terminal_throughput();
            r.t90 = log.time_to_fraction();
            r.violation = log.violation_probability();
            r.mean_delay = log.mean_delay();
            r.p95_delay = log.delay_quantile(0.95);
            r.generated = log.generated;
            r.delivered = log.delivered;
            r.dropped = log.dropped;
            r.delay_cdf = log.delay_cdf(cfg.max_deadline());
            results.push_back(std::move(r));
        }
    }

    const auto runs_path = std::filesystem::path(outdir) / (preset + "_runs.csv");
    {
        std::ofstream os(runs_path);
        os << "preset,arm,seed,steady_throughput,terminal_throughput,t90_slots,violation,"
              "mean_delay,p95_delay,generated,delivered,dropped,delay_cdf\n";
        for (const auto& r : results) {
            os << preset << ",\"" << r.arm << "\"," << r.seed << ',' << r.steady_throughput
               << ',' << r.terminal_throughput << ',' << r.t90 << ',' << r.violation << ','
               << r.mean_delay << ',' << r.p95_delay << ',' << r.generated << ','
               << r.delivered << ',' << r.dropped << ",\"";
            for (size_t i = 0; i < r.delay_cdf.size(); ++i)
                os << (i ? ";" : "") << r.delay_cdf[i];
            os << "\"\n";
        }
    }

    std::map<std::string, std::vector<const RunResult*>> by_arm;
    for (const auto& r : results) by_arm[r.arm].push_back(&r);

    nlohmann::json summary;
    summary["preset"] = preset;
    summary["replications"] = reps;
    summary["base_seed"] = base_seed;
    auto arms_json = nlohmann::json::array();

    const auto summary_path = std::filesystem::path(outdir) / (preset + "_summary.csv");
    std::ofstream ss(summary_path);
    ss << "preset,arm,n,throughput_mean,throughput_stderr,t90_mean,t90_stderr,violation_mean,"
          "violation_stderr,mean_delay\n";
    for (const auto& arm : arms) {  // preserve arm order
        const auto& rs = by_arm[arm.label];
        std::vector<double> thr, t90, viol, delay;
        for (const auto* r : rs) {
            thr.push_back(r->steady_throughput);
            t90.push_back(static_cast<double>(r->t90));
            viol.push_back(r->violation);
            delay.push_back(r->mean_delay);
        }
        ss << preset << ",\"" << arm.label << "\"," << rs.size() << ',' << mean_of(thr) << ','
           << stderr_of(thr) << ',' << mean_of(t90) << ',' << stderr_of(t90) << ','
           << mean_of(viol) << ',' << stderr_of(viol) << ',' << mean_of(delay) << '\n';
        arms_json.push_back({{"arm", arm.label},
                             {"n", rs.size()},
                             {"throughput_mean", mean_of(thr)},
                             {"throughput_stderr", stderr_of(thr)},
                             {"t90_mean", mean_of(t90)},
                             {"t90_stderr", stderr_of(t90)},
                             {"violation_mean", mean_of(viol)},
                             {"violation_stderr", stderr_of(viol)},
                             {"mean_delay", mean_of(delay)}});
    }
    summary["arms"] = arms_json;
    std::ofstream(std::filesystem::path(outdir) / (preset + "_summary.json"))
        << summary.dump(2) << '\n';
    return summary;
}

}  // namespace meshsched
