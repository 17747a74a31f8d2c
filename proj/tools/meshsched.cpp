#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "meshsched/experiment.hpp"
#include "meshsched/net_model.hpp"
#include "meshsched/sim.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::optional<std::string>& scheduler,
            const std::optional<std::uint64_t>& seed, const std::optional<long>& slots,
            const std::string& outdir) {
    std::ifstream in(config_path);
    if (!in) throw meshsched::ConfigError("config file not found: " + config_path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw meshsched::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (scheduler) doc["scheduler"] = *scheduler;
    if (seed) doc["seed"] = *seed;
    if (slots) doc["slots"] = *slots;

    auto cfg = meshsched::SimConfig::from_json(doc);
    std::filesystem::create_directories(outdir);
    meshsched::Engine engine(cfg);
    meshsched::MetricsLog log = engine.run();

    const auto dir = std::filesystem::path(outdir);
    {
        std::ofstream os(dir / "metrics.csv");
        log.write_metrics_csv(os);
    }
    {
        std::ofstream os(dir / "packets.csv");
        log.write_packets_csv(os);
    }
    nlohmann::json summary = log.summary_json();
    summary["config"] = cfg.to_json();
    std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';

    std::cout << "slots=" << log.rows.size() << " generated=" << log.generated
              << " delivered=" << log.delivered << " dropped=" << log.dropped
              << " throughput=" << log.steady_throughput() << " pkts/slot"
              << " violation=" << log.violation_probability() << "\n";
    std::cout << "wrote " << (dir / "metrics.csv").string() << ", "
              << (dir / "packets.csv").string() << ", " << (dir / "summary.json").string()
              << "\n";
    return 0;
}

int cmd_experiment(const std::string& preset, int reps, std::uint64_t seed,
                   const std::string& outdir) {
    auto summary = meshsched::run_experiment(preset, reps, seed, outdir);
    for (const auto& arm : summary["arms"]) {
        std::cout << preset << " " << arm["arm"].get<std::string>()
                  << ": throughput=" << arm["throughput_mean"].get<double>() << " +- "
                  << arm["throughput_stderr"].get<double>()
                  << " pkts/slot, t90=" << arm["t90_mean"].get<double>()
                  << " slots, violation=" << arm["violation_mean"].get<double>() << "\n";
    }
    return 0;
}

int cmd_gen_topology(const std::string& kind, int nodes, const std::optional<std::string>& out) {
    auto g = meshsched::make_topology(kind, nodes);
    const std::string doc = g.to_json().dump(2) + "\n";
    if (out) {
        std::ofstream os(*out);
        if (!os) throw meshsched::ConfigError("cannot write " + *out);
        os << doc;
    } else {
        std::cout << doc;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-slotted wireless mesh scheduling simulator"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run one simulation from a JSON config");
    std::string config_path;
    std::optional<std::string> scheduler;
    std::optional<std::uint64_t> seed;
    std::optional<long> slots;
    std::string outdir = ".";
    run->add_option("--config", config_path, "Simulation config (JSON)")->required();
    run->add_option("--scheduler", scheduler, "Override: pgds | csma | adaptive-csma");
    run->add_option("--seed", seed, "Override the RNG seed");
    run->add_option("--slots", slots, "Override the slot count");
    run->add_option("--out", outdir, "Output directory (metrics.csv, packets.csv, summary.json)");

    auto* exp = app.add_subcommand("experiment", "Run a preset experiment grid");
    std::string preset;
    int reps = 10;
    std::uint64_t exp_seed = 1;
    std::string exp_out = "out";
    exp->add_option("--preset", preset,
                    "fig3a|fig3b|fig3c|fig4a|fig4b|fig4c|fig5a|fig5b|fig5c")
        ->required();
    exp->add_option("--reps", reps, "Replications per arm");
    exp->add_option("--seed", exp_seed, "Base seed (seeds are seed..seed+reps-1)");
    exp->add_option("--out", exp_out, "Output directory");

    auto* gen = app.add_subcommand("gen-topology", "Emit a topology document");
    std::string kind = "mesh";
    int nodes = 16;
    std::optional<std::string> gen_out;
    gen->add_option("--kind", kind, "line | tree | grid | star | mesh")->required();
    gen->add_option("--nodes", nodes, "Node count")->required();
    gen->add_option("--out", gen_out, "Output file (stdout when omitted)");

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(config_path, scheduler, seed, slots, outdir);
        if (exp->parsed()) return cmd_experiment(preset, reps, exp_seed, exp_out);
        if (gen->parsed()) return cmd_gen_topology(kind, nodes, gen_out);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const meshsched::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const meshsched::InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
