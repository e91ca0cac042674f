// Scenario runner: executes dispersal/replication scenarios and emits the
// per-entry metrics CSV, with an optional event trace. `verify` repeats a
// run with continuous brute-force safety checking (small clusters only);
// `sweep` expands multi-valued scenarios into per-run files.
//
// Exit codes: 0 success, 1 verification violation, 2 bad input.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "eaid/scenario.hpp"
#include "eaid/simulator.hpp"

namespace fs = std::filesystem;

namespace {

// Complete files only: write to a sibling temp path, then rename over.
void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp);
        }
        out << content;
    }
    fs::rename(tmp, path);
}

uint64_t effective_seed(const eaid::sim::scenario_config& c, bool seed_flag_set,
                        uint64_t seed_flag) {
    if (seed_flag_set) {
        return seed_flag;
    }
    if (const char* env = std::getenv("EAID_SEED"); env != nullptr && *env != '\0') {
        return std::strtoull(env, nullptr, 10);
    }
    return c.seed;
}

void print_summary(const std::string& label, const eaid::sim::scenario_config& cfg,
                   const eaid::sim::run_result& r) {
    uint64_t committed = 0;
    long double lat_sum = 0;
    uint64_t retrans = 0;
    for (const auto& e : r.entries) {
        if (e.dispersal_latency_ns >= 0) {
            ++committed;
            lat_sum += e.dispersal_latency_ns;
        }
        if (e.retransmission_rounds > 0) {
            ++retrans;
        }
    }
    const double mean_ms =
        committed == 0 ? 0.0 : static_cast<double>(lat_sum / committed) / 1e6;
    const double pct = r.entries.empty()
                           ? 0.0
                           : 100.0 * static_cast<double>(retrans) / r.entries.size();
    std::printf("%s%s%s: mean latency %.3f ms, retransmissions %.2f%%, "
                "final total storage %llu bytes\n",
                eaid::sim::to_string(cfg.protocol).c_str(),
                label.empty() ? "" : " ", label.c_str(), mean_ms, pct,
                static_cast<unsigned long long>(r.final_total_bytes));
}

std::string sanitize(const std::string& label) {
    std::string s = label.empty() ? std::string("run") : label;
    for (char& c : s) {
        if (c == ',' ) c = '_';
        if (c == '=') c = '-';
    }
    return s;
}

int cmd_run(const std::string& scenario_path, const std::string& out_path,
            bool seed_set, uint64_t seed, const std::string& trace_path) {
    auto doc = eaid::scn::parse_scenario_file(scenario_path);
    auto runs = eaid::scn::expand(doc);
    std::string csv;
    std::string trace;
    bool header = false;
    for (auto& [label, cfg] : runs) {
        cfg.seed = effective_seed(cfg, seed_set, seed);
        cfg.validate();
        eaid::sim::trace_fn tf;
        if (!trace_path.empty()) {
            tf = [&trace](const std::string& line) {
                trace += line;
                trace += '\n';
            };
        }
        auto result = eaid::sim::run_scenario(cfg, tf);
        std::string part = eaid::sim::to_csv(cfg, result);
        if (header) {
            part = part.substr(part.find('\n') + 1);  // keep one header row
        }
        header = true;
        csv += part;
        print_summary(label, cfg, result);
        if (cfg.protocol == eaid::sim::protocol_kind::eaid_kv) {
            for (size_t i = 0; i < result.applied_dumps.size(); ++i) {
                write_atomic(out_path + ".applied.node" + std::to_string(i) + ".txt",
                             result.applied_dumps[i]);
            }
            write_atomic(out_path + ".applied.oracle.txt", result.oracle_dump);
        }
    }
    write_atomic(out_path, csv);
    if (!trace_path.empty()) {
        write_atomic(trace_path, trace);
    }
    return 0;
}

int cmd_verify(const std::string& scenario_path, bool seed_set, uint64_t seed) {
    auto doc = eaid::scn::parse_scenario_file(scenario_path);
    auto runs = eaid::scn::expand(doc);
    for (auto& [label, cfg] : runs) {
        cfg.seed = effective_seed(cfg, seed_set, seed);
        cfg.verify = true;
        cfg.validate();  // rejects n_nodes > 7 up front
        auto result = eaid::sim::run_scenario(cfg, nullptr);
        if (result.safety_violations != 0) {
            std::fprintf(stderr, "verify FAILED (%s): %llu violation(s); first: %s\n",
                         eaid::sim::to_string(cfg.protocol).c_str(),
                         static_cast<unsigned long long>(result.safety_violations),
                         result.first_violation.c_str());
            return 1;
        }
        std::printf("verify ok%s%s: %llu checks, 0 violations\n",
                    label.empty() ? "" : " ", label.c_str(),
                    static_cast<unsigned long long>(result.safety_checks));
    }
    return 0;
}

int cmd_sweep(const std::string& scenario_path, const std::string& out_dir,
              bool seed_set, uint64_t seed) {
    auto doc = eaid::scn::parse_scenario_file(scenario_path);
    auto runs = eaid::scn::expand(doc);
    fs::create_directories(out_dir);

    struct done_run {
        std::string label;
        eaid::sim::scenario_config cfg;
        eaid::sim::run_result result;
    };
    std::vector<std::future<done_run>> futures;
    for (auto& [label, cfg0] : runs) {
        eaid::sim::scenario_config cfg = cfg0;
        cfg.seed = effective_seed(cfg, seed_set, seed);
        cfg.validate();
        std::string l = label;
        futures.push_back(std::async(std::launch::async, [l, cfg]() {
            return done_run{l, cfg, eaid::sim::run_scenario(cfg, nullptr)};
        }));
    }
    std::vector<done_run> done;
    for (auto& f : futures) {
        done.push_back(f.get());
    }
    std::sort(done.begin(), done.end(),
              [](const done_run& a, const done_run& b) { return a.label < b.label; });
    std::string merged;
    bool header = false;
    for (const auto& d : done) {
        const std::string csv = eaid::sim::to_csv(d.cfg, d.result);
        write_atomic(out_dir + "/" + sanitize(d.label) + ".csv", csv);
        std::string part = csv;
        if (header) {
            part = part.substr(part.find('\n') + 1);
        }
        header = true;
        merged += part;
        print_summary(d.label, d.cfg, d.result);
    }
    write_atomic(out_dir + "/merged.csv", merged);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* m = std::getenv("EAID_MUTATE_PRUNE"); m != nullptr && *m == '1') {
        eaid::testing::set_prune_under_retention(true);
    }

    CLI::App app{"elastic information dispersal scenario runner"};
    app.require_subcommand(1);

    std::string scenario, out, trace, out_dir;
    uint64_t seed = 0;
    bool seed_set = false;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the scenario seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    auto* run = app.add_subcommand("run", "run a scenario and write the metrics CSV");
    run->add_option("--scenario", scenario, "scenario file")->required();
    run->add_option("--out", out, "output CSV path")->required();
    run->add_option("--trace", trace, "also write an event trace");
    add_seed(run);

    auto* verify = app.add_subcommand(
        "verify", "run with continuous brute-force safety checks (n_nodes <= 7)");
    verify->add_option("--scenario", scenario, "scenario file")->required();
    add_seed(verify);

    auto* sweep = app.add_subcommand("sweep", "expand a multi-valued scenario");
    sweep->add_option("--scenario", scenario, "scenario file")->required();
    sweep->add_option("--out-dir", out_dir, "directory for per-run CSVs")->required();
    add_seed(sweep);

    try {
        app.parse(argc, argv);
        if (run->parsed()) {
            return cmd_run(scenario, out, seed_set, seed, trace);
        }
        if (verify->parsed()) {
            return cmd_verify(scenario, seed_set, seed);
        }
        return cmd_sweep(scenario, out_dir, seed_set, seed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const eaid::parse_error& e) {
        std::fprintf(stderr, "%s: line %d, column %d: %s\n", scenario.c_str(),
                     e.line, e.column, e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
