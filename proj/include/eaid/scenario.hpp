#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eaid/simulator.hpp"

// Scenario files are line-oriented `key = value` text with `#` comments.
// Unknown keys are rejected with the offending line/column. The keys
// protocol, n_nodes and partition_size accept comma lists and expand into a
// sweep (cross product, in file-listed order); every other key is scalar.

namespace eaid::scn {

struct scenario_doc {
    std::vector<sim::protocol_kind> protocols{sim::protocol_kind::eaid};
    std::vector<uint32_t> n_values{5};
    // Numeric node counts, or "max" for F partitioned nodes; empty means no
    // partition window.
    std::vector<std::string> partition_sizes;
    std::vector<node_id_t> partition_nodes;  // explicit alternative to sizes
    uint64_t partition_start = 0;
    uint64_t partition_end = 0;
    bool has_partition_window = false;

    bool max_faults_set = false;
    uint32_t max_faults = 0;
    uint32_t delta = 1;
    uint64_t num_entries = 1000;
    uint32_t message_size_bytes = 3072;
    double latency_mean_ms = 0.8;
    double latency_stddev_ms = 0.15;
    double timeout_ms = 1.1;
    double entry_spacing_ms = 0.0;
    double heartbeat_ms = 0.0;
    uint64_t seed = 1;
    uint64_t crash_leader_every = 0;
    bool crash_revive = true;
    bool prune_jitter = true;
    std::vector<sim::crash_spec> crash_schedule;
};

scenario_doc parse_scenario_text(const std::string& text);
scenario_doc parse_scenario_file(const std::string& path);

// Cross-product expansion; each element is (label, config) where the label
// lists the swept key=value pairs (empty for a single run).
std::vector<std::pair<std::string, sim::scenario_config>> expand(
    const scenario_doc& doc);

}  // namespace eaid::scn
