#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eaid/codec.hpp"
#include "eaid/protocol.hpp"
#include "eaid/sim/rng.hpp"

// Deterministic discrete-event harness. A strictly single-threaded loop
// consumes timestamped events (integer nanoseconds) ordered by
// (time, kind rank, sender, sequence number); every node's response time is
// sampled i.i.d. per (node, entry, transmission round) from the configured
// latency model. Nodes inside an active partition drop all traffic; healing
// re-enables them and the protocol's catch-up path restores their storage.
// Output is a pure function of (config, seed).

namespace eaid::sim {

enum class protocol_kind : uint8_t {
    eaid,
    full_fallback,
    resharing,
    proactive,
    eaid_kv,
};

std::string to_string(protocol_kind p);

struct latency_model {
    double mean_ms = 0.8;
    double stddev_ms = 0.15;
};

struct partition_spec {
    std::vector<node_id_t> nodes;
    uint64_t start_entry = 0;
    uint64_t end_entry = 0;
};

struct crash_spec {
    node_id_t node = 0;
    uint64_t entry = 0;
};

struct scenario_config {
    uint32_t n_nodes = 0;
    uint32_t max_faults = 0;
    uint32_t delta = 1;
    protocol_kind protocol = protocol_kind::eaid;
    uint64_t num_entries = 1;
    uint32_t message_size_bytes = 1024;
    latency_model latency;
    double timeout_ms = 1.1;
    double entry_spacing_ms = 0.0;   // 0: defaults to 2 * timeout
    double heartbeat_ms = 0.0;       // 0: defaults to 2 * timeout (kv only)
    std::vector<partition_spec> partitions;
    uint64_t seed = 1;
    std::vector<crash_spec> crash_schedule;
    uint64_t crash_leader_every = 0;  // kv sugar: crash the leader every k commits
    bool crash_revive = true;         // crashed nodes rejoin after a leader change
    bool prune_jitter = true;         // kv: randomize when followers prune
    // Continuous brute-force safety checking (needs n_nodes <= 7).
    bool verify = false;

    void validate() const;
    double spacing_ms() const {
        return entry_spacing_ms > 0 ? entry_spacing_ms : 2.0 * timeout_ms;
    }
    double hb_ms() const { return heartbeat_ms > 0 ? heartbeat_ms : 2.0 * timeout_ms; }
};

struct entry_metrics {
    uint64_t entry_index = 0;
    int64_t dispersal_latency_ns = -1;  // -1: never committed
    uint32_t retransmission_rounds = 0;
    // Cluster-wide bytes across all entries, sampled at this entry's commit.
    uint64_t total_storage_bytes = 0;
    // Largest per-node byte total at this entry's commit.
    uint64_t per_node_max_bytes = 0;
    // This entry's cluster-wide bytes at the end of the run.
    uint64_t per_entry_final_storage_bytes = 0;
    // This entry's bytes once dissemination settled (sampled a few entries
    // later), before any later partition-heal adjustments.
    uint64_t settled_storage_bytes = 0;
    // This entry's bytes at its own commit.
    uint64_t commit_storage_bytes = 0;
    int64_t last_storage_change_ns = 0;
};

struct run_result {
    std::vector<entry_metrics> entries;
    uint64_t final_total_bytes = 0;
    // Point-to-point message conservation: every sent message is either
    // delivered or dropped by a partition/crash, never both.
    uint64_t messages_sent = 0;
    uint64_t messages_delivered = 0;
    uint64_t messages_dropped = 0;
    uint64_t safety_checks = 0;      // verify mode: brute-force checks executed
    uint64_t safety_violations = 0;
    std::string first_violation;
    // eaid_kv runs: one sorted key=value dump per surviving node, plus the
    // replay oracle's dump, for cross-node equality checks.
    std::vector<std::string> applied_dumps;
    std::string oracle_dump;
};

using trace_fn = std::function<void(const std::string& line)>;

run_result run_scenario(const scenario_config& config,
                        const trace_fn& trace = nullptr);

// CSV with exactly the columns: entry_index, protocol, dispersal_latency_ms,
// retransmission_rounds, total_storage_bytes, per_node_max_bytes,
// per_entry_final_storage_bytes.
std::string to_csv(const scenario_config& config, const run_result& result);

std::string format_ms(int64_t ns);

}  // namespace eaid::sim
