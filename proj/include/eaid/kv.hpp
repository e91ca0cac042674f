#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eaid/codec.hpp"
#include "eaid/protocol.hpp"
#include "eaid/simulator.hpp"

// Log replication with erasure-coded entry payloads and tiered pruning.
// The leader encodes each entry into the fixed (F+1, (F+1)*N) fragment pool,
// ships every follower a slice of its own block sized by the current tier,
// and advances two cluster-wide thresholds: T1 (highest index acked by
// ceil(3N/4) nodes) and T2 (highest index acked by all N). Followers prune
// entries to 2 / 1 fragments below T1 / T2 and keep at most F+1 otherwise,
// so any F crashes leave at least F+1 distinct fragments of every committed
// entry. Elections are out of scope; a scripted leader change promotes the
// most up-to-date survivor.

namespace eaid::kv {

struct kv_command {
    enum class op_t : uint8_t { put, get };
    op_t op = op_t::put;
    std::string key;
    std::string value;

    std::vector<uint8_t> serialize() const;
    static kv_command parse(std::span<const uint8_t> bytes);
};

// Fragments are tagged with (term, index) packed into the codec message id.
inline message_id_t pack_tag(uint32_t term, uint64_t index) {
    return (static_cast<uint64_t>(term) << 40) | index;
}

struct log_slot {
    uint32_t term = 0;
    std::vector<fragment> frags;  // distinct indices from this node's block

    uint64_t bytes() const;
};

struct append_entry_payload {
    uint32_t term = 0;
    uint64_t index = 0;
    std::vector<fragment> frags;
};

struct append_entries {
    uint32_t term = 0;
    node_id_t leader = 0;
    uint64_t prev_index = 0;
    uint32_t prev_term = 0;
    std::vector<append_entry_payload> entries;
    uint64_t leader_commit = 0;
    uint64_t t1 = 0;
    uint64_t t2 = 0;
};

struct append_response {
    node_id_t from = 0;
    uint32_t term = 0;
    bool success = false;
    uint64_t last_index = 0;  // catch-up hint
    // per appended entry: (index, fragments now held)
    std::vector<std::pair<uint64_t, uint32_t>> held;
};

// The tier table [(N,1), (ceil(3N/4),2), (F+1,F+1)] with duplicate quorum
// rows removed so w stays strictly decreasing (ceil(3N/4) == N at N = 3).
std::vector<std::pair<uint32_t, uint32_t>> tier_table(uint32_t n_nodes,
                                                      uint32_t max_faults);
// The row with the largest w <= q.
std::pair<uint32_t, uint32_t> tier_lookup(
    const std::vector<std::pair<uint32_t, uint32_t>>& table, uint32_t q);

class raft_node {
public:
    raft_node(const coding_params& params, node_id_t id, uint32_t delta);

    // --- follower path ---
    // do_prune lets the harness jitter when opportunistic pruning runs.
    append_response on_append_entries(const append_entries& rpc, bool do_prune);
    // Tier pruning across the log; returns fragments discarded.
    size_t prune();

    // --- leader path ---
    void become_leader(uint32_t new_term);
    bool is_leader() const { return leader_; }
    // Appends a command payload; encodes, stores the leader's own slice, and
    // opens the ack round at the tier for max(F+1, resp_est - delta).
    uint64_t start_append(std::vector<uint8_t> payload);
    // AppendEntries batch for follower j starting at next_index[j].
    std::optional<append_entries> build_append(node_id_t j, size_t max_entries);
    // Returns true if the response was from a newer term (leader steps down).
    bool on_append_response(const append_response& resp);
    // Tier step-down for a pending entry; per-follower incremental slices are
    // picked up by the next build_append.
    void on_append_timeout(uint64_t index);
    // Entries committed since the last call (in order).
    std::vector<uint64_t> take_newly_committed();

    // Reconstructs every fragment-only slot from the given peers, applies the
    // committed prefix, and truncates any unreconstructable uncommitted tail.
    // Returns false if a committed entry could not be reconstructed.
    bool recover_plaintext(const std::vector<const raft_node*>& peers);

    // --- shared state ---
    node_id_t id() const { return id_; }
    uint32_t current_term() const { return term_; }
    uint64_t last_index() const { return log_.size() - 1; }
    uint32_t term_at(uint64_t idx) const { return log_[idx].term; }
    bool has_slot(uint64_t idx) const { return idx >= 1 && idx < log_.size(); }
    const log_slot& slot(uint64_t idx) const { return log_[idx]; }
    uint64_t commit_index() const { return commit_; }
    uint64_t t1() const { return leader_ ? lead_t1_ : my_t1_; }
    uint64_t t2() const { return leader_ ? lead_t2_ : my_t2_; }
    uint64_t storage_bytes() const;
    uint64_t slot_bytes(uint64_t idx) const;
    uint32_t resp_est() const { return resp_est_; }
    uint32_t entry_rounds(uint64_t idx) const;
    uint32_t entry_f_per(uint64_t idx) const;
    bool entry_committed(uint64_t idx) const;
    const std::optional<std::vector<uint8_t>>& plaintext(uint64_t idx) const {
        return plain_[idx];
    }

    // Applied key-value state (leader-maintained; followers stay fragment-only
    // until promoted or explicitly materialized).
    const std::map<std::string, std::string>& applied() const { return applied_; }
    std::string applied_dump() const;

    // Violations observed by internal invariant checks (T2 <= T1, monotone
    // thresholds, conflict-truncation below commit).
    const std::vector<std::string>& violations() const { return violations_; }

private:
    struct track {
        bool open = false;
        bool committed = false;
        uint32_t w = 0;
        uint32_t f_per = 0;
        uint32_t f_frozen = 0;
        uint32_t rounds = 0;
        uint32_t ack_count = 0;
        std::vector<uint8_t> held;
        std::vector<uint8_t> sent;
        std::vector<bool> acked;
    };

    void adopt_term(uint32_t term);
    void update_thresholds(uint64_t m);
    void advance_commit();
    void apply_committed();
    void note_violation(const std::string& v);
    uint32_t slice_for(node_id_t j, uint64_t idx) const;
    std::vector<fragment> fragments_for(node_id_t j, uint64_t idx,
                                        uint32_t lo, uint32_t hi) const;

    coding_params params_;
    fragment_assignment assignment_;
    node_id_t id_;
    uint32_t n_, f_, delta_;
    uint32_t term_ = 0;
    bool leader_ = false;
    std::vector<log_slot> log_;  // 1-based; log_[0] is a sentinel
    std::vector<std::optional<std::vector<uint8_t>>> plain_;
    uint64_t commit_ = 0;
    uint64_t last_applied_ = 0;
    uint64_t my_t1_ = 0, my_t2_ = 0;      // follower view
    uint64_t lead_t1_ = 0, lead_t2_ = 0;  // leader bookkeeping
    uint32_t resp_est_;
    uint64_t last_opened_ = 0;
    std::vector<track> tracks_;
    std::vector<uint64_t> next_index_;
    std::vector<uint64_t> newly_committed_;
    std::map<std::string, std::string> applied_;
    std::vector<std::string> violations_;
    std::vector<std::pair<uint32_t, uint32_t>> tiers_;
    uint64_t prune_swept_t1_ = 0, prune_swept_t2_ = 0;
};

// Decodes entry `idx` from any F+1 distinct fragments held across `peers`,
// all tagged with (`term`, `idx`). Returns nullopt when fewer than F+1
// distinct fragments are reachable.
std::optional<std::vector<uint8_t>> reconstruct(
    const coding_params& params, const std::vector<const raft_node*>& peers,
    uint32_t term, uint64_t idx);

// Deterministic scripted election: the most up-to-date survivor (highest
// (last term, last index), lowest id on ties) among a reachable majority.
// Returns nullopt when no majority is alive.
std::optional<node_id_t> pick_leader(const std::vector<const raft_node*>& alive);

sim::run_result run_kv_scenario(const sim::scenario_config& config,
                                const sim::trace_fn& trace);

}  // namespace eaid::kv
