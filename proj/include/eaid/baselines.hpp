#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "eaid/codec.hpp"
#include "eaid/protocol.hpp"

// Prior-art dispersal strategies as drop-in leader state machines, kept
// behind the same event-driven shape as the elastic leader so the simulator
// can swap them per scenario. All three encode with a fixed pool and one
// fragment per target; they differ in what happens when acks are missed.

namespace eaid::baselines {

enum class baseline_kind : uint8_t {
    full_replication_fallback,
    endangered_resharing,
    proactive_encoding,
};

struct baseline_message {
    enum class kind : uint8_t {
        fragment,   // one coded fragment `frag_index` of an (k_data, total) scheme
        full_copy,  // the entire message
        probe,      // liveness probe, answered but storing nothing
        store_ack,  // node -> leader: holdings after applying a message
        probe_ack,
    };

    kind type = kind::store_ack;
    node_id_t sender = 0;
    node_id_t recipient = 0;
    message_id_t id = 0;
    uint16_t frag_index = 0;
    uint16_t k_data = 0;    // scheme dimension the fragment belongs to
    uint32_t round = 0;     // transmission round
};

// Per-node holdings for one entry. Proactive re-encoding replaces holdings
// wholesale when the scheme changes; the committed scheme is the per-entry
// metadata burden that approach carries.
struct node_holdings {
    bool full_copy = false;
    uint16_t k_data = 0;
    std::vector<uint16_t> frag_indices;  // distinct, sorted

    uint64_t bytes(uint32_t message_len) const;
};

// Storage-node side shared by all three baselines: store what arrives, ack
// with the current holdings.
class baseline_store {
public:
    explicit baseline_store(node_id_t id) : id_(id) {}

    baseline_message on_message(const baseline_message& msg);
    const node_holdings& holdings(message_id_t id) const;
    node_id_t id() const { return id_; }

private:
    node_id_t id_;
    std::vector<node_holdings> slots_;
    static const node_holdings empty_;
};

struct round_result {
    dispersal_status status = dispersal_status::pending;
    std::vector<baseline_message> out;
};

// Round 1 sends one (F+1, F)-coded fragment per node and commits only when
// every node acked; a single miss falls back to full-copy replication, which
// commits once F+1 nodes hold the entire message.
class fallback_leader {
public:
    fallback_leader(uint32_t n_nodes, uint32_t max_faults, node_id_t leader_id);

    std::vector<baseline_message> begin_entry(message_id_t id);
    round_result on_ack(const baseline_message& ack);
    round_result on_timeout(message_id_t id);

    bool committed_coded(message_id_t id) const;
    bool fell_back(message_id_t id) const;
    uint32_t rounds(message_id_t id) const;
    bool is_done(message_id_t id) const;

private:
    struct entry {
        bool begun = false, done = false, full_phase = false;
        uint32_t rounds = 0;
        std::vector<bool> acked_frag, acked_full;
        uint32_t frag_acks = 0, full_acks = 0;
    };
    entry& at(message_id_t id);

    uint32_t n_, f_;
    node_id_t leader_;
    std::vector<entry> entries_;
};

// Starts like the fallback; on a timeout the fragments addressed to the f
// silent nodes are re-sent to F responsive nodes (picked pseudo-randomly
// from the run seed), and the round commits when those nodes confirm.
class resharing_leader {
public:
    resharing_leader(uint32_t n_nodes, uint32_t max_faults, node_id_t leader_id,
                     uint64_t seed);

    std::vector<baseline_message> begin_entry(message_id_t id);
    round_result on_ack(const baseline_message& ack);
    round_result on_timeout(message_id_t id);

    uint32_t rounds(message_id_t id) const;
    bool is_done(message_id_t id) const;
    // Chosen recipients of the latest reshare round (exposed for tests).
    std::vector<node_id_t> reshare_targets(message_id_t id) const;

private:
    struct entry {
        bool begun = false, done = false, resharing = false;
        uint32_t rounds = 0;
        std::vector<bool> acked_frag;
        uint32_t frag_acks = 0;
        std::vector<node_id_t> targets;        // F chosen responsive nodes
        std::vector<uint16_t> endangered;      // fragment indices being re-sent
        std::vector<bool> reshare_acked;       // per (target, endangered) copy
        uint32_t reshare_acks_needed = 0, reshare_acks = 0;
    };
    entry& at(message_id_t id);

    uint32_t n_, f_;
    node_id_t leader_;
    uint64_t seed_;
    std::vector<entry> entries_;
};

// Scheme used for an estimate of `responsive` live nodes: k = F+1-f_est
// (clamped to 1) data shards plus F parity shards, one fragment per
// estimated-responsive node.
std::pair<uint16_t, uint16_t> proactive_scheme(uint32_t n_nodes,
                                               uint32_t max_faults,
                                               uint32_t estimated_responsive);

struct proactive_round_outcome {
    dispersal_status status = dispersal_status::pending;
    std::vector<baseline_message> out;
    uint16_t k_data = 0;  // scheme of the round just issued
};

// Re-encodes to match its running estimate of responsive nodes. A round
// commits once its response count (fragment acks and probe replies alike)
// meets the previous round's sample; a timeout re-encodes for the nodes that
// did answer and re-samples. Storage is never re-optimized after commit.
class proactive_leader {
public:
    proactive_leader(uint32_t n_nodes, uint32_t max_faults, node_id_t leader_id);

    proactive_round_outcome begin_entry(message_id_t id);
    // Any response for the entry (store_ack or probe_ack).
    round_result on_response(const baseline_message& ack);
    // Retransmission on timer expiry: re-encode for the responders of the
    // round that just lapsed and wait for the re-sampled count.
    round_result on_timeout(message_id_t id);

    // Closes the estimation window (one timeout after dissemination starts);
    // the response count seen by then becomes the next entry's estimate.
    void close_estimation_window(message_id_t id);

    uint32_t estimated_responsive() const { return estimate_; }
    uint16_t scheme_k(message_id_t id) const;
    uint32_t rounds(message_id_t id) const;
    bool is_done(message_id_t id) const;
    const std::vector<node_id_t>& targets(message_id_t id) const;

private:
    struct entry {
        bool begun = false, done = false, window_closed = false;
        uint32_t rounds = 0;
        uint16_t k = 0;
        std::vector<node_id_t> targets;     // fragment recipients, leader first
        std::vector<bool> responded;        // current round, any response kind
        uint32_t response_count = 0;
        uint32_t prev_round_responses = 0;  // the sample to meet or exceed
        std::vector<bool> first_round_seen;
        uint32_t first_round_responses = 0;
    };
    entry& at(message_id_t id);
    proactive_round_outcome issue_round(message_id_t id, entry& e,
                                        const std::vector<node_id_t>& targets);

    uint32_t n_, f_;
    node_id_t leader_;
    uint32_t estimate_;
    std::vector<node_id_t> last_responsive_;  // preferred fragment targets
    std::vector<entry> entries_;
};

}  // namespace eaid::baselines
