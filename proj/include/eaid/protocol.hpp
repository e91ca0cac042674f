#pragma once

#include <cstdint>
#include <vector>

#include "eaid/codec.hpp"

// Event-driven state machines for elastic dispersal: a leader that tunes the
// number of fragments per node to its responsive-quorum estimate, and storage
// nodes that prune surplus fragments autonomously as acknowledgment counts
// rise. Each handler consumes one event and returns the messages to emit;
// the harness owns timers and message routing. State machines are
// single-threaded values and never share mutable state.

namespace eaid {

using node_id_t = uint32_t;

// Recipient value meaning "all nodes"; the harness fans the message out.
inline constexpr node_id_t kBroadcast = UINT32_MAX;

enum class dispersal_status : uint8_t { pending, done };

struct protocol_message {
    enum class kind : uint8_t { disseminate, ack, ack_update };

    kind type = kind::ack;
    node_id_t sender = 0;
    node_id_t recipient = 0;
    message_id_t id = 0;
    // disseminate: absolute fragment index range [frag_lo, frag_hi), always a
    // slice of the recipient's partition block.
    uint32_t frag_lo = 0;
    uint32_t frag_hi = 0;
    // ack: sender's current held-fragment count; ack_update: |ack set|.
    uint32_t count = 0;
};

struct ack_result {
    dispersal_status status = dispersal_status::pending;
    std::vector<protocol_message> out;
};

struct timeout_result {
    dispersal_status status = dispersal_status::pending;
    std::vector<protocol_message> out;
};

// Leader side. The leader is itself storage node `leader_id`: it stores its
// own block slice synchronously at dispersal start (and at each threshold
// raise) and counts itself acked immediately, so no self-ack round trip is
// on the critical path. The emitted self-addressed disseminate exists so the
// co-located storage node state stays in sync; the harness delivers it with
// zero latency.
class leader_dispersal {
public:
    leader_dispersal(const coding_params& params, node_id_t leader_id,
                     uint32_t delta);

    // Computes t' = max(1, responsive_quorum - F - delta) and
    // f_per = ceil((F+1)/t'), then emits one disseminate per node carrying
    // the first f_per fragments of that node's block. The caller must arm
    // the round timer. Throws duplicate_dispersal if `id` was begun before.
    std::vector<protocol_message> begin_disperse(message_id_t id);

    // Ack while dispersal is active. Returns done once |ack set| >= F + t';
    // the done transition also carries an ack-update broadcast so nodes can
    // prune to the committed quorum immediately. Acks for unknown ids are
    // ignored; acks after done are routed to the late-ack path.
    ack_result on_ack(node_id_t sender, message_id_t id, uint32_t held_count);

    // Round timer expiry: lowers the wait margin to max(1, |A| - F), raises
    // f_per accordingly, emits incremental disseminates to every node that
    // is owed fragments, and re-derives the ack set under the new threshold.
    // The caller restarts the timer unless the result says done.
    timeout_result on_timeout(message_id_t id);

    // Ack arriving after done. held is updated; if the node newly crosses
    // the frozen threshold the returned vector carries an ack-update
    // broadcast (at most one per ack-set growth).
    std::vector<protocol_message> on_late_ack(node_id_t sender, message_id_t id,
                                              uint32_t held_count);

    // Retransmission of the frozen slice to a node that never acked a
    // completed dispersal (partition catch-up). Empty range if the node is
    // already in the ack set or the dispersal is not done.
    std::vector<protocol_message> catch_up(message_id_t id, node_id_t node);

    bool is_active(message_id_t id) const;
    bool is_done(message_id_t id) const;
    uint32_t f_per(message_id_t id) const;
    uint32_t frozen_f_per(message_id_t id) const;
    uint32_t t_prime(message_id_t id) const;
    uint32_t ack_count(message_id_t id) const;
    bool in_ack_set(message_id_t id, node_id_t node) const;
    uint32_t sent_count(message_id_t id, node_id_t node) const;
    uint32_t held_count(message_id_t id, node_id_t node) const;
    // Timeout rounds taken so far; also the stale-timer generation tag.
    uint32_t round(message_id_t id) const;
    uint32_t responsive_quorum() const { return responsive_quorum_; }
    uint32_t delta() const { return delta_; }
    node_id_t leader_id() const { return leader_id_; }

private:
    struct dispersal {
        bool begun = false;
        bool done = false;
        uint32_t f_per = 0;
        uint32_t t_prime = 0;
        uint32_t f_frozen = 0;
        uint32_t round = 0;
        uint32_t ack_count = 0;
        std::vector<uint8_t> sent;   // per node
        std::vector<uint8_t> held;   // per node
        std::vector<uint64_t> acked; // bitset over nodes
    };

    dispersal& slot(message_id_t id);
    const dispersal* find(message_id_t id) const;
    bool ack_test(const dispersal& d, node_id_t j) const;
    void ack_add(dispersal& d, node_id_t j);
    void recompute_ack_set(dispersal& d);
    // Exit-condition evaluation; asserts f_per * t' >= F+1 every time.
    dispersal_status evaluate_exit(dispersal& d, message_id_t id,
                                   std::vector<protocol_message>& out);
    protocol_message make_disseminate(message_id_t id, node_id_t node,
                                      uint32_t lo, uint32_t hi) const;

    coding_params params_;
    fragment_assignment assignment_;
    node_id_t leader_id_;
    uint32_t delta_;
    uint32_t responsive_quorum_;
    bool has_last_ = false;
    message_id_t last_begun_ = 0;
    // Dense by message id; the simulator numbers entries 0..E-1.
    std::vector<dispersal> by_id_;
};

// Storage node side: a fragment store per message plus the highest
// acknowledged-quorum count heard for it. Holdings are kept as a bitmask
// relative to this node's partition block (block size F+1 <= 64).
class storage_node {
public:
    storage_node(const coding_params& params, node_id_t id);

    // Unions the delivered slice into the store and returns the ack carrying
    // the new held count. Throws protocol_violation if the slice is not from
    // this node's block.
    protocol_message on_disseminate(const protocol_message& msg);

    // Monotone quorum update; prunes when the new count exceeds the old.
    // Returns the number of fragments discarded.
    size_t on_ack_update(message_id_t id, uint32_t quorum_count);

    // Discards highest-index fragments until at most r(Q) remain, where
    // r(q) = ceil((F+1)/(q-F)). No-op while Q <= F (rule undefined there).
    size_t prune(message_id_t id);

    uint32_t held_count(message_id_t id) const;
    uint64_t held_mask(message_id_t id) const;
    // Absolute fragment indices currently held.
    std::vector<uint32_t> held_indices(message_id_t id) const;
    uint32_t highest_known_quorum(message_id_t id) const;
    node_id_t id() const { return id_; }

    static uint32_t retention_rule(uint32_t max_faults, uint32_t quorum);

private:
    struct slot {
        uint64_t mask = 0;
        uint32_t quorum = 0;
    };
    slot& at(message_id_t id);
    const slot* find(message_id_t id) const;

    coding_params params_;
    fragment_assignment assignment_;
    node_id_t id_;
    std::vector<slot> slots_;
};

inline uint32_t ceil_div(uint32_t a, uint32_t b) { return (a + b - 1) / b; }

namespace testing {
// Fault-injection fixture: storage nodes retain one fragment fewer than the
// rule allows, so the brute-force safety oracles can prove they detect
// under-retention. Enabled via the EAID_MUTATE_PRUNE environment variable in
// the CLI; never set in normal operation.
void set_prune_under_retention(bool enabled);
bool prune_under_retention();
}  // namespace testing

}  // namespace eaid
