#include "eaid/protocol.hpp"

#include <atomic>
#include <bit>
#include <cassert>

namespace eaid {

namespace testing {
namespace {
std::atomic<bool> g_prune_under{false};
}
void set_prune_under_retention(bool enabled) { g_prune_under.store(enabled); }
bool prune_under_retention() { return g_prune_under.load(); }
}  // namespace testing

leader_dispersal::leader_dispersal(const coding_params& params,
                                   node_id_t leader_id, uint32_t delta)
    : params_(params),
      assignment_(partition(params)),
      leader_id_(leader_id),
      delta_(delta),
      responsive_quorum_(params.n_nodes) {
    params_.validate();
    if (leader_id >= params.n_nodes) {
        throw config_error("leader_dispersal: leader id out of range");
    }
}

leader_dispersal::dispersal& leader_dispersal::slot(message_id_t id) {
    if (id >= by_id_.size()) {
        by_id_.resize(id + 1);
    }
    return by_id_[id];
}

const leader_dispersal::dispersal* leader_dispersal::find(message_id_t id) const {
    if (id >= by_id_.size() || !by_id_[id].begun) {
        return nullptr;
    }
    return &by_id_[id];
}

bool leader_dispersal::ack_test(const dispersal& d, node_id_t j) const {
    return (d.acked[j >> 6] >> (j & 63)) & 1;
}

void leader_dispersal::ack_add(dispersal& d, node_id_t j) {
    if (!ack_test(d, j)) {
        d.acked[j >> 6] |= uint64_t{1} << (j & 63);
        ++d.ack_count;
    }
}

void leader_dispersal::recompute_ack_set(dispersal& d) {
    d.ack_count = 0;
    for (auto& w : d.acked) {
        w = 0;
    }
    for (node_id_t j = 0; j < params_.n_nodes; ++j) {
        if (d.held[j] >= d.f_per) {
            ack_add(d, j);
        }
    }
}

protocol_message leader_dispersal::make_disseminate(message_id_t id,
                                                    node_id_t node, uint32_t lo,
                                                    uint32_t hi) const {
    const auto [base, _] = assignment_.block(node);
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.sender = leader_id_;
    m.recipient = node;
    m.id = id;
    m.frag_lo = base + lo;
    m.frag_hi = base + hi;
    return m;
}

std::vector<protocol_message> leader_dispersal::begin_disperse(message_id_t id) {
    if (const auto* d = find(id); d != nullptr) {
        throw duplicate_dispersal("begin_disperse: dispersal already begun for id");
    }

    // The estimate follows the most recent dispersal's ack set, including
    // acks that arrived after it returned done; steady state therefore
    // re-converges to N instead of ratcheting down by one wait margin per
    // round.
    if (has_last_) {
        responsive_quorum_ = by_id_[last_begun_].ack_count;
    }

    dispersal& d = slot(id);
    d.begun = true;
    const uint32_t f1 = params_.max_faults + 1;
    const int64_t t = static_cast<int64_t>(responsive_quorum_) -
                      static_cast<int64_t>(params_.max_faults);
    const int64_t margin = t - static_cast<int64_t>(delta_);
    d.t_prime = margin < 1 ? 1u : static_cast<uint32_t>(margin);
    d.f_per = ceil_div(f1, d.t_prime);
    d.sent.assign(params_.n_nodes, static_cast<uint8_t>(d.f_per));
    d.held.assign(params_.n_nodes, 0);
    d.acked.assign((params_.n_nodes + 63) / 64, 0);

    // Leader self-storage: counted acked immediately.
    d.held[leader_id_] = static_cast<uint8_t>(d.f_per);
    ack_add(d, leader_id_);

    has_last_ = true;
    last_begun_ = id;

    std::vector<protocol_message> out;
    out.reserve(params_.n_nodes);
    for (node_id_t j = 0; j < params_.n_nodes; ++j) {
        out.push_back(make_disseminate(id, j, 0, d.f_per));
    }
    return out;
}

dispersal_status leader_dispersal::evaluate_exit(
    dispersal& d, message_id_t id, std::vector<protocol_message>& out) {
    // Safety hinges on f_per * t' >= F+1 holding at every exit-condition
    // evaluation; checked unconditionally, not just in debug builds.
    if (static_cast<uint64_t>(d.f_per) * d.t_prime < params_.max_faults + 1) {
        throw protocol_violation("dispersal invariant broken: f_per * t' < F+1");
    }
    if (d.ack_count < params_.max_faults + d.t_prime) {
        return dispersal_status::pending;
    }
    d.done = true;
    d.f_frozen = d.f_per;
    responsive_quorum_ = d.ack_count;
    // Broadcast the committed quorum right away so nodes can prune the
    // dispersal-time surplus without waiting for a further late ack.
    protocol_message m;
    m.type = protocol_message::kind::ack_update;
    m.sender = leader_id_;
    m.recipient = kBroadcast;
    m.id = id;
    m.count = d.ack_count;
    out.push_back(m);
    return dispersal_status::done;
}

ack_result leader_dispersal::on_ack(node_id_t sender, message_id_t id,
                                    uint32_t held_count) {
    dispersal* d = id < by_id_.size() && by_id_[id].begun ? &by_id_[id] : nullptr;
    if (d == nullptr) {
        return {};  // stale ack for an unknown id: ignored
    }
    if (d->done) {
        return {dispersal_status::done, on_late_ack(sender, id, held_count)};
    }
    if (held_count > d->held[sender]) {
        d->held[sender] = static_cast<uint8_t>(held_count);
    }
    if (d->held[sender] >= d->f_per) {
        ack_add(*d, sender);
    }
    ack_result r;
    r.status = evaluate_exit(*d, id, r.out);
    return r;
}

timeout_result leader_dispersal::on_timeout(message_id_t id) {
    dispersal* d = id < by_id_.size() && by_id_[id].begun ? &by_id_[id] : nullptr;
    if (d == nullptr || d->done) {
        return {dispersal_status::done, {}};
    }

    const uint32_t f1 = params_.max_faults + 1;
    const uint32_t t_new = d->ack_count > params_.max_faults
                               ? d->ack_count - params_.max_faults
                               : 1u;
    const uint32_t f_new = ceil_div(f1, t_new);

    timeout_result r;
    for (node_id_t j = 0; j < params_.n_nodes; ++j) {
        if (f_new > d->sent[j]) {
            r.out.push_back(make_disseminate(id, j, d->sent[j], f_new));
            d->sent[j] = static_cast<uint8_t>(f_new);
        }
    }
    // The leader's own slice grows synchronously with the raised threshold.
    if (d->held[leader_id_] < f_new) {
        d->held[leader_id_] = static_cast<uint8_t>(f_new);
    }

    d->t_prime = t_new;
    d->f_per = f_new;
    recompute_ack_set(*d);
    ++d->round;
    r.status = evaluate_exit(*d, id, r.out);
    return r;
}

std::vector<protocol_message> leader_dispersal::on_late_ack(node_id_t sender,
                                                            message_id_t id,
                                                            uint32_t held_count) {
    dispersal* d = id < by_id_.size() && by_id_[id].begun ? &by_id_[id] : nullptr;
    if (d == nullptr || !d->done) {
        return {};
    }
    std::vector<protocol_message> out;
    if (held_count > d->held[sender]) {
        d->held[sender] = static_cast<uint8_t>(held_count);
        if (!ack_test(*d, sender) && d->held[sender] >= d->f_frozen) {
            ack_add(*d, sender);
            if (has_last_ && last_begun_ == id) {
                responsive_quorum_ = d->ack_count;
            }
            protocol_message m;
            m.type = protocol_message::kind::ack_update;
            m.sender = leader_id_;
            m.recipient = kBroadcast;
            m.id = id;
            m.count = d->ack_count;
            out.push_back(m);
        }
    }
    return out;
}

std::vector<protocol_message> leader_dispersal::catch_up(message_id_t id,
                                                         node_id_t node) {
    const dispersal* d = find(id);
    if (d == nullptr || !d->done || ack_test(*d, node)) {
        return {};
    }
    return {make_disseminate(id, node, 0, d->f_frozen)};
}

bool leader_dispersal::is_active(message_id_t id) const {
    const auto* d = find(id);
    return d != nullptr && !d->done;
}

bool leader_dispersal::is_done(message_id_t id) const {
    const auto* d = find(id);
    return d != nullptr && d->done;
}

uint32_t leader_dispersal::f_per(message_id_t id) const {
    const auto* d = find(id);
    return d ? d->f_per : 0;
}

uint32_t leader_dispersal::frozen_f_per(message_id_t id) const {
    const auto* d = find(id);
    return d ? d->f_frozen : 0;
}

uint32_t leader_dispersal::t_prime(message_id_t id) const {
    const auto* d = find(id);
    return d ? d->t_prime : 0;
}

uint32_t leader_dispersal::ack_count(message_id_t id) const {
    const auto* d = find(id);
    return d ? d->ack_count : 0;
}

bool leader_dispersal::in_ack_set(message_id_t id, node_id_t node) const {
    const auto* d = find(id);
    return d != nullptr && ack_test(*d, node);
}

uint32_t leader_dispersal::sent_count(message_id_t id, node_id_t node) const {
    const auto* d = find(id);
    return d ? d->sent[node] : 0;
}

uint32_t leader_dispersal::held_count(message_id_t id, node_id_t node) const {
    const auto* d = find(id);
    return d ? d->held[node] : 0;
}

uint32_t leader_dispersal::round(message_id_t id) const {
    const auto* d = find(id);
    return d ? d->round : 0;
}

storage_node::storage_node(const coding_params& params, node_id_t id)
    : params_(params), assignment_(partition(params)), id_(id) {
    if (id >= params.n_nodes) {
        throw config_error("storage_node: node id out of range");
    }
}

storage_node::slot& storage_node::at(message_id_t id) {
    if (id >= slots_.size()) {
        slots_.resize(id + 1);
    }
    return slots_[id];
}

const storage_node::slot* storage_node::find(message_id_t id) const {
    return id < slots_.size() ? &slots_[id] : nullptr;
}

protocol_message storage_node::on_disseminate(const protocol_message& msg) {
    const auto [lo, hi] = assignment_.block(id_);
    if (msg.frag_lo < lo || msg.frag_hi > hi || msg.frag_lo >= msg.frag_hi) {
        throw protocol_violation("storage_node: fragment slice outside own block");
    }
    slot& s = at(msg.id);
    const uint32_t a = msg.frag_lo - lo;
    const uint32_t b = msg.frag_hi - lo;
    const uint64_t range =
        (b >= 64 ? ~uint64_t{0} : (uint64_t{1} << b) - 1) ^ ((uint64_t{1} << a) - 1);
    s.mask |= range;

    protocol_message ack;
    ack.type = protocol_message::kind::ack;
    ack.sender = id_;
    ack.recipient = msg.sender;
    ack.id = msg.id;
    ack.count = static_cast<uint32_t>(std::popcount(s.mask));
    return ack;
}

size_t storage_node::on_ack_update(message_id_t id, uint32_t quorum_count) {
    slot& s = at(id);
    if (quorum_count <= s.quorum) {
        return 0;
    }
    s.quorum = quorum_count;
    return prune(id);
}

uint32_t storage_node::retention_rule(uint32_t max_faults, uint32_t quorum) {
    return ceil_div(max_faults + 1, quorum - max_faults);
}

size_t storage_node::prune(message_id_t id) {
    slot* s = id < slots_.size() ? &slots_[id] : nullptr;
    if (s == nullptr || s->quorum <= params_.max_faults) {
        return 0;  // retained-count rule undefined for Q <= F: keep everything
    }
    uint32_t r = retention_rule(params_.max_faults, s->quorum);
    if (testing::prune_under_retention() && r > 0) {
        --r;
    }
    size_t discarded = 0;
    while (static_cast<uint32_t>(std::popcount(s->mask)) > r) {
        const int top = 63 - std::countl_zero(s->mask);
        s->mask &= ~(uint64_t{1} << top);
        ++discarded;
    }
    return discarded;
}

uint32_t storage_node::held_count(message_id_t id) const {
    const slot* s = find(id);
    return s ? static_cast<uint32_t>(std::popcount(s->mask)) : 0;
}

uint64_t storage_node::held_mask(message_id_t id) const {
    const slot* s = find(id);
    return s ? s->mask : 0;
}

std::vector<uint32_t> storage_node::held_indices(message_id_t id) const {
    std::vector<uint32_t> out;
    const slot* s = find(id);
    if (s == nullptr) {
        return out;
    }
    const auto [base, _] = assignment_.block(id_);
    uint64_t m = s->mask;
    while (m != 0) {
        const int bit = std::countr_zero(m);
        out.push_back(base + static_cast<uint32_t>(bit));
        m &= m - 1;
    }
    return out;
}

uint32_t storage_node::highest_known_quorum(message_id_t id) const {
    const slot* s = find(id);
    return s ? s->quorum : 0;
}

}  // namespace eaid
