#include "eaid/baselines.hpp"

#include <algorithm>
#include <cassert>

namespace eaid::baselines {

namespace {

uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t shard_bytes(uint32_t message_len, uint16_t k) {
    return k == 0 ? 0 : (message_len + k - 1) / k;
}

}  // namespace

uint64_t node_holdings::bytes(uint32_t message_len) const {
    if (full_copy) {
        return message_len;
    }
    return frag_indices.size() * shard_bytes(message_len, k_data);
}

const node_holdings baseline_store::empty_{};

baseline_message baseline_store::on_message(const baseline_message& msg) {
    baseline_message ack;
    ack.sender = id_;
    ack.recipient = msg.sender;
    ack.id = msg.id;
    ack.round = msg.round;
    ack.frag_index = msg.frag_index;
    ack.k_data = msg.k_data;

    if (msg.type == baseline_message::kind::probe) {
        ack.type = baseline_message::kind::probe_ack;
        return ack;
    }

    if (msg.id >= slots_.size()) {
        slots_.resize(msg.id + 1);
    }
    node_holdings& h = slots_[msg.id];
    switch (msg.type) {
        case baseline_message::kind::fragment:
            if (!h.full_copy) {
                if (h.k_data != msg.k_data) {
                    // Re-encoded round: prior-scheme fragments are dead weight
                    // and get replaced.
                    h.frag_indices.clear();
                    h.k_data = msg.k_data;
                }
                auto it = std::lower_bound(h.frag_indices.begin(),
                                           h.frag_indices.end(), msg.frag_index);
                if (it == h.frag_indices.end() || *it != msg.frag_index) {
                    h.frag_indices.insert(it, msg.frag_index);
                }
            }
            break;
        case baseline_message::kind::full_copy:
            h.full_copy = true;
            h.frag_indices.clear();
            break;
        default:
            throw protocol_violation("baseline_store: unexpected message kind");
    }
    ack.type = baseline_message::kind::store_ack;
    return ack;
}

const node_holdings& baseline_store::holdings(message_id_t id) const {
    return id < slots_.size() ? slots_[id] : empty_;
}

// --- full replication fallback ---

fallback_leader::fallback_leader(uint32_t n_nodes, uint32_t max_faults,
                                 node_id_t leader_id)
    : n_(n_nodes), f_(max_faults), leader_(leader_id) {}

fallback_leader::entry& fallback_leader::at(message_id_t id) {
    if (id >= entries_.size()) {
        entries_.resize(id + 1);
    }
    return entries_[id];
}

std::vector<baseline_message> fallback_leader::begin_entry(message_id_t id) {
    entry& e = at(id);
    if (e.begun) {
        throw duplicate_dispersal("fallback: entry already begun");
    }
    e.begun = true;
    e.acked_frag.assign(n_, false);
    e.acked_full.assign(n_, false);
    e.acked_frag[leader_] = true;  // leader stores its own fragment directly
    e.frag_acks = 1;

    std::vector<baseline_message> out;
    for (node_id_t j = 0; j < n_; ++j) {
        if (j == leader_) {
            continue;
        }
        baseline_message m;
        m.type = baseline_message::kind::fragment;
        m.sender = leader_;
        m.recipient = j;
        m.id = id;
        m.frag_index = static_cast<uint16_t>(j);
        m.k_data = static_cast<uint16_t>(f_ + 1);
        m.round = 0;
        out.push_back(m);
    }
    return out;
}

round_result fallback_leader::on_ack(const baseline_message& ack) {
    entry& e = at(ack.id);
    if (!e.begun || e.done) {
        return {e.done ? dispersal_status::done : dispersal_status::pending, {}};
    }
    if (ack.round == 0) {
        if (!e.acked_frag[ack.sender]) {
            e.acked_frag[ack.sender] = true;
            ++e.frag_acks;
        }
        if (!e.full_phase && e.frag_acks == n_) {
            e.done = true;  // every node holds its fragment: coded commit
        }
    } else if (e.full_phase) {
        if (!e.acked_full[ack.sender]) {
            e.acked_full[ack.sender] = true;
            ++e.full_acks;
        }
        if (e.full_acks >= f_ + 1) {
            e.done = true;  // a quorum persisted the entire message
        }
    }
    return {e.done ? dispersal_status::done : dispersal_status::pending, {}};
}

round_result fallback_leader::on_timeout(message_id_t id) {
    entry& e = at(id);
    if (!e.begun || e.done) {
        return {dispersal_status::done, {}};
    }
    round_result r;
    ++e.rounds;
    if (!e.full_phase) {
        e.full_phase = true;
        e.acked_full[leader_] = true;  // the leader already has the message
        e.full_acks = 1;
    }
    for (node_id_t j = 0; j < n_; ++j) {
        if (j == leader_ || e.acked_full[j]) {
            continue;
        }
        baseline_message m;
        m.type = baseline_message::kind::full_copy;
        m.sender = leader_;
        m.recipient = j;
        m.id = id;
        m.round = e.rounds;
        r.out.push_back(m);
    }
    return r;
}

bool fallback_leader::committed_coded(message_id_t id) const {
    const entry& e = entries_[id];
    return e.done && !e.full_phase;
}

bool fallback_leader::fell_back(message_id_t id) const {
    return entries_[id].full_phase;
}

uint32_t fallback_leader::rounds(message_id_t id) const {
    return id < entries_.size() ? entries_[id].rounds : 0;
}

bool fallback_leader::is_done(message_id_t id) const {
    return id < entries_.size() && entries_[id].done;
}

// --- endangered fragment resharing ---

resharing_leader::resharing_leader(uint32_t n_nodes, uint32_t max_faults,
                                   node_id_t leader_id, uint64_t seed)
    : n_(n_nodes), f_(max_faults), leader_(leader_id), seed_(seed) {}

resharing_leader::entry& resharing_leader::at(message_id_t id) {
    if (id >= entries_.size()) {
        entries_.resize(id + 1);
    }
    return entries_[id];
}

std::vector<baseline_message> resharing_leader::begin_entry(message_id_t id) {
    entry& e = at(id);
    if (e.begun) {
        throw duplicate_dispersal("resharing: entry already begun");
    }
    e.begun = true;
    e.acked_frag.assign(n_, false);
    e.acked_frag[leader_] = true;
    e.frag_acks = 1;

    std::vector<baseline_message> out;
    for (node_id_t j = 0; j < n_; ++j) {
        if (j == leader_) {
            continue;
        }
        baseline_message m;
        m.type = baseline_message::kind::fragment;
        m.sender = leader_;
        m.recipient = j;
        m.id = id;
        m.frag_index = static_cast<uint16_t>(j);
        m.k_data = static_cast<uint16_t>(f_ + 1);
        m.round = 0;
        out.push_back(m);
    }
    return out;
}

round_result resharing_leader::on_ack(const baseline_message& ack) {
    entry& e = at(ack.id);
    if (!e.begun || e.done) {
        return {e.done ? dispersal_status::done : dispersal_status::pending, {}};
    }
    if (ack.round == 0) {
        if (!e.acked_frag[ack.sender]) {
            e.acked_frag[ack.sender] = true;
            ++e.frag_acks;
        }
        if (!e.resharing && e.frag_acks == n_) {
            e.done = true;
        }
    } else if (e.resharing) {
        // One ack per (target, endangered fragment) copy.
        for (size_t t = 0; t < e.targets.size(); ++t) {
            if (e.targets[t] != ack.sender) {
                continue;
            }
            for (size_t i = 0; i < e.endangered.size(); ++i) {
                if (e.endangered[i] == ack.frag_index) {
                    const size_t bit = t * e.endangered.size() + i;
                    if (!e.reshare_acked[bit]) {
                        e.reshare_acked[bit] = true;
                        ++e.reshare_acks;
                    }
                }
            }
        }
        if (e.reshare_acks >= e.reshare_acks_needed) {
            e.done = true;
        }
    }
    return {e.done ? dispersal_status::done : dispersal_status::pending, {}};
}

round_result resharing_leader::on_timeout(message_id_t id) {
    entry& e = at(id);
    if (!e.begun || e.done) {
        return {dispersal_status::done, {}};
    }
    round_result r;
    ++e.rounds;
    if (!e.resharing) {
        e.resharing = true;
        e.endangered.clear();
        for (node_id_t j = 0; j < n_; ++j) {
            if (!e.acked_frag[j]) {
                e.endangered.push_back(static_cast<uint16_t>(j));
            }
        }
        // F responsive nodes, picked by a seed-keyed shuffle order so runs
        // are reproducible.
        std::vector<node_id_t> responsive;
        for (node_id_t j = 0; j < n_; ++j) {
            if (e.acked_frag[j] && j != leader_) {
                responsive.push_back(j);
            }
        }
        std::sort(responsive.begin(), responsive.end(),
                  [&](node_id_t a, node_id_t b) {
                      return mix64(seed_ ^ (id * 0x51ul) ^ a) <
                             mix64(seed_ ^ (id * 0x51ul) ^ b);
                  });
        if (responsive.size() > f_) {
            responsive.resize(f_);
        }
        e.targets = responsive;
        e.reshare_acked.assign(e.targets.size() * e.endangered.size(), false);
        e.reshare_acks = 0;
        e.reshare_acks_needed =
            static_cast<uint32_t>(e.targets.size() * e.endangered.size());
        if (e.reshare_acks_needed == 0) {
            e.done = true;  // nothing endangered after late acks raced in
            return {dispersal_status::done, {}};
        }
    }
    for (size_t t = 0; t < e.targets.size(); ++t) {
        for (size_t i = 0; i < e.endangered.size(); ++i) {
            if (e.reshare_acked[t * e.endangered.size() + i]) {
                continue;
            }
            baseline_message m;
            m.type = baseline_message::kind::fragment;
            m.sender = leader_;
            m.recipient = e.targets[t];
            m.id = id;
            m.frag_index = e.endangered[i];
            m.k_data = static_cast<uint16_t>(f_ + 1);
            m.round = e.rounds;
            r.out.push_back(m);
        }
    }
    return r;
}

uint32_t resharing_leader::rounds(message_id_t id) const {
    return id < entries_.size() ? entries_[id].rounds : 0;
}

bool resharing_leader::is_done(message_id_t id) const {
    return id < entries_.size() && entries_[id].done;
}

std::vector<node_id_t> resharing_leader::reshare_targets(message_id_t id) const {
    return id < entries_.size() ? entries_[id].targets : std::vector<node_id_t>{};
}

// --- proactive encoding ---

std::pair<uint16_t, uint16_t> proactive_scheme(uint32_t n_nodes,
                                               uint32_t max_faults,
                                               uint32_t estimated_responsive) {
    const uint32_t f_est =
        estimated_responsive >= n_nodes ? 0 : n_nodes - estimated_responsive;
    int64_t k = static_cast<int64_t>(max_faults) + 1 - static_cast<int64_t>(f_est);
    k = std::clamp<int64_t>(k, 1, max_faults + 1);
    return {static_cast<uint16_t>(k), static_cast<uint16_t>(max_faults)};
}

proactive_leader::proactive_leader(uint32_t n_nodes, uint32_t max_faults,
                                   node_id_t leader_id)
    : n_(n_nodes), f_(max_faults), leader_(leader_id), estimate_(n_nodes) {
    for (node_id_t j = 0; j < n_; ++j) {
        last_responsive_.push_back(j);
    }
}

proactive_leader::entry& proactive_leader::at(message_id_t id) {
    if (id >= entries_.size()) {
        entries_.resize(id + 1);
    }
    return entries_[id];
}

proactive_round_outcome proactive_leader::issue_round(
    message_id_t id, entry& e, const std::vector<node_id_t>& targets) {
    const auto [k, m] =
        proactive_scheme(n_, f_, static_cast<uint32_t>(targets.size()));
    (void)m;
    e.k = k;
    e.targets = targets;
    e.responded.assign(n_, false);
    e.responded[leader_] = true;
    e.response_count = 1;

    proactive_round_outcome r;
    r.k_data = k;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == leader_) {
            continue;
        }
        baseline_message msg;
        msg.type = baseline_message::kind::fragment;
        msg.sender = leader_;
        msg.recipient = targets[i];
        msg.id = id;
        msg.frag_index = static_cast<uint16_t>(i);
        msg.k_data = k;
        msg.round = e.rounds;
        r.out.push_back(msg);
    }
    // Probe everyone outside the scheme: their replies count toward the
    // sample and let the estimate recover.
    for (node_id_t j = 0; j < n_; ++j) {
        if (j == leader_ ||
            std::find(targets.begin(), targets.end(), j) != targets.end()) {
            continue;
        }
        baseline_message probe;
        probe.type = baseline_message::kind::probe;
        probe.sender = leader_;
        probe.recipient = j;
        probe.id = id;
        probe.round = e.rounds;
        r.out.push_back(probe);
    }
    if (e.response_count >= e.prev_round_responses) {
        e.done = true;  // degenerate sample of one
    }
    r.status = e.done ? dispersal_status::done : dispersal_status::pending;
    return r;
}

proactive_round_outcome proactive_leader::begin_entry(message_id_t id) {
    entry& e = at(id);
    if (e.begun) {
        throw duplicate_dispersal("proactive: entry already begun");
    }
    e.begun = true;
    e.first_round_seen.assign(n_, false);
    e.first_round_seen[leader_] = true;
    e.first_round_responses = 1;

    // Targets: the leader plus estimate-1 nodes, preferring those seen
    // responsive most recently.
    std::vector<node_id_t> targets{leader_};
    for (node_id_t j : last_responsive_) {
        if (targets.size() >= estimate_) {
            break;
        }
        if (j != leader_) {
            targets.push_back(j);
        }
    }
    for (node_id_t j = 0; j < n_ && targets.size() < estimate_; ++j) {
        if (j != leader_ &&
            std::find(targets.begin(), targets.end(), j) == targets.end()) {
            targets.push_back(j);
        }
    }
    e.prev_round_responses = static_cast<uint32_t>(targets.size());
    return issue_round(id, e, targets);
}

round_result proactive_leader::on_response(const baseline_message& ack) {
    entry& e = at(ack.id);
    if (!e.begun) {
        return {};
    }
    if (ack.round == 0 && !e.window_closed && !e.first_round_seen[ack.sender]) {
        e.first_round_seen[ack.sender] = true;
        ++e.first_round_responses;
    }
    if (e.done) {
        return {dispersal_status::done, {}};
    }
    if (ack.round == e.rounds && !e.responded[ack.sender]) {
        e.responded[ack.sender] = true;
        ++e.response_count;
        if (e.response_count >= e.prev_round_responses) {
            e.done = true;  // responses met the previous sample
        }
    }
    return {e.done ? dispersal_status::done : dispersal_status::pending, {}};
}

void proactive_leader::close_estimation_window(message_id_t id) {
    entry& e = at(id);
    if (!e.begun || e.window_closed) {
        return;
    }
    e.window_closed = true;
    estimate_ = e.first_round_responses;
    last_responsive_.clear();
    for (node_id_t j = 0; j < n_; ++j) {
        if (e.first_round_seen[j]) {
            last_responsive_.push_back(j);
        }
    }
}

round_result proactive_leader::on_timeout(message_id_t id) {
    entry& e = at(id);
    if (!e.begun || e.done) {
        return {dispersal_status::done, {}};
    }
    // Re-encode for the nodes that answered the lapsed round; the new sample
    // to meet is their count.
    std::vector<node_id_t> responders;
    for (node_id_t j = 0; j < n_; ++j) {
        if (e.responded[j]) {
            responders.push_back(j);
        }
    }
    e.prev_round_responses = static_cast<uint32_t>(responders.size());
    ++e.rounds;
    auto out = issue_round(id, e, responders);
    return {out.status, std::move(out.out)};
}

uint16_t proactive_leader::scheme_k(message_id_t id) const {
    return id < entries_.size() ? entries_[id].k : 0;
}

uint32_t proactive_leader::rounds(message_id_t id) const {
    return id < entries_.size() ? entries_[id].rounds : 0;
}

bool proactive_leader::is_done(message_id_t id) const {
    return id < entries_.size() && entries_[id].done;
}

const std::vector<node_id_t>& proactive_leader::targets(message_id_t id) const {
    static const std::vector<node_id_t> none;
    return id < entries_.size() ? entries_[id].targets : none;
}

}  // namespace eaid::baselines
