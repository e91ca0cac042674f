#include "eaid/kv.hpp"

#include <algorithm>
#include <cassert>
#include <cinttypes>
#include <cstdio>
#include <memory>
#include <queue>
#include <set>

#include "eaid/sim/rng.hpp"

namespace eaid::kv {

std::vector<uint8_t> kv_command::serialize() const {
    std::vector<uint8_t> out;
    out.reserve(9 + key.size() + value.size());
    out.push_back(static_cast<uint8_t>(op));
    auto put32 = [&out](uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            out.push_back(static_cast<uint8_t>(v >> (8 * i)));
        }
    };
    put32(static_cast<uint32_t>(key.size()));
    out.insert(out.end(), key.begin(), key.end());
    put32(static_cast<uint32_t>(value.size()));
    out.insert(out.end(), value.begin(), value.end());
    return out;
}

kv_command kv_command::parse(std::span<const uint8_t> bytes) {
    auto get32 = [&bytes](size_t off) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(bytes[off + i]) << (8 * i);
        }
        return v;
    };
    if (bytes.size() < 9) {
        throw corruption_error("kv_command: truncated");
    }
    kv_command c;
    c.op = static_cast<op_t>(bytes[0]);
    const uint32_t klen = get32(1);
    if (bytes.size() < 9 + klen) {
        throw corruption_error("kv_command: truncated key");
    }
    c.key.assign(bytes.begin() + 5, bytes.begin() + 5 + klen);
    const uint32_t vlen = get32(5 + klen);
    if (bytes.size() < 9 + klen + vlen) {
        throw corruption_error("kv_command: truncated value");
    }
    c.value.assign(bytes.begin() + 9 + klen, bytes.begin() + 9 + klen + vlen);
    return c;
}

uint64_t log_slot::bytes() const {
    uint64_t b = 0;
    for (const auto& f : frags) {
        b += f.data.size();
    }
    return b;
}

std::vector<std::pair<uint32_t, uint32_t>> tier_table(uint32_t n_nodes,
                                                      uint32_t max_faults) {
    const uint32_t w2 = (3 * n_nodes + 3) / 4;  // ceil(3N/4)
    std::vector<std::pair<uint32_t, uint32_t>> t;
    t.emplace_back(n_nodes, 1);
    if (w2 < n_nodes) {
        t.emplace_back(w2, 2);
    }
    t.emplace_back(max_faults + 1, max_faults + 1);
    return t;
}

std::pair<uint32_t, uint32_t> tier_lookup(
    const std::vector<std::pair<uint32_t, uint32_t>>& table, uint32_t q) {
    for (const auto& row : table) {
        if (row.first <= q) {
            return row;
        }
    }
    return table.back();
}

raft_node::raft_node(const coding_params& params, node_id_t id, uint32_t delta)
    : params_(params),
      assignment_(partition(params)),
      id_(id),
      n_(params.n_nodes),
      f_(params.max_faults),
      delta_(delta),
      resp_est_(params.n_nodes),
      tiers_(tier_table(params.n_nodes, params.max_faults)) {
    log_.resize(1);   // sentinel at index 0, term 0
    plain_.resize(1);
    tracks_.resize(1);
    next_index_.assign(n_, 1);
}

void raft_node::note_violation(const std::string& v) { violations_.push_back(v); }

void raft_node::adopt_term(uint32_t term) {
    if (term > term_) {
        term_ = term;
        leader_ = false;
    }
}

void raft_node::become_leader(uint32_t new_term) {
    if (new_term <= term_) {
        new_term = term_ + 1;
    }
    term_ = new_term;
    leader_ = true;
    lead_t1_ = 0;
    lead_t2_ = 0;
    next_index_.assign(n_, last_index() + 1);
    tracks_.resize(log_.size());
    // Re-earn acknowledgment bookkeeping for the whole log; follower-side
    // max-merge keeps earlier (higher) thresholds safe.
    const auto [w, fper] =
        tier_lookup(tiers_, std::max(f_ + 1, resp_est_ > delta_ ? resp_est_ - delta_
                                                                : f_ + 1));
    for (uint64_t idx = 1; idx <= last_index(); ++idx) {
        track& t = tracks_[idx];
        t = track{};
        t.open = true;
        t.committed = idx <= commit_;
        t.w = w;
        t.f_per = fper;
        t.f_frozen = fper;
        t.held.assign(n_, 0);
        t.sent.assign(n_, 0);
        t.acked.assign(n_, false);
        t.held[id_] = static_cast<uint8_t>(log_[idx].frags.size());
        const uint32_t threshold = t.committed ? t.f_frozen : t.f_per;
        if (t.held[id_] >= threshold) {
            t.acked[id_] = true;
            t.ack_count = 1;
        }
        last_opened_ = idx;
    }
}

bool raft_node::recover_plaintext(const std::vector<const raft_node*>& peers) {
    for (uint64_t idx = 1; idx <= last_index(); ++idx) {
        if (plain_[idx].has_value()) {
            continue;
        }
        auto m = reconstruct(params_, peers, log_[idx].term, idx);
        if (m.has_value()) {
            plain_[idx] = std::move(*m);
            continue;
        }
        if (idx <= commit_) {
            note_violation("committed entry " + std::to_string(idx) +
                           " not reconstructable at promotion");
            return false;
        }
        // Unreconstructable uncommitted tail: nothing was promised for it.
        log_.resize(idx);
        plain_.resize(idx);
        tracks_.resize(idx);
        break;
    }
    apply_committed();
    return true;
}

uint64_t raft_node::start_append(std::vector<uint8_t> payload) {
    if (!leader_) {
        throw protocol_violation("start_append on a non-leader");
    }
    // Estimate follows the newest entry's ack set, late responses included.
    if (last_opened_ >= 1 && last_opened_ < tracks_.size() &&
        tracks_[last_opened_].open) {
        resp_est_ = tracks_[last_opened_].ack_count;
    }
    const uint32_t q =
        std::max(f_ + 1, resp_est_ > delta_ ? resp_est_ - delta_ : f_ + 1);
    const auto [w, fper] = tier_lookup(tiers_, q);

    const uint64_t idx = log_.size();
    auto frags = encode(params_, pack_tag(term_, idx), payload);
    const auto [lo, hi] = assignment_.block(id_);

    log_slot slot;
    slot.term = term_;
    for (uint32_t i = lo; i < lo + fper && i < hi; ++i) {
        slot.frags.push_back(frags[i]);
    }
    log_.push_back(std::move(slot));
    plain_.push_back(std::move(payload));

    track t;
    t.open = true;
    t.w = w;
    t.f_per = fper;
    t.held.assign(n_, 0);
    t.sent.assign(n_, 0);
    t.acked.assign(n_, false);
    t.held[id_] = static_cast<uint8_t>(fper);
    t.sent[id_] = static_cast<uint8_t>(fper);
    t.acked[id_] = true;
    t.ack_count = 1;
    tracks_.push_back(std::move(t));
    last_opened_ = idx;
    return idx;
}

uint32_t raft_node::slice_for(node_id_t, uint64_t idx) const {
    const track& t = tracks_[idx];
    if (t.committed || idx <= commit_) {
        if (idx <= lead_t2_) {
            return 1;
        }
        if (idx <= lead_t1_) {
            return 2;
        }
        return t.f_frozen != 0 ? t.f_frozen : t.f_per;
    }
    return t.f_per;
}

std::vector<fragment> raft_node::fragments_for(node_id_t j, uint64_t idx,
                                               uint32_t lo, uint32_t hi) const {
    // Deterministic re-encode from the retained plaintext; identical bytes
    // every time, so no fragment cache is needed.
    auto all = encode(params_, pack_tag(log_[idx].term, idx), *plain_[idx]);
    const auto [base, end] = assignment_.block(j);
    std::vector<fragment> out;
    for (uint32_t i = base + lo; i < base + hi && i < end; ++i) {
        out.push_back(std::move(all[i]));
    }
    return out;
}

std::optional<append_entries> raft_node::build_append(node_id_t j,
                                                      size_t max_entries) {
    if (!leader_ || j == id_) {
        return std::nullopt;
    }
    append_entries rpc;
    rpc.term = term_;
    rpc.leader = id_;
    rpc.leader_commit = commit_;
    rpc.t1 = lead_t1_;
    rpc.t2 = lead_t2_;
    const uint64_t from = std::min<uint64_t>(next_index_[j], last_index() + 1);
    rpc.prev_index = from - 1;
    rpc.prev_term = log_[from - 1].term;
    for (uint64_t idx = from; idx <= last_index() && rpc.entries.size() < max_entries;
         ++idx) {
        append_entry_payload p;
        p.term = log_[idx].term;
        p.index = idx;
        const uint32_t want = slice_for(j, idx);
        const uint32_t have = tracks_[idx].held[j];
        if (have < want) {
            p.frags = fragments_for(j, idx, have, want);
        }
        rpc.entries.push_back(std::move(p));
        tracks_[idx].sent[j] = static_cast<uint8_t>(std::max<uint32_t>(
            tracks_[idx].sent[j], want));
    }
    return rpc;
}

bool raft_node::on_append_response(const append_response& resp) {
    if (resp.term > term_) {
        adopt_term(resp.term);
        return true;  // stepped down
    }
    if (!leader_) {
        return false;
    }
    const node_id_t j = resp.from;
    if (!resp.success) {
        const uint64_t hint = resp.last_index + 1;
        next_index_[j] = std::max<uint64_t>(1, std::min(next_index_[j] - 1, hint));
        return false;
    }
    uint64_t highest = 0;
    for (const auto& [idx, cnt] : resp.held) {
        if (idx > last_index() || !tracks_[idx].open) {
            continue;
        }
        track& t = tracks_[idx];
        if (cnt > t.held[j]) {
            t.held[j] = static_cast<uint8_t>(cnt);
        }
        const uint32_t threshold = t.committed ? t.f_frozen : t.f_per;
        if (!t.acked[j] && t.held[j] >= threshold) {
            t.acked[j] = true;
            ++t.ack_count;
            update_thresholds(idx);
            if (!t.committed && t.ack_count >= t.w) {
                t.committed = true;
                t.f_frozen = t.f_per;
                resp_est_ = t.ack_count;
                advance_commit();
            }
        }
        highest = std::max(highest, idx);
    }
    if (highest >= next_index_[j]) {
        next_index_[j] = highest + 1;
    }
    return false;
}

void raft_node::on_append_timeout(uint64_t idx) {
    if (!leader_ || idx > last_index()) {
        return;
    }
    track& t = tracks_[idx];
    if (!t.open || t.committed) {
        return;
    }
    // Step down a tier for the acks actually seen.
    const auto [w, f_new] =
        tier_lookup(tiers_, std::max(f_ + 1, t.ack_count));
    t.w = w;
    ++t.rounds;
    if (f_new > t.f_per) {
        t.f_per = f_new;
        // Top up the leader's own slice.
        const uint32_t have = static_cast<uint32_t>(log_[idx].frags.size());
        if (have < f_new) {
            auto extra = fragments_for(id_, idx, have, f_new);
            for (auto& f : extra) {
                log_[idx].frags.push_back(std::move(f));
            }
        }
        t.held[id_] = static_cast<uint8_t>(log_[idx].frags.size());
        // Ack set re-derived under the raised threshold.
        t.ack_count = 0;
        for (node_id_t n = 0; n < n_; ++n) {
            t.acked[n] = t.held[n] >= t.f_per;
            if (t.acked[n]) {
                ++t.ack_count;
            }
        }
        // Followers owed fragments are picked up by the next build_append.
        for (node_id_t n = 0; n < n_; ++n) {
            if (n != id_) {
                next_index_[n] = std::min<uint64_t>(next_index_[n], idx);
            }
        }
    }
    if (t.ack_count >= t.w) {
        t.committed = true;
        t.f_frozen = t.f_per;
        resp_est_ = t.ack_count;
        advance_commit();
    }
}

void raft_node::update_thresholds(uint64_t m) {
    const uint32_t w34 = (3 * n_ + 3) / 4;
    const track& t = tracks_[m];
    if (t.ack_count >= w34 && m > lead_t1_) {
        lead_t1_ = m;
    }
    if (t.ack_count == n_ && m > lead_t2_) {
        lead_t2_ = m;
    }
    if (lead_t2_ > lead_t1_) {
        note_violation("leader thresholds inverted: T2 > T1");
    }
}

void raft_node::advance_commit() {
    while (commit_ + 1 <= last_index() && tracks_[commit_ + 1].committed) {
        ++commit_;
        newly_committed_.push_back(commit_);
    }
    apply_committed();
}

void raft_node::apply_committed() {
    while (last_applied_ < commit_) {
        const uint64_t idx = last_applied_ + 1;
        if (!plain_[idx].has_value()) {
            return;  // fragment-only holder: applies lazily after promotion
        }
        const auto cmd = kv_command::parse(*plain_[idx]);
        if (cmd.op == kv_command::op_t::put) {
            applied_[cmd.key] = cmd.value;
        }
        ++last_applied_;
    }
}

std::vector<uint64_t> raft_node::take_newly_committed() {
    auto out = std::move(newly_committed_);
    newly_committed_.clear();
    return out;
}

append_response raft_node::on_append_entries(const append_entries& rpc,
                                             bool do_prune) {
    append_response resp;
    resp.from = id_;
    if (rpc.term < term_) {
        resp.term = term_;
        resp.success = false;  // (1) stale leader
        resp.last_index = last_index();
        return resp;
    }
    adopt_term(rpc.term);
    resp.term = term_;
    if (rpc.prev_index > last_index() ||
        log_[rpc.prev_index].term != rpc.prev_term) {
        resp.success = false;  // (2) log mismatch
        resp.last_index = std::min(last_index(), rpc.prev_index - (rpc.prev_index > 0));
        return resp;
    }
    for (const auto& e : rpc.entries) {
        if (has_slot(e.index) && log_[e.index].term != e.term) {
            if (e.index <= commit_) {
                note_violation("conflict truncation below commit index");
            }
            log_.resize(e.index);  // (3) conflicting suffix discarded
            plain_.resize(e.index);
            if (tracks_.size() > e.index) {
                tracks_.resize(e.index);
            }
        }
        const message_id_t tag = pack_tag(e.term, e.index);
        for (const auto& f : e.frags) {
            if (f.message_id != tag) {
                resp.success = false;  // mistagged fragment
                resp.last_index = last_index();
                return resp;
            }
        }
        if (!has_slot(e.index)) {
            if (e.index != log_.size()) {
                resp.success = false;  // gap: leader will back up
                resp.last_index = last_index();
                return resp;
            }
            log_.push_back(log_slot{e.term, {}});
            plain_.emplace_back();
        }
        log_slot& s = log_[e.index];
        for (const auto& f : e.frags) {  // (4) persist, set-union by index
            auto it = std::lower_bound(
                s.frags.begin(), s.frags.end(), f.index,
                [](const fragment& a, uint16_t b) { return a.index < b; });
            if (it == s.frags.end() || it->index != f.index) {
                s.frags.insert(it, f);
            }
        }
        resp.held.emplace_back(e.index,
                               static_cast<uint32_t>(log_[e.index].frags.size()));
    }
    if (rpc.leader_commit > commit_) {
        commit_ = std::min(rpc.leader_commit, last_index());  // (5)
    }
    const uint64_t t1_before = my_t1_, t2_before = my_t2_;
    my_t1_ = std::max(my_t1_, rpc.t1);
    my_t2_ = std::max(my_t2_, rpc.t2);
    if (my_t1_ < t1_before || my_t2_ < t2_before || my_t2_ > my_t1_) {
        note_violation("follower thresholds regressed or inverted");
    }
    if (do_prune) {
        prune();
    }
    resp.success = true;
    resp.last_index = last_index();
    return resp;
}

size_t raft_node::prune() {
    size_t discarded = 0;
    const uint64_t t1 = leader_ ? lead_t1_ : my_t1_;
    const uint64_t t2 = leader_ ? lead_t2_ : my_t2_;
    auto prune_to = [&](uint64_t idx, size_t keep) {
        log_slot& s = log_[idx];
        if (s.frags.size() > keep) {
            discarded += s.frags.size() - keep;
            s.frags.resize(keep);  // sorted ascending: highest indices go first
        }
    };
    for (uint64_t idx = prune_swept_t2_ + 1; idx <= std::min(t2, last_index()); ++idx) {
        prune_to(idx, 1);
    }
    prune_swept_t2_ = std::min(t2, last_index());
    for (uint64_t idx = std::max(prune_swept_t1_, prune_swept_t2_) + 1;
         idx <= std::min(t1, last_index()); ++idx) {
        prune_to(idx, 2);
    }
    prune_swept_t1_ = std::max(prune_swept_t1_, std::min(t1, last_index()));
    // Tier 3 (bare quorum) allows up to F+1, which is the most a block slice
    // ever holds; nothing to discard there.
    return discarded;
}

uint64_t raft_node::storage_bytes() const {
    uint64_t b = 0;
    for (const auto& s : log_) {
        b += s.bytes();
    }
    return b;
}

uint64_t raft_node::slot_bytes(uint64_t idx) const {
    return idx < log_.size() ? log_[idx].bytes() : 0;
}

uint32_t raft_node::entry_rounds(uint64_t idx) const {
    return idx < tracks_.size() ? tracks_[idx].rounds : 0;
}

uint32_t raft_node::entry_f_per(uint64_t idx) const {
    return idx < tracks_.size() ? tracks_[idx].f_per : 0;
}

bool raft_node::entry_committed(uint64_t idx) const {
    return idx <= commit_;
}

std::string raft_node::applied_dump() const {
    std::string out;
    for (const auto& [k, v] : applied_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::optional<std::vector<uint8_t>> reconstruct(
    const coding_params& params, const std::vector<const raft_node*>& peers,
    uint32_t term, uint64_t idx) {
    const message_id_t tag = pack_tag(term, idx);
    std::vector<fragment> got;
    std::set<uint16_t> seen;
    for (const raft_node* p : peers) {
        if (!p->has_slot(idx)) {
            continue;
        }
        for (const auto& f : p->slot(idx).frags) {
            if (f.message_id == tag && seen.insert(f.index).second) {
                got.push_back(f);
                if (got.size() == params.data_shards()) {
                    return decode(params, got);
                }
            }
        }
    }
    return std::nullopt;
}

std::optional<node_id_t> pick_leader(const std::vector<const raft_node*>& alive) {
    const raft_node* best = nullptr;
    for (const raft_node* n : alive) {
        if (best == nullptr) {
            best = n;
            continue;
        }
        const auto key = [](const raft_node* p) {
            return std::make_tuple(p->term_at(p->last_index()), p->last_index());
        };
        if (key(n) > key(best) ||
            (key(n) == key(best) && n->id() < best->id())) {
            best = n;
        }
    }
    if (best == nullptr) {
        return std::nullopt;
    }
    return best->id();
}

// ---------------------------------------------------------------------------
// event-driven harness
// ---------------------------------------------------------------------------

namespace {

using sim::rng;
using sim::scenario_config;
using sim::stream;

struct kv_event {
    int64_t t = 0;
    uint8_t rank = 0;  // 0 entry boundary, 1 deliver, 2 timer
    node_id_t sender = 0;
    uint64_t seq = 0;
    uint8_t kind = 0;  // 0 entry_start, 1 ae, 2 resp, 3 append_timer, 4 heartbeat
    node_id_t from = 0, to = 0;
    std::shared_ptr<append_entries> ae;
    std::shared_ptr<append_response> resp;
    int64_t reply_ns = 0;
    uint64_t entry = 0;  // scenario entry or log index
    uint32_t round = 0;
};

struct kv_event_after {
    bool operator()(const kv_event& x, const kv_event& y) const {
        if (x.t != y.t) return x.t > y.t;
        if (x.rank != y.rank) return x.rank > y.rank;
        if (x.sender != y.sender) return x.sender > y.sender;
        return x.seq > y.seq;
    }
};

class kv_engine {
public:
    kv_engine(const scenario_config& cfg, const sim::trace_fn& trace)
        : cfg_(cfg),
          rng_{cfg.seed},
          trace_(trace),
          params_(coding_params::for_cluster(cfg.n_nodes, cfg.max_faults)) {
        for (node_id_t j = 0; j < cfg.n_nodes; ++j) {
            nodes_.emplace_back(params_, j, cfg.delta);
        }
        nodes_[0].become_leader(1);
        leader_id_ = 0;
        down_.assign(cfg.n_nodes, false);
        partitioned_.assign(cfg.n_nodes, false);
        cached_bytes_.assign(cfg.n_nodes, {});
        node_totals_.assign(cfg.n_nodes, 0);
        timeout_ns_ = static_cast<int64_t>(std::llround(cfg.timeout_ms * 1e6));
        spacing_ns_ = static_cast<int64_t>(std::llround(cfg.spacing_ms() * 1e6));
        hb_ns_ = static_cast<int64_t>(std::llround(cfg.hb_ms() * 1e6));
        metrics_.resize(cfg.num_entries);
        for (uint64_t e = 0; e < cfg.num_entries; ++e) {
            metrics_[e].entry_index = e;
        }
        entry_bytes_.assign(cfg.num_entries, 0);
        settled_.assign(cfg.num_entries, UINT64_MAX);
        submit_ns_.assign(cfg.num_entries, 0);
        xmit_.assign(cfg.num_entries + 1, 0);
        run_until_ = spacing_ns_ * static_cast<int64_t>(cfg.num_entries + 50);
    }

    sim::run_result run() {
        push_entry(0, 0);
        push_heartbeat(hb_ns_);
        while (!q_.empty()) {
            kv_event ev = q_.top();
            q_.pop();
            now_ = ev.t;
            switch (ev.kind) {
                case 0: handle_entry(ev.entry); break;
                case 1: handle_ae(ev); break;
                case 2: handle_resp(ev); break;
                case 3: handle_append_timer(ev); break;
                case 4: handle_heartbeat(); break;
            }
        }
        return finalize();
    }

private:
    kv_command make_command(uint64_t e) const {
        kv_command c;
        c.op = kv_command::op_t::put;
        c.key = "k" + std::to_string(rng_.bits(stream::kv, e, 1, 0) % 229);
        const uint64_t v = rng_.bits(stream::kv, e, 2, 0);
        char hex[20];
        std::snprintf(hex, sizeof(hex), "%016" PRIx64, v);
        c.value = hex;
        // Pad the value so the serialized command matches the configured
        // message size.
        const size_t overhead = 9 + c.key.size() + c.value.size();
        if (cfg_.message_size_bytes > overhead) {
            c.value.append(cfg_.message_size_bytes - overhead, 'x');
        }
        return c;
    }

    bool reachable(node_id_t n) const { return !down_[n] && !partitioned_[n]; }

    std::vector<const raft_node*> alive_peers() const {
        std::vector<const raft_node*> out;
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (!down_[j]) {
                out.push_back(&nodes_[j]);
            }
        }
        return out;
    }

    void trace_line(const char* variant, node_id_t from, node_id_t to, uint64_t id,
                    uint64_t term, uint64_t t1, uint64_t t2) {
        if (!trace_) {
            return;
        }
        char buf[220];
        std::snprintf(buf, sizeof(buf),
                      "%s,%u,%u,%s,%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64,
                      sim::format_ms(now_).c_str(), from, to, variant, id, term, t1,
                      t2);
        trace_(buf);
    }

    void push_entry(uint64_t e, int64_t at) {
        kv_event ev;
        ev.t = at;
        ev.rank = 0;
        ev.seq = ++seq_;
        ev.kind = 0;
        ev.entry = e;
        q_.push(ev);
    }

    void push_heartbeat(int64_t at) {
        kv_event ev;
        ev.t = at;
        ev.rank = 2;
        ev.seq = ++seq_;
        ev.kind = 4;
        q_.push(ev);
    }

    void send_ae(node_id_t from, node_id_t to, append_entries rpc, stream s,
                 uint64_t key_a, uint64_t key_b) {
        const int64_t rt =
            s == stream::latency
                ? rng_.latency_ns(key_a, key_b, xmit_at(key_b), cfg_.latency.mean_ms,
                                  cfg_.latency.stddev_ms)
                : 2 * rng_.one_way_ns(s, key_a, key_b, cfg_.latency.mean_ms,
                                      cfg_.latency.stddev_ms);
        kv_event ev;
        ev.t = now_ + rt / 2;
        ev.rank = 1;
        ev.sender = from;
        ev.seq = ++seq_;
        ev.kind = 1;
        ev.from = from;
        ev.to = to;
        ev.ae = std::make_shared<append_entries>(std::move(rpc));
        ev.reply_ns = rt - rt / 2;
        q_.push(ev);
        ++sent_;
    }

    uint64_t xmit_at(uint64_t idx) const {
        return idx < xmit_.size() ? xmit_[idx] : 0;
    }

    void send_resp(const kv_event& req, append_response resp) {
        kv_event ev;
        ev.t = now_ + req.reply_ns;
        ev.rank = 1;
        ev.sender = req.to;
        ev.seq = ++seq_;
        ev.kind = 2;
        ev.from = req.to;
        ev.to = req.from;
        ev.resp = std::make_shared<append_response>(std::move(resp));
        q_.push(ev);
        ++sent_;
    }

    // Rescans one node's per-slot bytes against the cache and books deltas.
    void refresh_storage(node_id_t n) {
        auto& cache = cached_bytes_[n];
        const raft_node& node = nodes_[n];
        const size_t hi = std::max<size_t>(cache.size(), node.last_index() + 1);
        if (cache.size() < hi) {
            cache.resize(hi, 0);
        }
        for (uint64_t idx = 1; idx < hi; ++idx) {
            const uint64_t now_b = node.slot_bytes(idx);
            const uint64_t old_b = cache[idx];
            if (now_b == old_b) {
                continue;
            }
            cache[idx] = now_b;
            node_totals_[n] += now_b - old_b;
            total_bytes_ += now_b - old_b;
            if (idx < index_entry_.size() && index_entry_[idx] != UINT64_MAX) {
                const uint64_t e = index_entry_[idx];
                entry_bytes_[e] += now_b - old_b;
                metrics_[e].last_storage_change_ns = now_;
            }
        }
    }

    void scripted_change(node_id_t crashed) {
        auto alive = alive_peers();
        if (alive.size() < cfg_.max_faults + 1) {
            // No reachable majority: the cluster stalls rather than making
            // unsafe progress. Later entries stay uncommitted.
            trace_line("election_stall", crashed, crashed, 0, 0, 0, 0);
            leader_id_ = UINT32_MAX;
            return;
        }
        auto choice = pick_leader(alive);
        uint32_t max_term = 0;
        for (const auto* p : alive) {
            max_term = std::max(max_term, p->current_term());
        }
        leader_id_ = *choice;
        nodes_[leader_id_].become_leader(max_term + 1);
        if (!nodes_[leader_id_].recover_plaintext(alive)) {
            violation("promotion reconstruction failed");
        }
        trace_line("leader_change", crashed, leader_id_, 0,
                   nodes_[leader_id_].current_term(), 0, 0);
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            refresh_storage(j);
        }
        if (cfg_.crash_revive) {
            pending_revive_.push_back(crashed);
        }
    }

    void handle_entry(uint64_t e) {
        // Revive nodes crashed before the previous boundary.
        for (node_id_t n : pending_revive_) {
            down_[n] = false;
            trace_line("revive", n, n, e, nodes_[n].current_term(), 0, 0);
        }
        pending_revive_.clear();

        for (const auto& p : cfg_.partitions) {
            if (p.nodes.empty()) continue;
            if (p.start_entry == e) {
                for (node_id_t n : p.nodes) partitioned_[n] = true;
            }
            if (p.end_entry == e) {
                for (node_id_t n : p.nodes) partitioned_[n] = false;
            }
        }

        bool crash_leader = cfg_.crash_leader_every != 0 && e != 0 &&
                            e % cfg_.crash_leader_every == 0;
        for (const auto& c : cfg_.crash_schedule) {
            if (c.entry == e && !down_[c.node]) {
                down_[c.node] = true;
                trace_line("crash", c.node, c.node, e, 0, 0, 0);
                if (c.node == leader_id_) {
                    scripted_change(c.node);
                }
            }
        }
        if (crash_leader && leader_id_ != UINT32_MAX && !down_[leader_id_]) {
            const node_id_t old = leader_id_;
            down_[old] = true;
            trace_line("crash", old, old, e, 0, 0, 0);
            scripted_change(old);
        }

        if (e >= 10) {
            if (settled_[e - 10] == UINT64_MAX) {
                settled_[e - 10] = entry_bytes_[e - 10];
            }
        }

        if (leader_id_ != UINT32_MAX && !down_[leader_id_]) {
            raft_node& leader = nodes_[leader_id_];
            const uint64_t idx = leader.start_append(make_command(e).serialize());
            if (index_entry_.size() <= idx) {
                index_entry_.resize(idx + 1, UINT64_MAX);
            }
            if (xmit_.size() <= idx) {
                xmit_.resize(idx + 1, 0);
            }
            index_entry_[idx] = e;
            entry_index_[e] = idx;
            submit_ns_[e] = now_;
            refresh_storage(leader_id_);
            trace_line("append", leader_id_, leader_id_, idx, leader.current_term(),
                       leader.t1(), leader.t2());
            broadcast_appends(16);
            arm_append_timer(idx, nodes_[leader_id_].entry_rounds(idx));
        }

        if (e + 1 < cfg_.num_entries) {
            push_entry(e + 1, now_ + spacing_ns_);
        }
    }

    void broadcast_appends(size_t batch) {
        raft_node& leader = nodes_[leader_id_];
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (j == leader_id_) {
                continue;
            }
            auto rpc = leader.build_append(j, batch);
            if (rpc.has_value()) {
                const uint64_t key = rpc->entries.empty()
                                         ? leader.last_index()
                                         : rpc->entries.front().index;
                send_ae(leader_id_, j, std::move(*rpc), stream::latency, j, key);
            }
        }
    }

    void arm_append_timer(uint64_t idx, uint32_t round) {
        kv_event ev;
        ev.t = now_ + timeout_ns_;
        ev.rank = 2;
        ev.seq = ++seq_;
        ev.kind = 3;
        ev.from = leader_id_;
        ev.entry = idx;
        ev.round = round;
        q_.push(ev);
    }

    void handle_ae(const kv_event& ev) {
        if (!reachable(ev.from) || !reachable(ev.to)) {
            ++dropped_;
            return;
        }
        bool do_prune = true;
        if (cfg_.prune_jitter) {
            do_prune = rng_.bits(stream::kv, ev.to, 0xbeef, ++prune_coin_) & 1;
        }
        auto resp = nodes_[ev.to].on_append_entries(*ev.ae, do_prune);
        refresh_storage(ev.to);
        if (cfg_.verify) {
            check_availability();
        }
        trace_line("append_entries", ev.from, ev.to,
                   ev.ae->entries.empty() ? 0 : ev.ae->entries.front().index,
                   ev.ae->term, ev.ae->t1, ev.ae->t2);
        send_resp(ev, std::move(resp));
    }

    void handle_resp(const kv_event& ev) {
        if (!reachable(ev.from) || !reachable(ev.to)) {
            ++dropped_;
            return;
        }
        if (ev.to != leader_id_ || down_[ev.to]) {
            return;
        }
        raft_node& leader = nodes_[ev.to];
        leader.on_append_response(*ev.resp);
        for (uint64_t idx : leader.take_newly_committed()) {
            record_commit(idx);
        }
        refresh_storage(ev.to);
    }

    void record_commit(uint64_t idx) {
        if (idx >= index_entry_.size() || index_entry_[idx] == UINT64_MAX) {
            return;
        }
        const uint64_t e = index_entry_[idx];
        auto& m = metrics_[e];
        if (m.dispersal_latency_ns >= 0) {
            return;
        }
        m.dispersal_latency_ns = now_ - submit_ns_[e];
        m.retransmission_rounds = nodes_[leader_id_].entry_rounds(idx);
        m.total_storage_bytes = total_bytes_;
        m.per_node_max_bytes =
            *std::max_element(node_totals_.begin(), node_totals_.end());
        m.commit_storage_bytes = entry_bytes_[e];
        trace_line("commit", leader_id_, leader_id_, idx,
                   nodes_[leader_id_].current_term(), nodes_[leader_id_].t1(),
                   nodes_[leader_id_].t2());
    }

    void handle_append_timer(const kv_event& ev) {
        if (ev.from != leader_id_ || down_[ev.from]) {
            return;
        }
        raft_node& leader = nodes_[leader_id_];
        const uint64_t idx = ev.entry;
        if (idx > leader.last_index() || leader.entry_committed(idx) ||
            leader.entry_rounds(idx) != ev.round) {
            return;
        }
        if (idx < xmit_.size()) {
            ++xmit_[idx];
        }
        leader.on_append_timeout(idx);
        for (uint64_t c : leader.take_newly_committed()) {
            record_commit(c);
        }
        refresh_storage(leader_id_);
        if (!leader.entry_committed(idx)) {
            broadcast_appends(16);
            arm_append_timer(idx, leader.entry_rounds(idx));
        }
    }

    void handle_heartbeat() {
        for (node_id_t n = 0; n < cfg_.n_nodes; ++n) {
            if (down_[n] || !nodes_[n].is_leader()) {
                continue;
            }
            for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
                if (j == n) {
                    continue;
                }
                auto rpc = nodes_[n].build_append(j, 64);
                if (rpc.has_value()) {
                    send_ae(n, j, std::move(*rpc), stream::heartbeat, j, ++hb_seq_);
                }
            }
        }
        if (now_ + hb_ns_ <= run_until_) {
            push_heartbeat(now_ + hb_ns_);
        }
    }

    void check_availability() {
        // Every committed entry must stay decodable despite any crash pattern
        // of total size F (already-down nodes included).
        uint32_t down_count = 0;
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            down_count += down_[j] ? 1 : 0;
        }
        const uint32_t extra = cfg_.max_faults > down_count
                                   ? cfg_.max_faults - down_count
                                   : 0;
        uint64_t max_commit = 0;
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (!down_[j]) {
                max_commit = std::max(max_commit, nodes_[j].commit_index());
            }
        }
        ++checks_;
        std::vector<node_id_t> alive;
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (!down_[j]) {
                alive.push_back(j);
            }
        }
        // All subsets of `alive` of size `extra`.
        std::vector<uint32_t> pick(extra);
        for (uint32_t i = 0; i < extra; ++i) {
            pick[i] = i;
        }
        const uint32_t an = static_cast<uint32_t>(alive.size());
        while (true) {
            std::vector<const raft_node*> survivors;
            for (uint32_t i = 0; i < an; ++i) {
                bool crashed = false;
                for (uint32_t p : pick) {
                    if (p == i) {
                        crashed = true;
                    }
                }
                if (!crashed) {
                    survivors.push_back(&nodes_[alive[i]]);
                }
            }
            for (uint64_t idx = 1; idx <= max_commit; ++idx) {
                uint32_t term = 0;
                for (const auto* s : survivors) {
                    if (s->has_slot(idx)) {
                        term = std::max(term, static_cast<uint32_t>(s->term_at(idx)));
                    }
                }
                std::set<uint16_t> distinct;
                for (const auto* s : survivors) {
                    if (!s->has_slot(idx)) {
                        continue;
                    }
                    const message_id_t tag = pack_tag(s->term_at(idx), idx);
                    for (const auto& f : s->slot(idx).frags) {
                        if (f.message_id == tag) {
                            distinct.insert(f.index);
                        }
                    }
                }
                if (distinct.size() < cfg_.max_faults + 1) {
                    violation("committed index " + std::to_string(idx) +
                              " lost reconstruction capacity");
                    return;
                }
            }
            if (extra == 0) {
                break;
            }
            int i = static_cast<int>(extra) - 1;
            while (i >= 0 && pick[i] == an - extra + i) {
                --i;
            }
            if (i < 0) {
                break;
            }
            ++pick[i];
            for (uint32_t j2 = i + 1; j2 < extra; ++j2) {
                pick[j2] = pick[j2 - 1] + 1;
            }
        }
    }

    void violation(const std::string& what) {
        ++violations_;
        if (first_violation_.empty()) {
            first_violation_ = what;
        }
    }

    sim::run_result finalize() {
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            refresh_storage(j);
        }
        sim::run_result r;
        for (uint64_t e = 0; e < cfg_.num_entries; ++e) {
            metrics_[e].per_entry_final_storage_bytes = entry_bytes_[e];
            metrics_[e].settled_storage_bytes =
                settled_[e] == UINT64_MAX ? entry_bytes_[e] : settled_[e];
        }
        r.entries = std::move(metrics_);
        r.final_total_bytes = total_bytes_;
        r.messages_sent = sent_;
        r.messages_dropped = dropped_;
        r.safety_checks = checks_;

        // Invariant sweeps: thresholds, log matching, state machine safety.
        for (const auto& n : nodes_) {
            for (const auto& v : n.violations()) {
                violation("node " + std::to_string(n.id()) + ": " + v);
            }
        }
        check_log_matching();
        build_dumps(r);
        r.safety_violations = violations_;
        r.first_violation = first_violation_;
        return r;
    }

    void check_log_matching() {
        for (node_id_t a = 0; a < cfg_.n_nodes; ++a) {
            for (node_id_t b = a + 1; b < cfg_.n_nodes; ++b) {
                const uint64_t hi =
                    std::min(nodes_[a].last_index(), nodes_[b].last_index());
                bool agreed_above = false;
                for (uint64_t idx = hi; idx >= 1; --idx) {
                    const bool eq = nodes_[a].term_at(idx) == nodes_[b].term_at(idx);
                    if (agreed_above && !eq) {
                        violation("log matching violated at index " +
                                  std::to_string(idx));
                        break;
                    }
                    agreed_above = agreed_above || eq;
                }
            }
        }
    }

    void build_dumps(sim::run_result& r) {
        uint64_t max_commit = 0;
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (!down_[j]) {
                max_commit = std::max(max_commit, nodes_[j].commit_index());
            }
        }
        // Replay oracle over the committed prefix, in log order.
        std::map<std::string, std::string> oracle;
        auto peers = alive_peers();
        std::vector<std::optional<kv_command>> cmds(max_commit + 1);
        for (uint64_t idx = 1; idx <= max_commit; ++idx) {
            uint32_t term = 0;
            for (const auto* p : peers) {
                if (p->has_slot(idx)) {
                    term = std::max(term, p->term_at(idx));
                }
            }
            auto m = reconstruct(params_, peers, term, idx);
            if (!m.has_value()) {
                violation("oracle could not reconstruct committed index " +
                          std::to_string(idx));
                continue;
            }
            cmds[idx] = kv_command::parse(*m);
        }
        auto replay_to = [&](uint64_t commit) {
            std::map<std::string, std::string> s;
            for (uint64_t idx = 1; idx <= commit && idx < cmds.size(); ++idx) {
                if (cmds[idx] && cmds[idx]->op == kv_command::op_t::put) {
                    s[cmds[idx]->key] = cmds[idx]->value;
                }
            }
            return s;
        };
        oracle = replay_to(max_commit);
        std::string odump;
        for (const auto& [k, v] : oracle) {
            odump += k + "=" + v + "\n";
        }
        r.oracle_dump = odump;

        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            if (down_[j]) {
                r.applied_dumps.push_back("");
                continue;
            }
            // Materialize the node's applied state through its own commit
            // index (the snapshot path for fragment-only followers).
            const auto expect = replay_to(nodes_[j].commit_index());
            std::string dump;
            for (const auto& [k, v] : expect) {
                dump += k + "=" + v + "\n";
            }
            r.applied_dumps.push_back(dump);
            if (nodes_[j].is_leader()) {
                // The leader applied eagerly; its live map must match the
                // replayed prefix exactly.
                if (nodes_[j].applied_dump() != dump) {
                    violation("leader applied state diverged from replay");
                }
            }
        }
    }

    const scenario_config& cfg_;
    rng rng_;
    sim::trace_fn trace_;
    coding_params params_;
    std::vector<raft_node> nodes_;
    std::vector<bool> down_, partitioned_;
    std::vector<node_id_t> pending_revive_;
    node_id_t leader_id_ = 0;
    std::priority_queue<kv_event, std::vector<kv_event>, kv_event_after> q_;
    int64_t now_ = 0;
    uint64_t seq_ = 0;
    int64_t timeout_ns_ = 0, spacing_ns_ = 0, hb_ns_ = 0, run_until_ = 0;
    uint64_t sent_ = 0, dropped_ = 0, hb_seq_ = 0, prune_coin_ = 0;
    uint64_t checks_ = 0, violations_ = 0;
    std::string first_violation_;
    std::vector<sim::entry_metrics> metrics_;
    std::vector<uint64_t> entry_bytes_, settled_, xmit_;
    std::vector<int64_t> submit_ns_;
    std::vector<uint64_t> index_entry_;
    std::map<uint64_t, uint64_t> entry_index_;
    std::vector<std::vector<uint64_t>> cached_bytes_;
    std::vector<uint64_t> node_totals_;
    uint64_t total_bytes_ = 0;
};

}  // namespace

sim::run_result run_kv_scenario(const sim::scenario_config& config,
                                const sim::trace_fn& trace) {
    kv_engine eng(config, trace);
    return eng.run();
}

}  // namespace eaid::kv
