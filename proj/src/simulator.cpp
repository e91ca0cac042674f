#include "eaid/simulator.hpp"

#include <algorithm>
#include <cassert>
#include <cinttypes>
#include <cstdio>
#include <queue>
#include <set>

#include "eaid/baselines.hpp"
#include "eaid/kv.hpp"

namespace eaid::sim {

std::string to_string(protocol_kind p) {
    switch (p) {
        case protocol_kind::eaid: return "eaid";
        case protocol_kind::full_fallback: return "full_fallback";
        case protocol_kind::resharing: return "resharing";
        case protocol_kind::proactive: return "proactive";
        case protocol_kind::eaid_kv: return "eaid_kv";
    }
    return "?";
}

void scenario_config::validate() const {
    if (n_nodes == 0 || n_nodes != 2 * max_faults + 1) {
        throw config_error("scenario: n_nodes must equal 2*max_faults + 1");
    }
    if (num_entries < 1) {
        throw config_error("scenario: num_entries must be >= 1");
    }
    if (timeout_ms <= 0) {
        throw config_error("scenario: timeout_ms must be positive");
    }
    if (message_size_bytes == 0) {
        throw config_error("scenario: message_size_bytes must be positive");
    }
    if (latency.mean_ms <= 0 || latency.stddev_ms < 0) {
        throw config_error("scenario: latency model must have positive mean");
    }
    std::vector<std::vector<std::pair<uint64_t, uint64_t>>> spans(n_nodes);
    for (const auto& p : partitions) {
        if (p.nodes.empty()) {
            continue;  // explicit no-op
        }
        if (p.nodes.size() > max_faults) {
            throw config_error("scenario: partition node_set larger than max_faults");
        }
        if (p.start_entry >= p.end_entry || p.end_entry > num_entries) {
            throw config_error("scenario: partition window out of run bounds");
        }
        for (node_id_t n : p.nodes) {
            if (n >= n_nodes) {
                throw config_error("scenario: partition node id out of range");
            }
            if (n == 0) {
                throw config_error("scenario: node 0 (the leader) cannot be partitioned");
            }
            for (const auto& [a, b] : spans[n]) {
                if (p.start_entry < b && a < p.end_entry) {
                    throw config_error("scenario: overlapping partitions on one node");
                }
            }
            spans[n].emplace_back(p.start_entry, p.end_entry);
        }
    }
    if (protocol != protocol_kind::eaid_kv &&
        (!crash_schedule.empty() || crash_leader_every != 0)) {
        throw config_error("scenario: crash schedules require protocol eaid_kv");
    }
    for (const auto& c : crash_schedule) {
        if (c.node >= n_nodes || c.entry >= num_entries) {
            throw config_error("scenario: crash_schedule out of range");
        }
    }
    if (verify && n_nodes > 7) {
        throw config_error("scenario: verify mode requires n_nodes <= 7");
    }
}

std::string format_ms(int64_t ns) {
    if (ns < 0) {
        return "-1";
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%" PRId64 ".%06" PRId64, ns / 1'000'000,
                  ns % 1'000'000);
    return buf;
}

std::string to_csv(const scenario_config& config, const run_result& result) {
    std::string out =
        "entry_index,protocol,dispersal_latency_ms,retransmission_rounds,"
        "total_storage_bytes,per_node_max_bytes,per_entry_final_storage_bytes\n";
    const std::string proto = to_string(config.protocol);
    for (const auto& e : result.entries) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%" PRIu64 ",%s,%s,%u,%" PRIu64 ",%" PRIu64
                      ",%" PRIu64 "\n",
                      e.entry_index, proto.c_str(),
                      format_ms(e.dispersal_latency_ns).c_str(),
                      e.retransmission_rounds, e.total_storage_bytes,
                      e.per_node_max_bytes, e.per_entry_final_storage_bytes);
        out += buf;
    }
    return out;
}

namespace {

constexpr uint64_t kSettleLag = 10;
constexpr uint64_t kMaxCatchupPerTick = 2000;

struct wire {
    uint8_t type = 0;
    node_id_t sender = 0;
    node_id_t recipient = 0;
    uint64_t entry = 0;
    uint32_t a = 0, b = 0, c = 0;
    int64_t reply_ns = 0;  // return-leg delay a reply to this message uses
};

struct event {
    int64_t t = 0;
    // Tie rank: entry boundaries first, then deliveries, then timers.
    uint8_t rank = 0;
    node_id_t sender = 0;
    uint64_t seq = 0;
    uint8_t kind = 0;  // 0 entry_start, 1 deliver, 2 timer
    wire w;
    uint64_t entry = 0;
    uint32_t round = 0;
};

struct event_after {
    bool operator()(const event& x, const event& y) const {
        if (x.t != y.t) return x.t > y.t;
        if (x.rank != y.rank) return x.rank > y.rank;
        if (x.sender != y.sender) return x.sender > y.sender;
        return x.seq > y.seq;
    }
};

class engine;

class dispersal_adapter {
public:
    virtual ~dispersal_adapter() = default;
    virtual void entry_start(uint64_t e) = 0;
    virtual void deliver(const wire& w) = 0;
    virtual void timer(uint64_t e, uint32_t round) = 0;
    virtual void tick(uint64_t t) = 0;
    virtual void heal() = 0;
    virtual const char* wire_name(uint8_t type) const = 0;
    // Brute-force reconstructability check for one committed entry.
    virtual void verify_entry(uint64_t e) = 0;
};

class engine {
public:
    engine(const scenario_config& cfg, const trace_fn& trace)
        : cfg_(cfg),
          rng_{cfg.seed},
          trace_(trace),
          partitioned_(cfg.n_nodes, false),
          node_bytes_(cfg.n_nodes, 0) {
        timeout_ns_ = static_cast<int64_t>(std::llround(cfg.timeout_ms * 1e6));
        spacing_ns_ = static_cast<int64_t>(std::llround(cfg.spacing_ms() * 1e6));
        const uint64_t e = cfg.num_entries;
        metrics_.resize(e);
        for (uint64_t i = 0; i < e; ++i) {
            metrics_[i].entry_index = i;
        }
        entry_bytes_.assign(e, 0);
        settled_.assign(e, UINT64_MAX);
        start_ns_.assign(e, 0);
    }

    void attach(dispersal_adapter* ad) { ad_ = ad; }

    void run() {
        push_entry_start(0, 0);
        while (!q_.empty()) {
            event ev = q_.top();
            q_.pop();
            now_ = ev.t;
            switch (ev.kind) {
                case 0:
                    handle_entry_start(ev.entry);
                    break;
                case 1:
                    route(ev.w);
                    break;
                case 2:
                    ad_->timer(ev.entry, ev.round);
                    break;
            }
            if (cfg_.verify && !touched_.empty()) {
                for (uint64_t e : touched_) {
                    ad_->verify_entry(e);
                }
                touched_.clear();
            }
        }
        finalize();
    }

    // --- services for adapters ---

    int64_t now() const { return now_; }
    int64_t timeout_ns() const { return timeout_ns_; }
    const rng& rand() const { return rng_; }

    // Request leg: samples one round trip per (recipient, entry, round);
    // the request arrives after half of it and carries the other half for
    // the reply.
    void send_request(const wire& w, uint32_t xmit_round) {
        const int64_t rt =
            rng_.latency_ns(w.recipient, w.entry, xmit_round, cfg_.latency.mean_ms,
                            cfg_.latency.stddev_ms);
        wire out = w;
        out.reply_ns = rt - rt / 2;
        push_deliver(out, rt / 2);
        ++sent_;
    }

    void send_reply(const wire& request, wire reply) {
        reply.reply_ns = 0;
        push_deliver(reply, request.reply_ns);
        ++sent_;
    }

    void send_broadcast(wire w) {
        w.recipient = kBroadcast;
        const int64_t leg =
            rng_.one_way_ns(stream::broadcast, w.entry, ++bcast_seq_,
                            cfg_.latency.mean_ms, cfg_.latency.stddev_ms);
        push_deliver(w, leg);
    }

    void arm_timer(uint64_t entry, uint32_t round, int64_t delay_ns) {
        event ev;
        ev.t = now_ + delay_ns;
        ev.rank = 2;
        ev.sender = 0;
        ev.seq = ++seq_;
        ev.kind = 2;
        ev.entry = entry;
        ev.round = round;
        q_.push(ev);
    }

    void storage_delta(uint64_t entry, node_id_t node, int64_t delta) {
        if (delta == 0) {
            return;
        }
        entry_bytes_[entry] += delta;
        node_bytes_[node] += delta;
        total_bytes_ += delta;
        metrics_[entry].last_storage_change_ns = now_;
    }

    void entry_committed(uint64_t e, uint32_t rounds) {
        auto& m = metrics_[e];
        m.dispersal_latency_ns = now_ - start_ns_[e];
        m.retransmission_rounds = rounds;
        m.total_storage_bytes = total_bytes_;
        m.per_node_max_bytes = *std::max_element(node_bytes_.begin(), node_bytes_.end());
        m.commit_storage_bytes = entry_bytes_[e];
        trace_line("commit", 0, 0, e, rounds, 0, 0);
    }

    void touched(uint64_t e) {
        if (cfg_.verify) {
            touched_.push_back(e);
        }
    }

    void report_violation(const std::string& what) {
        ++violations_;
        if (first_violation_.empty()) {
            first_violation_ = what;
        }
    }
    void count_check() { ++checks_; }

    bool partitioned(node_id_t n) const { return partitioned_[n]; }

    void trace_line(const char* variant, node_id_t from, node_id_t to, uint64_t id,
                    uint64_t a, uint64_t b, uint64_t c) {
        if (!trace_) {
            return;
        }
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "%s,%u,%u,%s,%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%" PRIu64,
                      format_ms(now_).c_str(), from, to, variant, id, a, b, c);
        trace_(buf);
    }

    run_result result() && {
        run_result r;
        r.entries = std::move(metrics_);
        r.final_total_bytes = total_bytes_;
        r.messages_sent = sent_;
        r.messages_delivered = delivered_;
        r.messages_dropped = dropped_;
        r.safety_checks = checks_;
        r.safety_violations = violations_;
        r.first_violation = first_violation_;
        return r;
    }

    uint64_t entry_bytes(uint64_t e) const { return entry_bytes_[e]; }

private:
    void push_deliver(const wire& w, int64_t delay_ns) {
        event ev;
        ev.t = now_ + delay_ns;
        ev.rank = 1;
        ev.sender = w.sender;
        ev.seq = ++seq_;
        ev.kind = 1;
        ev.w = w;
        q_.push(ev);
    }

    void push_entry_start(uint64_t e, int64_t at) {
        event ev;
        ev.t = at;
        ev.rank = 0;
        ev.sender = 0;
        ev.seq = ++seq_;
        ev.kind = 0;
        ev.entry = e;
        q_.push(ev);
    }

    void route(const wire& w) {
        if (w.recipient == kBroadcast) {
            if (partitioned_[w.sender]) {
                return;
            }
            trace_line(ad_->wire_name(w.type), w.sender, kBroadcast, w.entry, w.a,
                       w.b, w.c);
            for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
                if (partitioned_[j]) {
                    continue;
                }
                wire each = w;
                each.recipient = j;
                ad_->deliver(each);
            }
            return;
        }
        if (partitioned_[w.sender] || partitioned_[w.recipient]) {
            ++dropped_;
            trace_line("drop", w.sender, w.recipient, w.entry, w.type, 0, 0);
            return;
        }
        trace_line(ad_->wire_name(w.type), w.sender, w.recipient, w.entry, w.a, w.b,
                   w.c);
        ++delivered_;
        ad_->deliver(w);
    }

    void handle_entry_start(uint64_t e) {
        bool healed = false;
        for (const auto& p : cfg_.partitions) {
            if (p.nodes.empty()) {
                continue;
            }
            if (p.start_entry == e) {
                for (node_id_t n : p.nodes) {
                    partitioned_[n] = true;
                }
                trace_line("partition_on", 0, 0, e, p.nodes.size(), 0, 0);
            }
            if (p.end_entry == e) {
                for (node_id_t n : p.nodes) {
                    partitioned_[n] = false;
                }
                trace_line("partition_off", 0, 0, e, p.nodes.size(), 0, 0);
                healed = true;
            }
        }
        if (healed) {
            ad_->heal();
        }
        if (e >= kSettleLag) {
            const uint64_t old = e - kSettleLag;
            if (settled_[old] == UINT64_MAX) {
                settled_[old] = entry_bytes_[old];
            }
        }
        ad_->tick(e);
        start_ns_[e] = now_;
        trace_line("entry_start", 0, 0, e, 0, 0, 0);
        ad_->entry_start(e);
        if (e + 1 < cfg_.num_entries) {
            push_entry_start(e + 1, now_ + spacing_ns_);
        }
    }

    void finalize() {
        for (uint64_t e = 0; e < cfg_.num_entries; ++e) {
            metrics_[e].per_entry_final_storage_bytes = entry_bytes_[e];
            metrics_[e].settled_storage_bytes =
                settled_[e] == UINT64_MAX ? entry_bytes_[e] : settled_[e];
        }
    }

    const scenario_config& cfg_;
    rng rng_;
    trace_fn trace_;
    std::priority_queue<event, std::vector<event>, event_after> q_;
    int64_t now_ = 0;
    uint64_t seq_ = 0;
    int64_t timeout_ns_ = 0;
    int64_t spacing_ns_ = 0;
    std::vector<bool> partitioned_;
    std::vector<entry_metrics> metrics_;
    std::vector<uint64_t> entry_bytes_, node_bytes_, settled_;
    std::vector<int64_t> start_ns_;
    uint64_t total_bytes_ = 0;
    uint64_t sent_ = 0, delivered_ = 0, dropped_ = 0, bcast_seq_ = 0;
    uint64_t checks_ = 0, violations_ = 0;
    std::string first_violation_;
    std::vector<uint64_t> touched_;
    dispersal_adapter* ad_ = nullptr;
};

// Deterministic synthetic payload for entry `e`; regenerable on demand so
// nothing stores message bytes.
std::vector<uint8_t> entry_payload(const rng& r, uint64_t e, uint32_t len) {
    std::vector<uint8_t> out(len);
    for (uint32_t i = 0; i < len; i += 8) {
        const uint64_t word = r.bits(stream::payload, e, i / 8, 0);
        for (uint32_t j = 0; j < 8 && i + j < len; ++j) {
            out[i + j] = static_cast<uint8_t>(word >> (8 * j));
        }
    }
    return out;
}

// Enumerates all crash subsets of size exactly F (smaller subsets are
// dominated) and applies `ok` to the surviving node set; returns false with
// the failing subset description if any check fails.
template <typename SurvivorCheck>
bool for_all_crash_sets(uint32_t n, uint32_t f, SurvivorCheck ok) {
    std::vector<uint32_t> pick(f);
    std::vector<bool> crashed(n, false);
    // Iterative k-combination enumeration.
    for (uint32_t i = 0; i < f; ++i) {
        pick[i] = i;
    }
    while (true) {
        std::fill(crashed.begin(), crashed.end(), false);
        for (uint32_t i : pick) {
            crashed[i] = true;
        }
        if (!ok(crashed)) {
            return false;
        }
        int i = static_cast<int>(f) - 1;
        while (i >= 0 && pick[i] == n - f + i) {
            --i;
        }
        if (i < 0) {
            return true;
        }
        ++pick[i];
        for (uint32_t j = i + 1; j < f; ++j) {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

// ---------------------------------------------------------------------------
// elastic dispersal adapter
// ---------------------------------------------------------------------------

class eaid_adapter final : public dispersal_adapter {
public:
    eaid_adapter(engine& eng, const scenario_config& cfg)
        : eng_(eng),
          cfg_(cfg),
          params_(coding_params::for_cluster(cfg.n_nodes, cfg.max_faults)),
          leader_(params_, 0, cfg.delta),
          shard_(params_.shard_len(cfg.message_size_bytes)) {
        for (node_id_t j = 0; j < cfg.n_nodes; ++j) {
            nodes_.emplace_back(params_, j);
        }
        xmit_.assign(cfg.num_entries, 0);
        retry_exp_.assign(cfg.num_entries, 0);
    }

    const char* wire_name(uint8_t type) const override {
        switch (type) {
            case 0: return "disseminate";
            case 1: return "ack";
            case 2: return "ack_update";
        }
        return "?";
    }

    void entry_start(uint64_t e) override {
        dispatch(e, leader_.begin_disperse(e));
        eng_.arm_timer(e, 0, eng_.timeout_ns());
        incomplete_.insert(e);
    }

    void deliver(const wire& w) override {
        switch (w.type) {
            case 0:
                deliver_disseminate(w);
                break;
            case 1:
                deliver_ack(w);
                break;
            case 2: {
                const uint64_t before = nodes_[w.recipient].held_count(w.entry);
                nodes_[w.recipient].on_ack_update(w.entry, w.a);
                const uint64_t after = nodes_[w.recipient].held_count(w.entry);
                eng_.storage_delta(w.entry, w.recipient,
                                   (static_cast<int64_t>(after) - static_cast<int64_t>(before)) *
                                       static_cast<int64_t>(shard_));
                eng_.touched(w.entry);
                break;
            }
        }
    }

    void timer(uint64_t e, uint32_t round) override {
        if (leader_.is_done(e) || leader_.round(e) != round) {
            return;  // stale timer
        }
        ++xmit_[e];
        auto res = leader_.on_timeout(e);
        dispatch(e, res.out);
        if (res.status == dispersal_status::done) {
            eng_.entry_committed(e, leader_.round(e));
            schedule_retry(e, 1);
        } else {
            eng_.arm_timer(e, leader_.round(e), eng_.timeout_ns());
        }
    }

    void tick(uint64_t t) override {
        uint64_t budget = kMaxCatchupPerTick;
        while (budget > 0 && !retry_q_.empty() && retry_q_.top().first <= t) {
            const uint64_t e = retry_q_.top().second;
            retry_q_.pop();
            if (!incomplete_.count(e) || !leader_.is_done(e)) {
                continue;
            }
            ++xmit_[e];
            bool sent = false;
            for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
                for (const auto& pm : leader_.catch_up(e, j)) {
                    send_disseminate(e, pm);
                    sent = true;
                }
            }
            if (sent) {
                --budget;
            }
            retry_exp_[e] = std::min<uint8_t>(retry_exp_[e] + 1, 10);
            retry_q_.emplace(t + (uint64_t{1} << retry_exp_[e]), e);
        }
    }

    void heal() override {
        // Re-arm every incomplete entry for immediate catch-up; backoff
        // restarts so freshly reachable nodes are served promptly.
        std::priority_queue<std::pair<uint64_t, uint64_t>,
                            std::vector<std::pair<uint64_t, uint64_t>>,
                            std::greater<>>
            fresh;
        for (uint64_t e : incomplete_) {
            retry_exp_[e] = 0;
            fresh.emplace(0, e);
        }
        retry_q_ = std::move(fresh);
    }

    void verify_entry(uint64_t e) override {
        if (!leader_.is_done(e)) {
            return;
        }
        eng_.count_check();
        std::vector<uint32_t> counts(cfg_.n_nodes);
        for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
            counts[j] = nodes_[j].held_count(e);
        }
        const uint32_t need = cfg_.max_faults + 1;
        const bool ok = for_all_crash_sets(
            cfg_.n_nodes, cfg_.max_faults, [&](const std::vector<bool>& crashed) {
                uint32_t distinct = 0;
                for (node_id_t j = 0; j < cfg_.n_nodes; ++j) {
                    if (!crashed[j]) {
                        distinct += counts[j];
                    }
                }
                return distinct >= need;
            });
        if (!ok) {
            eng_.report_violation("entry " + std::to_string(e) +
                                  ": a crash set of size F leaves fewer than F+1 fragments");
        }
        // Byte-level spot check: decode from the first F+1 actually-held
        // indices against the regenerated payload.
        const auto payload = entry_payload(eng_.rand(), e, cfg_.message_size_bytes);
        auto all = encode(params_, e, payload);
        std::vector<fragment> held;
        for (node_id_t j = 0; j < cfg_.n_nodes && held.size() < need; ++j) {
            for (uint32_t idx : nodes_[j].held_indices(e)) {
                held.push_back(all[idx]);
                if (held.size() == need) {
                    break;
                }
            }
        }
        if (held.size() >= need) {
            if (decode(params_, held) != payload) {
                eng_.report_violation("entry " + std::to_string(e) +
                                      ": byte-level decode mismatch");
            }
        }
    }

private:
    void schedule_retry(uint64_t e, uint64_t delay_ticks) {
        if (leader_.ack_count(e) >= cfg_.n_nodes) {
            incomplete_.erase(e);
            return;
        }
        retry_q_.emplace(e + delay_ticks, e);
    }

    void send_disseminate(uint64_t e, const protocol_message& pm) {
        if (pm.recipient == leader_.leader_id()) {
            local_store(e, pm);
            return;
        }
        wire w;
        w.type = 0;
        w.sender = pm.sender;
        w.recipient = pm.recipient;
        w.entry = e;
        w.a = pm.frag_lo;
        w.b = pm.frag_hi;
        eng_.send_request(w, xmit_[e]);
    }

    // The leader doubles as storage node 0; its slice is stored in place and
    // the resulting self-ack is processed synchronously.
    void local_store(uint64_t e, const protocol_message& pm) {
        protocol_message m = pm;
        const uint64_t before = nodes_[0].held_count(e);
        auto ack = nodes_[0].on_disseminate(m);
        const uint64_t after = nodes_[0].held_count(e);
        eng_.storage_delta(e, 0,
                           (static_cast<int64_t>(after) - static_cast<int64_t>(before)) *
                               static_cast<int64_t>(shard_));
        eng_.touched(e);
        const bool was_done = leader_.is_done(e);
        auto res = leader_.on_ack(0, e, ack.count);
        handle_ack_result(e, res.status, res.out, was_done);
    }

    void dispatch(uint64_t e, const std::vector<protocol_message>& msgs) {
        for (const auto& pm : msgs) {
            switch (pm.type) {
                case protocol_message::kind::disseminate:
                    send_disseminate(e, pm);
                    break;
                case protocol_message::kind::ack_update: {
                    wire w;
                    w.type = 2;
                    w.sender = pm.sender;
                    w.entry = e;
                    w.a = pm.count;
                    eng_.send_broadcast(w);
                    break;
                }
                default:
                    break;
            }
        }
    }

    void deliver_disseminate(const wire& w) {
        protocol_message pm;
        pm.type = protocol_message::kind::disseminate;
        pm.sender = w.sender;
        pm.recipient = w.recipient;
        pm.id = w.entry;
        pm.frag_lo = w.a;
        pm.frag_hi = w.b;
        auto& node = nodes_[w.recipient];
        const uint64_t before = node.held_count(w.entry);
        auto ack = node.on_disseminate(pm);
        const uint64_t after = node.held_count(w.entry);
        eng_.storage_delta(w.entry, w.recipient,
                           (static_cast<int64_t>(after) - static_cast<int64_t>(before)) *
                               static_cast<int64_t>(shard_));
        eng_.touched(w.entry);
        wire reply;
        reply.type = 1;
        reply.sender = w.recipient;
        reply.recipient = w.sender;
        reply.entry = w.entry;
        reply.a = ack.count;
        eng_.send_reply(w, reply);
    }

    void deliver_ack(const wire& w) {
        const uint64_t e = w.entry;
        const bool was_done = leader_.is_done(e);
        auto res = leader_.on_ack(w.sender, e, w.a);
        handle_ack_result(e, res.status, res.out, was_done);
    }

    void handle_ack_result(uint64_t e, dispersal_status status,
                           const std::vector<protocol_message>& out, bool was_done) {
        if (status == dispersal_status::done && !was_done && leader_.is_done(e) &&
            metrics_pending(e)) {
            eng_.entry_committed(e, leader_.round(e));
            schedule_retry(e, 1);
        }
        dispatch(e, out);
        if (leader_.ack_count(e) >= cfg_.n_nodes) {
            incomplete_.erase(e);
        }
    }

    bool metrics_pending(uint64_t e) {
        return committed_.insert(e).second;
    }

    engine& eng_;
    const scenario_config& cfg_;
    coding_params params_;
    leader_dispersal leader_;
    std::vector<storage_node> nodes_;
    uint64_t shard_;
    std::vector<uint32_t> xmit_;
    std::set<uint64_t> incomplete_;
    std::set<uint64_t> committed_;
    std::vector<uint8_t> retry_exp_;
    std::priority_queue<std::pair<uint64_t, uint64_t>,
                        std::vector<std::pair<uint64_t, uint64_t>>, std::greater<>>
        retry_q_;
};

// ---------------------------------------------------------------------------
// baseline adapters
// ---------------------------------------------------------------------------

class baseline_adapter final : public dispersal_adapter {
public:
    baseline_adapter(engine& eng, const scenario_config& cfg)
        : eng_(eng), cfg_(cfg), kind_(kind_of(cfg.protocol)) {
        for (node_id_t j = 0; j < cfg.n_nodes; ++j) {
            stores_.emplace_back(j);
        }
        switch (kind_) {
            case baselines::baseline_kind::full_replication_fallback:
                fb_.emplace(cfg.n_nodes, cfg.max_faults, 0);
                break;
            case baselines::baseline_kind::endangered_resharing:
                rs_.emplace(cfg.n_nodes, cfg.max_faults, 0, cfg.seed);
                break;
            case baselines::baseline_kind::proactive_encoding:
                pro_.emplace(cfg.n_nodes, cfg.max_faults, 0);
                break;
        }
        xmit_.assign(cfg.num_entries, 0);
        if (cfg.verify) {
            sent_log_.assign(cfg.num_entries,
                             std::vector<std::set<uint16_t>>(cfg.n_nodes));
            sent_full_.assign(cfg.num_entries, std::vector<bool>(cfg.n_nodes, false));
            committed_k_.assign(cfg.num_entries, 0);
        }
    }

    static baselines::baseline_kind kind_of(protocol_kind p) {
        switch (p) {
            case protocol_kind::full_fallback:
                return baselines::baseline_kind::full_replication_fallback;
            case protocol_kind::resharing:
                return baselines::baseline_kind::endangered_resharing;
            default:
                return baselines::baseline_kind::proactive_encoding;
        }
    }

    const char* wire_name(uint8_t type) const override {
        switch (type) {
            case 0: return "fragment";
            case 1: return "full_copy";
            case 2: return "probe";
            case 3: return "store_ack";
            case 4: return "probe_ack";
        }
        return "?";
    }

    void entry_start(uint64_t e) override {
        std::vector<baselines::baseline_message> out;
        if (fb_) {
            out = fb_->begin_entry(e);
            self_fragment(e, 0, static_cast<uint16_t>(cfg_.max_faults + 1));
        } else if (rs_) {
            out = rs_->begin_entry(e);
            self_fragment(e, 0, static_cast<uint16_t>(cfg_.max_faults + 1));
        } else {
            auto r = pro_->begin_entry(e);
            out = std::move(r.out);
            self_fragment(e, 0, r.k_data);
            if (r.status == dispersal_status::done) {
                commit(e);
            }
        }
        send_all(e, out);
        eng_.arm_timer(e, 0, eng_.timeout_ns());
    }

    void deliver(const wire& w) override {
        baselines::baseline_message m = unpack(w);
        if (m.type == baselines::baseline_message::kind::store_ack ||
            m.type == baselines::baseline_message::kind::probe_ack) {
            deliver_ack(w, m);
            return;
        }
        auto& store = stores_[w.recipient];
        const uint64_t before = store.holdings(w.entry).bytes(cfg_.message_size_bytes);
        auto ack = store.on_message(m);
        const uint64_t after = store.holdings(w.entry).bytes(cfg_.message_size_bytes);
        eng_.storage_delta(w.entry, w.recipient,
                           static_cast<int64_t>(after) - static_cast<int64_t>(before));
        eng_.touched(w.entry);
        wire reply = pack(ack);
        eng_.send_reply(w, reply);
    }

    void timer(uint64_t e, uint32_t round) override {
        if (pro_) {
            if (round == 0) {
                pro_->close_estimation_window(e);
            }
            if (pro_->is_done(e) || pro_->rounds(e) != round) {
                return;
            }
            ++xmit_[e];
            auto res = pro_->on_timeout(e);
            self_fragment(e, 0, pro_->scheme_k(e));
            send_all(e, res.out);
            if (res.status == dispersal_status::done) {
                commit(e);
            } else {
                eng_.arm_timer(e, pro_->rounds(e), eng_.timeout_ns());
            }
            return;
        }
        auto& ld = *leader_rounds(e);
        if (ld.done || ld.rounds != round) {
            return;
        }
        ++xmit_[e];
        baselines::round_result res = fb_ ? fb_->on_timeout(e) : rs_->on_timeout(e);
        if (fb_ && fb_->fell_back(e) && !leader_full_copy_counted_[e]) {
            // Leader already holds the whole message; account it as stored.
            leader_full_copy_counted_[e] = true;
            baselines::baseline_message self;
            self.type = baselines::baseline_message::kind::full_copy;
            self.sender = 0;
            self.recipient = 0;
            self.id = e;
            self.round = fb_->rounds(e);
            apply_local(e, self);
        }
        send_all(e, res.out);
        if (res.status == dispersal_status::done) {
            commit(e);
        } else {
            eng_.arm_timer(e, fb_ ? fb_->rounds(e) : rs_->rounds(e),
                           eng_.timeout_ns());
        }
    }

    void tick(uint64_t) override {}
    void heal() override {}

    void verify_entry(uint64_t e) override {
        if (!is_done(e) || committed_k_[e] == 0) {
            return;
        }
        eng_.count_check();
        const uint16_t k = committed_k_[e];
        const uint32_t n = cfg_.n_nodes;
        const bool ok = for_all_crash_sets(
            n, cfg_.max_faults, [&](const std::vector<bool>& crashed) {
                // Credit a live node with everything sent to it: links between
                // live nodes deliver eventually once unresponsiveness clears.
                std::set<uint16_t> distinct;
                for (node_id_t j = 0; j < n; ++j) {
                    if (crashed[j]) {
                        continue;
                    }
                    const auto& h = stores_[j].holdings(e);
                    if (h.full_copy || sent_full_[e][j]) {
                        return true;
                    }
                    if (h.k_data == k) {
                        distinct.insert(h.frag_indices.begin(), h.frag_indices.end());
                    }
                    distinct.insert(sent_log_[e][j].begin(), sent_log_[e][j].end());
                }
                return distinct.size() >= k;
            });
        if (!ok) {
            eng_.report_violation("baseline entry " + std::to_string(e) +
                                  ": reconstruction capacity lost under F crashes");
        }
    }

private:
    baselines::baseline_message unpack(const wire& w) const {
        baselines::baseline_message m;
        m.type = static_cast<baselines::baseline_message::kind>(w.type);
        m.sender = w.sender;
        m.recipient = w.recipient;
        m.id = w.entry;
        m.frag_index = static_cast<uint16_t>(w.a);
        m.k_data = static_cast<uint16_t>(w.b);
        m.round = w.c;
        return m;
    }

    wire pack(const baselines::baseline_message& m) const {
        wire w;
        w.type = static_cast<uint8_t>(m.type);
        w.sender = m.sender;
        w.recipient = m.recipient;
        w.entry = m.id;
        w.a = m.frag_index;
        w.b = m.k_data;
        w.c = m.round;
        return w;
    }

    void apply_local(uint64_t e, const baselines::baseline_message& m) {
        auto& store = stores_[0];
        const uint64_t before = store.holdings(e).bytes(cfg_.message_size_bytes);
        store.on_message(m);
        const uint64_t after = store.holdings(e).bytes(cfg_.message_size_bytes);
        eng_.storage_delta(e, 0,
                           static_cast<int64_t>(after) - static_cast<int64_t>(before));
        eng_.touched(e);
    }

    void self_fragment(uint64_t e, uint16_t index, uint16_t k) {
        baselines::baseline_message m;
        m.type = baselines::baseline_message::kind::fragment;
        m.sender = 0;
        m.recipient = 0;
        m.id = e;
        m.frag_index = index;
        m.k_data = k;
        apply_local(e, m);
        if (cfg_.verify) {
            sent_log_[e][0].insert(index);
        }
    }

    void send_all(uint64_t e, const std::vector<baselines::baseline_message>& out) {
        if (leader_full_copy_counted_.size() <= e) {
            leader_full_copy_counted_.resize(e + 1, false);
        }
        for (const auto& m : out) {
            if (cfg_.verify) {
                if (m.type == baselines::baseline_message::kind::fragment) {
                    sent_log_[e][m.recipient].insert(m.frag_index);
                } else if (m.type == baselines::baseline_message::kind::full_copy) {
                    sent_full_[e][m.recipient] = true;
                }
            }
            eng_.send_request(pack(m), xmit_[e]);
        }
    }

    void deliver_ack(const wire& w, const baselines::baseline_message& m) {
        const uint64_t e = w.entry;
        if (pro_) {
            auto res = pro_->on_response(m);
            if (res.status == dispersal_status::done) {
                commit(e);
            }
            return;
        }
        if (m.type != baselines::baseline_message::kind::store_ack) {
            return;
        }
        auto res = fb_ ? fb_->on_ack(m) : rs_->on_ack(m);
        if (res.status == dispersal_status::done) {
            commit(e);
        }
    }

    struct rounds_view {
        bool done;
        uint32_t rounds;
    };
    std::optional<rounds_view> leader_rounds_storage_;
    rounds_view* leader_rounds(uint64_t e) {
        leader_rounds_storage_ = rounds_view{is_done(e), fb_ ? fb_->rounds(e)
                                                             : rs_->rounds(e)};
        return &*leader_rounds_storage_;
    }

    bool is_done(uint64_t e) const {
        if (fb_) return fb_->is_done(e);
        if (rs_) return rs_->is_done(e);
        return pro_->is_done(e);
    }

    void commit(uint64_t e) {
        if (!committed_once_.insert(e).second) {
            return;
        }
        uint32_t rounds = fb_ ? fb_->rounds(e) : rs_ ? rs_->rounds(e) : pro_->rounds(e);
        eng_.entry_committed(e, rounds);
        if (cfg_.verify) {
            committed_k_[e] = pro_ ? pro_->scheme_k(e)
                                   : static_cast<uint16_t>(cfg_.max_faults + 1);
        }
    }

    engine& eng_;
    const scenario_config& cfg_;
    baselines::baseline_kind kind_;
    std::vector<baselines::baseline_store> stores_;
    std::optional<baselines::fallback_leader> fb_;
    std::optional<baselines::resharing_leader> rs_;
    std::optional<baselines::proactive_leader> pro_;
    std::vector<uint32_t> xmit_;
    std::vector<bool> leader_full_copy_counted_;
    std::set<uint64_t> committed_once_;
    // verify-mode bookkeeping of what was sent where
    std::vector<std::vector<std::set<uint16_t>>> sent_log_;
    std::vector<std::vector<bool>> sent_full_;
    std::vector<uint16_t> committed_k_;
};

}  // namespace

run_result run_scenario(const scenario_config& config, const trace_fn& trace) {
    config.validate();
    if (config.protocol == protocol_kind::eaid_kv) {
        return kv::run_kv_scenario(config, trace);
    }
    engine eng(config, trace);
    if (config.protocol == protocol_kind::eaid) {
        eaid_adapter ad(eng, config);
        eng.attach(&ad);
        eng.run();
        return std::move(eng).result();
    }
    baseline_adapter ad(eng, config);
    eng.attach(&ad);
    eng.run();
    return std::move(eng).result();
}

}  // namespace eaid::sim
