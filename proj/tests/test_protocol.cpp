#include <doctest.h>

#include <random>
#include <set>

#include "eaid/protocol.hpp"

using namespace eaid;

namespace {

coding_params params5() { return coding_params::for_cluster(5, 2); }

// Count disseminates and check each carries the first `want` fragments of
// the recipient's block.
void expect_initial_slices(const std::vector<protocol_message>& out,
                           const coding_params& p, uint32_t want) {
    REQUIRE(out.size() == p.n_nodes);
    const auto a = partition(p);
    std::set<node_id_t> seen;
    for (const auto& m : out) {
        CHECK(m.type == protocol_message::kind::disseminate);
        CHECK(seen.insert(m.recipient).second);
        const auto [lo, hi] = a.block(m.recipient);
        CHECK(m.frag_lo == lo);
        CHECK(m.frag_hi == lo + want);
        CHECK(m.frag_hi <= hi);
    }
}

// Drives a leader whose responsive quorum has settled at `quorum` by
// completing one dispersal acknowledged by exactly that many nodes.
leader_dispersal leader_with_quorum(const coding_params& p, uint32_t delta,
                                    uint32_t quorum) {
    leader_dispersal ld(p, 0, delta);
    ld.begin_disperse(1000);
    // Ack from `quorum - 1` followers with full blocks; a timeout commits
    // t' = quorum - F, after which the recomputed set satisfies the exit
    // condition.
    for (node_id_t j = 1; j < quorum; ++j) {
        ld.on_ack(j, 1000, p.data_shards());
    }
    if (!ld.is_done(1000)) {
        ld.on_timeout(1000);
    }
    REQUIRE(ld.is_done(1000));
    REQUIRE(ld.ack_count(1000) == quorum);
    return ld;
}

}  // namespace

TEST_CASE("begin_disperse: quorum 5, delta 1 sends two fragments per node") {
    leader_dispersal ld(params5(), 0, 1);
    const auto out = ld.begin_disperse(1);
    CHECK(ld.t_prime(1) == 2);
    CHECK(ld.f_per(1) == 2);
    expect_initial_slices(out, params5(), 2);
    CHECK(ld.ack_count(1) == 1);  // leader counts itself immediately
    CHECK(ld.in_ack_set(1, 0));
}

TEST_CASE("begin_disperse: delta 0 degenerates to one fragment per node") {
    leader_dispersal ld(params5(), 0, 0);
    const auto out = ld.begin_disperse(1);
    CHECK(ld.t_prime(1) == 3);
    CHECK(ld.f_per(1) == 1);
    expect_initial_slices(out, params5(), 1);
}

TEST_CASE("begin_disperse: bare quorum estimate sends the whole block") {
    auto ld = leader_with_quorum(params5(), 0, 3);
    const auto out = ld.begin_disperse(2);
    CHECK(ld.responsive_quorum() == 3);
    CHECK(ld.t_prime(2) == 1);
    CHECK(ld.f_per(2) == 3);
    expect_initial_slices(out, params5(), 3);
}

TEST_CASE("begin_disperse: duplicate id is rejected") {
    leader_dispersal ld(params5(), 0, 1);
    ld.begin_disperse(4);
    CHECK_THROWS_AS(ld.begin_disperse(4), duplicate_dispersal);
}

TEST_CASE("on_ack: done after the fourth member enters the ack set") {
    leader_dispersal ld(params5(), 0, 1);  // t' = 2, f_per = 2, exit at 4
    ld.begin_disperse(1);
    CHECK(ld.on_ack(1, 1, 2).status == dispersal_status::pending);
    CHECK(ld.on_ack(2, 1, 2).status == dispersal_status::pending);
    const auto res = ld.on_ack(3, 1, 2);
    CHECK(res.status == dispersal_status::done);
    CHECK(ld.ack_count(1) == 4);  // leader + three followers = F + t'
    // The done transition broadcasts the committed quorum for pruning.
    REQUIRE(res.out.size() == 1);
    CHECK(res.out[0].type == protocol_message::kind::ack_update);
    CHECK(res.out[0].recipient == kBroadcast);
    CHECK(res.out[0].count == 4);
}

TEST_CASE("on_ack: a count below f_per does not join the ack set") {
    leader_dispersal ld(params5(), 0, 1);
    ld.begin_disperse(1);
    CHECK(ld.on_ack(1, 1, 1).status == dispersal_status::pending);
    CHECK(!ld.in_ack_set(1, 1));
    CHECK(ld.held_count(1, 1) == 1);
}

TEST_CASE("on_ack: duplicates and unknown ids change nothing") {
    leader_dispersal ld(params5(), 0, 1);
    ld.begin_disperse(1);
    ld.on_ack(1, 1, 2);
    const uint32_t before = ld.ack_count(1);
    ld.on_ack(1, 1, 2);  // identical redelivery
    CHECK(ld.ack_count(1) == before);
    CHECK(ld.held_count(1, 1) == 2);
    CHECK(ld.on_ack(2, 99, 2).status == dispersal_status::pending);  // unknown id
    CHECK(ld.ack_count(1) == before);
}

TEST_CASE("on_timeout: three acks at f_per=1 trigger full-block top-up") {
    leader_dispersal ld(params5(), 0, 0);  // f_per = 1, wait for 5
    ld.begin_disperse(1);
    ld.on_ack(1, 1, 1);
    ld.on_ack(2, 1, 1);
    CHECK(ld.ack_count(1) == 3);

    const auto res = ld.on_timeout(1);
    CHECK(ld.t_prime(1) == 1);
    CHECK(ld.f_per(1) == 3);
    // Every node is owed its two remaining fragments.
    REQUIRE(res.out.size() == 5);
    for (const auto& m : res.out) {
        CHECK(m.frag_hi - m.frag_lo == 2);
    }
    // Nodes that held one fragment drop out under the raised threshold.
    CHECK(!ld.in_ack_set(1, 1));
    CHECK(!ld.in_ack_set(1, 2));
    CHECK(ld.in_ack_set(1, 0));  // leader stored its full slice locally
    CHECK(res.status == dispersal_status::pending);

    // Responsive nodes re-ack with full blocks and dispersal completes.
    ld.on_ack(1, 1, 3);
    const auto fin = ld.on_ack(2, 1, 3);
    CHECK(fin.status == dispersal_status::done);
    CHECK(ld.frozen_f_per(1) == 3);
}

TEST_CASE("on_timeout: when |A| is already above F the recomputed bound exits") {
    leader_dispersal ld(params5(), 0, 0);  // wait for all 5
    ld.begin_disperse(1);
    for (node_id_t j = 1; j <= 3; ++j) {
        ld.on_ack(j, 1, 1);
    }
    CHECK(ld.ack_count(1) == 4);
    const auto res = ld.on_timeout(1);
    // t' drops to |A| - F = 2, f_per stays ceil(3/2) = 2 after the raise...
    CHECK(ld.t_prime(1) == 2);
    CHECK(ld.f_per(1) == 2);
    // ...but held counts of 1 no longer qualify, so it stays pending until
    // nodes confirm the second fragment.
    CHECK(res.status == dispersal_status::pending);
    ld.on_ack(1, 1, 2);
    ld.on_ack(2, 1, 2);
    const auto fin = ld.on_ack(3, 1, 2);
    CHECK(fin.status == dispersal_status::done);
}

TEST_CASE("on_timeout: no progress means no new disseminates") {
    auto ld = leader_with_quorum(params5(), 0, 3);
    ld.begin_disperse(2);  // t' = 1, f_per = 3 from the start
    ld.on_ack(1, 2, 3);
    CHECK(ld.ack_count(2) == 2);
    const auto res = ld.on_timeout(2);
    CHECK(res.out.empty());  // sent counts already cover f_new
    CHECK(res.status == dispersal_status::pending);
    CHECK(ld.f_per(2) == 3);
}

TEST_CASE("on_late_ack: straggler crossing the frozen threshold broadcasts") {
    leader_dispersal ld(params5(), 0, 1);
    ld.begin_disperse(1);
    ld.on_ack(1, 1, 2);
    ld.on_ack(2, 1, 2);
    ld.on_ack(3, 1, 2);
    REQUIRE(ld.is_done(1));
    REQUIRE(ld.ack_count(1) == 4);

    auto out = ld.on_late_ack(4, 1, 2);
    REQUIRE(out.size() == 1);
    CHECK(out[0].type == protocol_message::kind::ack_update);
    CHECK(out[0].count == 5);
    CHECK(ld.ack_count(1) == 5);

    // Identical redelivery: the q > held guard suppresses a second broadcast.
    CHECK(ld.on_late_ack(4, 1, 2).empty());
}

TEST_CASE("on_late_ack: below the frozen threshold only held advances") {
    leader_dispersal ld(params5(), 0, 1);
    ld.begin_disperse(1);
    ld.on_ack(1, 1, 2);
    ld.on_ack(2, 1, 2);
    ld.on_ack(3, 1, 2);
    REQUIRE(ld.is_done(1));
    CHECK(ld.on_late_ack(4, 1, 1).empty());
    CHECK(ld.held_count(1, 4) == 1);
    CHECK(!ld.in_ack_set(1, 4));
}

TEST_CASE("storage node: union semantics and ack counts") {
    const auto p = params5();
    storage_node node(p, 2);  // block [6, 9)
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.sender = 0;
    m.recipient = 2;
    m.id = 1;
    m.frag_lo = 6;
    m.frag_hi = 8;
    CHECK(node.on_disseminate(m).count == 2);
    // Incremental third fragment.
    m.frag_lo = 8;
    m.frag_hi = 9;
    CHECK(node.on_disseminate(m).count == 3);
    // Duplicate redelivery: set union is idempotent.
    m.frag_lo = 6;
    m.frag_hi = 8;
    CHECK(node.on_disseminate(m).count == 3);
    CHECK(node.held_indices(1) == std::vector<uint32_t>{6, 7, 8});
}

TEST_CASE("storage node: slices outside the own block are rejected") {
    storage_node node(params5(), 2);
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.id = 1;
    m.frag_lo = 3;  // node 1's block
    m.frag_hi = 5;
    CHECK_THROWS_AS(node.on_disseminate(m), protocol_violation);
}

TEST_CASE("retention rule values") {
    CHECK(storage_node::retention_rule(5, 11) == 1);  // full quorum
    CHECK(storage_node::retention_rule(5, 9) == 2);   // 3N/4 of 11
    CHECK(storage_node::retention_rule(2, 3) == 3);   // bare quorum keeps F+1
    CHECK(storage_node::retention_rule(2, 4) == 2);
    CHECK(storage_node::retention_rule(2, 5) == 1);
}

TEST_CASE("retention rule is non-increasing in the quorum count") {
    for (uint32_t f = 1; f <= 10; ++f) {
        for (uint32_t x = f + 2; x <= 4 * f + 2; ++x) {
            CHECK(storage_node::retention_rule(f, x) <=
                  storage_node::retention_rule(f, x - 1));
        }
    }
}

TEST_CASE("prune: quorum updates are monotone and prune to the rule") {
    const auto p = coding_params::for_cluster(11, 5);
    storage_node node(p, 3);
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.recipient = 3;
    m.id = 1;
    const auto [lo, hi] = partition(p).block(3);
    m.frag_lo = lo;
    m.frag_hi = lo + 2;
    node.on_disseminate(m);
    (void)hi;

    // Full quorum: r = 1, one of two fragments discarded (highest first).
    CHECK(node.on_ack_update(1, 11) == 1);
    CHECK(node.held_indices(1) == std::vector<uint32_t>{lo});
    // Stale lower quorum is ignored.
    CHECK(node.on_ack_update(1, 9) == 0);
    CHECK(node.highest_known_quorum(1) == 11);
}

TEST_CASE("prune: no rule below the quorum floor") {
    const auto p = params5();
    storage_node node(p, 1);
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.recipient = 1;
    m.id = 1;
    m.frag_lo = 3;
    m.frag_hi = 6;
    node.on_disseminate(m);
    CHECK(node.on_ack_update(1, 2) == 0);  // q <= F: retain everything
    CHECK(node.held_count(1) == 3);
    CHECK(node.on_ack_update(1, 3) == 0);  // r = 3 = F+1: nothing above it
    CHECK(node.held_count(1) == 3);
}

// Dispersal safety, exercised end to end: random delivery schedules at
// N in {5, 7}; once done, any F members removed from the ack set leave at
// least F+1 distinct fragments among the remaining members' stores.
TEST_CASE("dispersal safety under random schedules") {
    for (uint32_t n : {5u, 7u}) {
        const uint32_t f = (n - 1) / 2;
        const auto p = coding_params::for_cluster(n, f);
        for (uint64_t seed = 0; seed < 40; ++seed) {
            std::mt19937_64 rng(seed * 977 + n);
            leader_dispersal ld(p, 0, static_cast<uint32_t>(rng() % (f + 2)));
            std::vector<storage_node> nodes;
            for (node_id_t j = 0; j < n; ++j) {
                nodes.emplace_back(p, j);
            }
            std::vector<protocol_message> inflight = ld.begin_disperse(1);
            // Deliver the leader's self-slice unconditionally.
            bool done = false;
            int guard = 0;
            while (!done && ++guard < 200) {
                std::vector<protocol_message> next;
                for (const auto& m : inflight) {
                    const bool drop = m.recipient != 0 && (rng() % 3 == 0);
                    if (drop) {
                        continue;
                    }
                    auto ack = nodes[m.recipient].on_disseminate(m);
                    if (rng() % 4 == 0 && m.recipient != 0) {
                        continue;  // ack lost
                    }
                    const auto res = ld.on_ack(ack.sender, 1, ack.count);
                    if (res.status == dispersal_status::done) {
                        done = true;
                        break;
                    }
                }
                if (done) {
                    break;
                }
                inflight.clear();
                const auto res = ld.on_timeout(1);
                inflight = res.out;
                done = res.status == dispersal_status::done;
            }
            REQUIRE(done);

            // Enumerate every subset of up to F ack-set members as crashed.
            std::vector<node_id_t> members;
            for (node_id_t j = 0; j < n; ++j) {
                if (ld.in_ack_set(1, j)) {
                    members.push_back(j);
                }
            }
            const uint32_t m = static_cast<uint32_t>(members.size());
            for (uint32_t mask = 0; mask < (1u << m); ++mask) {
                if (static_cast<uint32_t>(std::popcount(mask)) > f) {
                    continue;
                }
                uint32_t distinct = 0;
                for (uint32_t i = 0; i < m; ++i) {
                    if (!(mask & (1u << i))) {
                        distinct += nodes[members[i]].held_count(1);
                    }
                }
                REQUIRE(distinct >= f + 1);
            }
        }
    }
}

// Bounded convergence when only F+1 fixed nodes (the leader among them) ever
// acknowledge: done within ceil(log2(F+1)) + 2 timeout rounds and the final
// round pins t' = 1, f_per = F+1.
TEST_CASE("termination against a silent majority") {
    for (uint32_t n : {5u, 7u}) {
        const uint32_t f = (n - 1) / 2;
        const auto p = coding_params::for_cluster(n, f);
        uint32_t bound = 2;
        while ((1u << (bound - 2)) < f + 1) {
            ++bound;  // ceil(log2(F+1)) + 2
        }
        for (uint64_t seed = 0; seed < 50; ++seed) {
            std::mt19937_64 rng(seed + 31 * n);
            std::set<node_id_t> responders{0};
            while (responders.size() < f + 1) {
                responders.insert(static_cast<node_id_t>(rng() % n));
            }
            leader_dispersal ld(p, 0, static_cast<uint32_t>(rng() % (f + 3)));
            std::vector<storage_node> nodes;
            for (node_id_t j = 0; j < n; ++j) {
                nodes.emplace_back(p, j);
            }
            auto deliver_round = [&](const std::vector<protocol_message>& msgs) {
                for (const auto& m : msgs) {
                    if (m.type != protocol_message::kind::disseminate ||
                        responders.count(m.recipient) == 0) {
                        continue;
                    }
                    auto ack = nodes[m.recipient].on_disseminate(m);
                    if (ld.on_ack(ack.sender, 1, ack.count).status ==
                        dispersal_status::done) {
                        return true;
                    }
                }
                return false;
            };
            bool done = deliver_round(ld.begin_disperse(1));
            uint32_t rounds = 0;
            while (!done) {
                ++rounds;
                REQUIRE(rounds <= bound);
                const auto res = ld.on_timeout(1);
                done = res.status == dispersal_status::done || deliver_round(res.out);
            }
            CHECK(ld.t_prime(1) == 1);
            CHECK(ld.f_per(1) == f + 1);
        }
    }
}

TEST_CASE("prune under-retention fixture is detectable") {
    const auto p = params5();
    storage_node node(p, 1);
    protocol_message m;
    m.type = protocol_message::kind::disseminate;
    m.recipient = 1;
    m.id = 1;
    m.frag_lo = 3;
    m.frag_hi = 6;
    node.on_disseminate(m);
    testing::set_prune_under_retention(true);
    node.on_ack_update(1, 5);  // rule says keep 1; mutation keeps 0
    testing::set_prune_under_retention(false);
    CHECK(node.held_count(1) == 0);
}
