#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "eaid/errors.hpp"

// Fixed-parameter MDS erasure coding with disjoint per-node fragment blocks.
//
// A message is encoded once into (F+1)*N fragments such that any F+1 of them
// reconstruct it. The generator matrix is systematic: the first F+1 fragments
// are the plaintext shards, the remaining rows come from a Cauchy matrix, so
// every square submatrix of the stacked matrix is invertible and the code is
// MDS. All operations are pure functions; no shared mutable state.

namespace eaid {

using message_id_t = uint64_t;

// Generic Reed-Solomon shape: data_shards needed out of total_shards.
// The cluster-facing coding_params below is the (F+1, (F+1)*N) instance;
// baselines use other shapes of the same coder.
struct rs_params {
    uint16_t data_shards = 0;
    uint16_t total_shards = 0;

    void validate() const;
};

struct coding_params {
    uint32_t n_nodes = 0;     // N
    uint32_t max_faults = 0;  // F

    static coding_params for_cluster(uint32_t n_nodes, uint32_t max_faults);

    uint32_t data_shards() const { return max_faults + 1; }
    uint32_t total_shards() const { return (max_faults + 1) * n_nodes; }

    // Enforces n_nodes = 2F+1 (and the shard counts that follow from it).
    void validate() const;

    rs_params rs() const {
        return rs_params{static_cast<uint16_t>(data_shards()),
                         static_cast<uint16_t>(total_shards())};
    }

    // Shard length for a message of `message_len` bytes: ceil(B / (F+1)).
    uint32_t shard_len(uint32_t message_len) const {
        return (message_len + data_shards() - 1) / data_shards();
    }
};

struct fragment {
    message_id_t message_id = 0;
    uint16_t index = 0;
    uint32_t original_length = 0;
    std::vector<uint8_t> data;

    // Wire form: message_id (u64 LE), index (u16 LE), original_length
    // (u32 LE), then shard bytes.
    std::vector<uint8_t> to_bytes() const;
    static fragment from_bytes(std::span<const uint8_t> bytes);

    bool operator==(const fragment&) const = default;
};

// Node j owns the contiguous index block [j*(F+1), (j+1)*(F+1)).
// Blocks are pairwise disjoint and cover [0, total_shards), which is what
// makes per-node fragment counting equal distinct-fragment counting.
struct fragment_assignment {
    uint32_t n_nodes = 0;
    uint32_t block_size = 0;  // F+1

    // [first, last) of absolute fragment indices owned by `node`.
    std::pair<uint32_t, uint32_t> block(uint32_t node) const {
        return {node * block_size, (node + 1) * block_size};
    }
    uint32_t node_of(uint32_t index) const { return index / block_size; }

    std::vector<std::vector<uint32_t>> blocks() const;
};

fragment_assignment partition(const coding_params& params);

// Encodes `message` into total_shards fragments. Deterministic: identical
// inputs produce byte-identical fragments.
std::vector<fragment> encode(const coding_params& params, message_id_t id,
                             std::span<const uint8_t> message);

// Reconstructs the message from any >= F+1 fragments with distinct indices.
// When more are supplied, the lowest F+1 distinct indices are used.
std::vector<uint8_t> decode(const coding_params& params,
                            std::span<const fragment> fragments);

namespace rs {

// Shard-level encode: pads `message` to data_shards * shard_len and returns
// total_shards shards of equal length.
std::vector<std::vector<uint8_t>> encode_shards(const rs_params& params,
                                                std::span<const uint8_t> message,
                                                uint32_t shard_len);

// Recovers the data shards from any data_shards (index, shard) pairs.
std::vector<uint8_t> decode_shards(
    const rs_params& params,
    std::span<const std::pair<uint16_t, std::span<const uint8_t>>> shards,
    uint32_t shard_len);

// Row `r` of the generator matrix (length data_shards). Rows < data_shards
// are unit vectors; parity row i is cauchy(x=data_shards+i, y=j).
std::vector<uint8_t> generator_row(const rs_params& params, uint16_t r);

}  // namespace rs

}  // namespace eaid
