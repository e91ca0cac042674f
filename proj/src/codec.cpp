#include "eaid/codec.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "eaid/gf256.hpp"

namespace eaid {

void rs_params::validate() const {
    if (data_shards == 0) {
        throw config_error("rs_params: data_shards must be positive");
    }
    if (total_shards <= data_shards) {
        throw config_error("rs_params: total_shards must exceed data_shards");
    }
    // GF(2^8) Cauchy construction: x-coordinates run up to total_shards - 1
    // and must stay distinct byte values.
    if (total_shards > 255) {
        throw config_error("rs_params: total_shards > 255 not representable over GF(2^8)");
    }
}

coding_params coding_params::for_cluster(uint32_t n_nodes, uint32_t max_faults) {
    coding_params p{n_nodes, max_faults};
    p.validate();
    return p;
}

void coding_params::validate() const {
    if (n_nodes == 0 || max_faults == 0) {
        throw config_error("coding_params: n_nodes and max_faults must be positive");
    }
    if (n_nodes != 2 * max_faults + 1) {
        throw config_error("coding_params: n_nodes must equal 2*max_faults + 1");
    }
}

std::vector<uint8_t> fragment::to_bytes() const {
    std::vector<uint8_t> out;
    out.reserve(14 + data.size());
    auto put = [&out](uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            out.push_back(static_cast<uint8_t>(v >> (8 * i)));
        }
    };
    put(message_id, 8);
    put(index, 2);
    put(original_length, 4);
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

fragment fragment::from_bytes(std::span<const uint8_t> bytes) {
    if (bytes.size() < 14) {
        throw corruption_error("fragment: wire form shorter than header");
    }
    auto get = [&bytes](size_t off, int n) {
        uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<uint64_t>(bytes[off + i]) << (8 * i);
        }
        return v;
    };
    fragment f;
    f.message_id = get(0, 8);
    f.index = static_cast<uint16_t>(get(8, 2));
    f.original_length = static_cast<uint32_t>(get(10, 4));
    f.data.assign(bytes.begin() + 14, bytes.end());
    return f;
}

std::vector<std::vector<uint32_t>> fragment_assignment::blocks() const {
    std::vector<std::vector<uint32_t>> out(n_nodes);
    for (uint32_t j = 0; j < n_nodes; ++j) {
        auto [lo, hi] = block(j);
        for (uint32_t i = lo; i < hi; ++i) {
            out[j].push_back(i);
        }
    }
    return out;
}

fragment_assignment partition(const coding_params& params) {
    params.validate();
    return fragment_assignment{params.n_nodes, params.data_shards()};
}

namespace rs {

std::vector<uint8_t> generator_row(const rs_params& params, uint16_t r) {
    const uint16_t k = params.data_shards;
    std::vector<uint8_t> row(k, 0);
    if (r < k) {
        row[r] = 1;
    } else {
        // cauchy[i][j] = 1 / (x_i + y_j) with x_i = k + i, y_j = j; all
        // coordinates distinct, so x_i ^ y_j is never zero.
        const uint8_t x = static_cast<uint8_t>(r);
        for (uint16_t j = 0; j < k; ++j) {
            row[j] = gf256::inv(x ^ static_cast<uint8_t>(j));
        }
    }
    return row;
}

std::vector<std::vector<uint8_t>> encode_shards(const rs_params& params,
                                                std::span<const uint8_t> message,
                                                uint32_t shard_len) {
    params.validate();
    const uint16_t k = params.data_shards;

    // Zero-padded data shards.
    std::vector<std::vector<uint8_t>> shards(params.total_shards);
    for (uint16_t s = 0; s < k; ++s) {
        shards[s].assign(shard_len, 0);
        const size_t off = static_cast<size_t>(s) * shard_len;
        if (off < message.size()) {
            const size_t n = std::min<size_t>(shard_len, message.size() - off);
            std::memcpy(shards[s].data(), message.data() + off, n);
        }
    }
    for (uint16_t s = k; s < params.total_shards; ++s) {
        shards[s].assign(shard_len, 0);
        const auto row = generator_row(params, s);
        for (uint16_t j = 0; j < k; ++j) {
            gf256::mul_acc(shards[s].data(), shards[j].data(), shard_len, row[j]);
        }
    }
    return shards;
}

namespace {

// Gauss-Jordan inversion over GF(2^8); the matrix is guaranteed invertible
// for any k distinct generator rows (Cauchy construction), so a zero pivot
// indicates corrupted input.
std::vector<uint8_t> invert(std::vector<uint8_t> m, uint16_t k) {
    std::vector<uint8_t> inv(static_cast<size_t>(k) * k, 0);
    for (uint16_t i = 0; i < k; ++i) {
        inv[static_cast<size_t>(i) * k + i] = 1;
    }
    for (uint16_t col = 0; col < k; ++col) {
        uint16_t pivot = col;
        while (pivot < k && m[static_cast<size_t>(pivot) * k + col] == 0) {
            ++pivot;
        }
        if (pivot == k) {
            throw corruption_error("decode: singular fragment matrix");
        }
        if (pivot != col) {
            for (uint16_t j = 0; j < k; ++j) {
                std::swap(m[static_cast<size_t>(pivot) * k + j],
                          m[static_cast<size_t>(col) * k + j]);
                std::swap(inv[static_cast<size_t>(pivot) * k + j],
                          inv[static_cast<size_t>(col) * k + j]);
            }
        }
        const uint8_t d = gf256::inv(m[static_cast<size_t>(col) * k + col]);
        for (uint16_t j = 0; j < k; ++j) {
            m[static_cast<size_t>(col) * k + j] =
                gf256::mul(m[static_cast<size_t>(col) * k + j], d);
            inv[static_cast<size_t>(col) * k + j] =
                gf256::mul(inv[static_cast<size_t>(col) * k + j], d);
        }
        for (uint16_t row = 0; row < k; ++row) {
            if (row == col) {
                continue;
            }
            const uint8_t c = m[static_cast<size_t>(row) * k + col];
            if (c == 0) {
                continue;
            }
            for (uint16_t j = 0; j < k; ++j) {
                m[static_cast<size_t>(row) * k + j] ^=
                    gf256::mul(c, m[static_cast<size_t>(col) * k + j]);
                inv[static_cast<size_t>(row) * k + j] ^=
                    gf256::mul(c, inv[static_cast<size_t>(col) * k + j]);
            }
        }
    }
    return inv;
}

}  // namespace

std::vector<uint8_t> decode_shards(
    const rs_params& params,
    std::span<const std::pair<uint16_t, std::span<const uint8_t>>> shards,
    uint32_t shard_len) {
    params.validate();
    const uint16_t k = params.data_shards;
    if (shards.size() != k) {
        throw invalid_input("decode_shards: expected exactly data_shards shards");
    }

    std::vector<uint8_t> matrix;
    matrix.reserve(static_cast<size_t>(k) * k);
    for (const auto& [idx, _] : shards) {
        const auto row = generator_row(params, idx);
        matrix.insert(matrix.end(), row.begin(), row.end());
    }
    const auto inv = invert(std::move(matrix), k);

    std::vector<uint8_t> data(static_cast<size_t>(k) * shard_len, 0);
    for (uint16_t d = 0; d < k; ++d) {
        uint8_t* dst = data.data() + static_cast<size_t>(d) * shard_len;
        for (uint16_t s = 0; s < k; ++s) {
            gf256::mul_acc(dst, shards[s].second.data(), shard_len,
                           inv[static_cast<size_t>(d) * k + s]);
        }
    }
    return data;
}

}  // namespace rs

std::vector<fragment> encode(const coding_params& params, message_id_t id,
                             std::span<const uint8_t> message) {
    params.validate();
    if (message.empty()) {
        throw invalid_input("encode: empty message");
    }
    const auto rsp = params.rs();
    const uint32_t len = params.shard_len(static_cast<uint32_t>(message.size()));
    auto shards = rs::encode_shards(rsp, message, len);

    std::vector<fragment> out;
    out.reserve(shards.size());
    for (uint16_t i = 0; i < shards.size(); ++i) {
        out.push_back(fragment{id, i, static_cast<uint32_t>(message.size()),
                               std::move(shards[i])});
    }
    return out;
}

std::vector<uint8_t> decode(const coding_params& params,
                            std::span<const fragment> fragments) {
    params.validate();
    const uint16_t k = static_cast<uint16_t>(params.data_shards());
    if (fragments.empty()) {
        throw insufficient_fragments("decode: no fragments");
    }

    const message_id_t id = fragments.front().message_id;
    const uint32_t orig = fragments.front().original_length;
    const size_t shard_len = fragments.front().data.size();
    const uint32_t expected_len = params.shard_len(orig);
    if (shard_len != expected_len) {
        throw corruption_error("decode: shard length inconsistent with original_length");
    }

    // Lowest k distinct indices, validated along the way.
    std::set<uint16_t> seen;
    std::vector<const fragment*> chosen;
    std::vector<const fragment*> sorted;
    sorted.reserve(fragments.size());
    for (const auto& f : fragments) {
        if (f.message_id != id) {
            throw corruption_error("decode: fragments from different messages");
        }
        if (f.original_length != orig || f.data.size() != shard_len) {
            throw corruption_error("decode: inconsistent fragment lengths");
        }
        if (f.index >= params.total_shards()) {
            throw corruption_error("decode: fragment index out of range");
        }
        sorted.push_back(&f);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const fragment* a, const fragment* b) { return a->index < b->index; });
    for (const fragment* f : sorted) {
        if (seen.insert(f->index).second) {
            chosen.push_back(f);
            if (chosen.size() == k) {
                break;
            }
        }
    }
    if (chosen.size() < k) {
        throw insufficient_fragments("decode: fewer than data_shards distinct indices");
    }

    std::vector<std::pair<uint16_t, std::span<const uint8_t>>> shards;
    shards.reserve(k);
    for (const fragment* f : chosen) {
        shards.emplace_back(f->index, std::span<const uint8_t>(f->data));
    }
    auto data = rs::decode_shards(params.rs(), shards,
                                  static_cast<uint32_t>(shard_len));
    if (orig > data.size()) {
        throw corruption_error("decode: original_length exceeds decoded payload");
    }
    data.resize(orig);
    return data;
}

}  // namespace eaid
