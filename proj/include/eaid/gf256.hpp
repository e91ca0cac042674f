#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

// Arithmetic over GF(2^8) with the primitive polynomial
// x^8 + x^4 + x^3 + x^2 + 1 (0x11d) and generator alpha = 2.
// Addition is xor; multiplication goes through log/antilog tables.

namespace eaid::gf256 {

namespace detail {

struct tables {
    std::array<uint8_t, 512> exp{};
    std::array<uint8_t, 256> log{};
};

constexpr tables make_tables() {
    tables t{};
    uint32_t x = 1;
    for (int i = 0; i < 255; ++i) {
        t.exp[i] = static_cast<uint8_t>(x);
        t.log[x] = static_cast<uint8_t>(i);
        x <<= 1;
        if (x & 0x100) {
            x ^= 0x11d;
        }
    }
    // Doubled table so exp[log a + log b] needs no modular reduction.
    for (int i = 255; i < 512; ++i) {
        t.exp[i] = t.exp[i - 255];
    }
    return t;
}

inline constexpr tables tbl = make_tables();

}  // namespace detail

inline constexpr uint8_t add(uint8_t a, uint8_t b) { return a ^ b; }

inline constexpr uint8_t mul(uint8_t a, uint8_t b) {
    if (a == 0 || b == 0) {
        return 0;
    }
    return detail::tbl.exp[detail::tbl.log[a] + detail::tbl.log[b]];
}

// Multiplicative inverse; a must be nonzero.
inline constexpr uint8_t inv(uint8_t a) {
    return detail::tbl.exp[255 - detail::tbl.log[a]];
}

inline constexpr uint8_t div(uint8_t a, uint8_t b) {
    if (a == 0) {
        return 0;
    }
    return detail::tbl.exp[detail::tbl.log[a] + 255 - detail::tbl.log[b]];
}

// dst[i] ^= c * src[i]
inline void mul_acc(uint8_t* dst, const uint8_t* src, size_t n, uint8_t c) {
    if (c == 0) {
        return;
    }
    const auto& t = detail::tbl;
    const uint16_t lc = t.log[c];
    for (size_t i = 0; i < n; ++i) {
        const uint8_t s = src[i];
        if (s != 0) {
            dst[i] ^= t.exp[lc + t.log[s]];
        }
    }
}

}  // namespace eaid::gf256
