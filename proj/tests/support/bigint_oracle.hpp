#pragma once

// Arbitrary-precision helpers for tests. Nothing here touches the
// library's reduction or curve code paths.

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <random>

#include "eclab/bigint.hpp"

namespace eclab::testing {

using boost::multiprecision::cpp_int;

template <std::size_t N>
cpp_int to_cpp(const BigUInt<N>& v) {
    cpp_int r = 0;
    for (std::size_t i = N; i-- > 0;) {
        r <<= 64;
        r += v.limb[i];
    }
    return r;
}

template <std::size_t N>
BigUInt<N> from_cpp(cpp_int v) {
    BigUInt<N> r;
    for (std::size_t i = 0; i < N; ++i) {
        r.limb[i] = static_cast<std::uint64_t>(v & cpp_int(0xFFFFFFFFFFFFFFFFULL));
        v >>= 64;
    }
    return r;
}

template <std::size_t N>
BigUInt<N> random_big(std::mt19937_64& rng) {
    BigUInt<N> r;
    for (auto& w : r.limb) w = rng();
    return r;
}

/// Uniform-ish value below `bound` (rejection on the bound's bit length).
inline U256 random_below(const U256& bound, std::mt19937_64& rng) {
    std::size_t bits = bound.bit_length();
    for (;;) {
        U256 r = random_big<4>(rng);
        for (std::size_t i = bits; i < 256; ++i) r.limb[i / 64] &= ~(std::uint64_t{1} << (i % 64));
        if (r < bound) return r;
    }
}

inline cpp_int mod_pow(cpp_int base, cpp_int exp, const cpp_int& m) {
    cpp_int result = 1;
    base %= m;
    while (exp > 0) {
        if ((exp & 1) != 0) result = result * base % m;
        base = base * base % m;
        exp >>= 1;
    }
    return result;
}

/// Extended Euclid inverse; independent of the Fermat route used by fe_inv.
inline cpp_int mod_inverse(cpp_int a, const cpp_int& m) {
    cpp_int t = 0, new_t = 1, r = m, new_r = a % m;
    while (new_r != 0) {
        cpp_int q = r / new_r;
        cpp_int tmp = t - q * new_t;
        t = new_t;
        new_t = tmp;
        tmp = r - q * new_r;
        r = new_r;
        new_r = tmp;
    }
    if (t < 0) t += m;
    return t;
}

}  // namespace eclab::testing
