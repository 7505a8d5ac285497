#pragma once

#include <array>
#include <bit>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "eclab/errors.hpp"

namespace eclab {

using u128 = unsigned __int128;

/// Fixed-width unsigned integer of N little-endian 64-bit limbs.
template <std::size_t N>
struct BigUInt {
    static constexpr std::size_t kLimbs = N;
    static constexpr std::size_t kBits = 64 * N;
    static constexpr std::size_t kBytes = 8 * N;

    std::array<std::uint64_t, N> limb{};

    constexpr BigUInt() = default;
    constexpr explicit BigUInt(std::uint64_t v) { limb[0] = v; }

    template <std::size_t M>
        requires(M < N)
    constexpr explicit BigUInt(const BigUInt<M>& small) {
        for (std::size_t i = 0; i < M; ++i) limb[i] = small.limb[i];
    }

    static constexpr BigUInt zero() { return BigUInt{}; }
    static constexpr BigUInt one() { return BigUInt{1}; }

    constexpr bool is_zero() const {
        for (auto w : limb)
            if (w != 0) return false;
        return true;
    }
    constexpr bool is_odd() const { return (limb[0] & 1U) != 0; }

    constexpr bool bit(std::size_t i) const {
        return i < kBits && ((limb[i / 64] >> (i % 64)) & 1U) != 0;
    }

    constexpr void set_bit(std::size_t i) { limb[i / 64] |= std::uint64_t{1} << (i % 64); }

    /// Position of the highest set bit plus one; 0 for zero.
    constexpr std::size_t bit_length() const {
        for (std::size_t i = N; i-- > 0;)
            if (limb[i] != 0) return 64 * i + (64 - static_cast<std::size_t>(std::countl_zero(limb[i])));
        return 0;
    }

    constexpr std::size_t popcount() const {
        std::size_t c = 0;
        for (auto w : limb) c += static_cast<std::size_t>(std::popcount(w));
        return c;
    }

    /// Number of limbs up to and including the highest nonzero one.
    constexpr std::size_t significant_limbs() const {
        for (std::size_t i = N; i-- > 0;)
            if (limb[i] != 0) return i + 1;
        return 0;
    }

    friend constexpr bool operator==(const BigUInt&, const BigUInt&) = default;

    friend constexpr std::strong_ordering operator<=>(const BigUInt& a, const BigUInt& b) {
        for (std::size_t i = N; i-- > 0;)
            if (a.limb[i] != b.limb[i]) return a.limb[i] <=> b.limb[i];
        return std::strong_ordering::equal;
    }

    /// this += b; returns the carry out.
    constexpr std::uint64_t add_in_place(const BigUInt& b) {
        std::uint64_t carry = 0;
        for (std::size_t i = 0; i < N; ++i) {
            u128 s = u128{limb[i]} + b.limb[i] + carry;
            limb[i] = static_cast<std::uint64_t>(s);
            carry = static_cast<std::uint64_t>(s >> 64);
        }
        return carry;
    }

    /// this -= b; returns the borrow out.
    constexpr std::uint64_t sub_in_place(const BigUInt& b) {
        std::uint64_t borrow = 0;
        for (std::size_t i = 0; i < N; ++i) {
            u128 d = u128{limb[i]} - b.limb[i] - borrow;
            limb[i] = static_cast<std::uint64_t>(d);
            borrow = static_cast<std::uint64_t>(d >> 64) & 1U;
        }
        return borrow;
    }

    friend constexpr BigUInt operator+(BigUInt a, const BigUInt& b) {
        a.add_in_place(b);
        return a;
    }
    friend constexpr BigUInt operator-(BigUInt a, const BigUInt& b) {
        a.sub_in_place(b);
        return a;
    }

    constexpr BigUInt shl1() const {
        BigUInt r;
        std::uint64_t carry = 0;
        for (std::size_t i = 0; i < N; ++i) {
            r.limb[i] = (limb[i] << 1) | carry;
            carry = limb[i] >> 63;
        }
        return r;
    }

    constexpr BigUInt shr1() const {
        BigUInt r;
        for (std::size_t i = 0; i < N; ++i) {
            r.limb[i] = limb[i] >> 1;
            if (i + 1 < N) r.limb[i] |= limb[i + 1] << 63;
        }
        return r;
    }

    /// Truncating cast to a narrower or wider width.
    template <std::size_t M>
    constexpr BigUInt<M> resize() const {
        BigUInt<M> r;
        for (std::size_t i = 0; i < (M < N ? M : N); ++i) r.limb[i] = limb[i];
        return r;
    }

    /// Big-endian byte serialization, exactly kBytes bytes.
    constexpr std::array<std::uint8_t, kBytes> to_bytes_be() const {
        std::array<std::uint8_t, kBytes> out{};
        for (std::size_t i = 0; i < kBytes; ++i)
            out[kBytes - 1 - i] = static_cast<std::uint8_t>(limb[i / 8] >> (8 * (i % 8)));
        return out;
    }

    /// Reads up to kBytes big-endian bytes.
    static constexpr BigUInt from_bytes_be(std::span<const std::uint8_t> bytes) {
        if (bytes.size() > kBytes) throw FormatError("integer byte string too long");
        BigUInt r;
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            std::size_t pos = bytes.size() - 1 - i;  // significance of bytes[pos] is i
            r.limb[i / 8] |= std::uint64_t{bytes[pos]} << (8 * (i % 8));
        }
        return r;
    }

    /// Lowercase, fixed width (2*kBytes hex chars), big-endian.
    std::string to_hex() const {
        static constexpr char kDigits[] = "0123456789abcdef";
        std::string s(2 * kBytes, '0');
        auto bytes = to_bytes_be();
        for (std::size_t i = 0; i < kBytes; ++i) {
            s[2 * i] = kDigits[bytes[i] >> 4];
            s[2 * i + 1] = kDigits[bytes[i] & 0xF];
        }
        return s;
    }

    /// Accepts an optional "0x" prefix and any number of hex digits that fit.
    static BigUInt from_hex(std::string_view s) {
        if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
        if (s.empty()) throw FormatError("empty hex string");
        BigUInt r;
        std::size_t nibble = 0;
        for (std::size_t i = s.size(); i-- > 0; ++nibble) {
            int v = hex_value(s[i]);
            if (v < 0) throw FormatError("invalid hex digit in '" + std::string(s) + "'");
            if (nibble >= 2 * kBytes) {
                if (v != 0) throw FormatError("hex value exceeds " + std::to_string(kBits) + " bits");
                continue;
            }
            r.limb[nibble / 16] |= std::uint64_t(v) << (4 * (nibble % 16));
        }
        return r;
    }

    std::string to_decimal() const {
        if (is_zero()) return "0";
        BigUInt q = *this;
        std::string digits;
        while (!q.is_zero()) {
            std::uint64_t rem = 0;
            for (std::size_t i = N; i-- > 0;) {
                u128 cur = (u128{rem} << 64) | q.limb[i];
                q.limb[i] = static_cast<std::uint64_t>(cur / 10);
                rem = static_cast<std::uint64_t>(cur % 10);
            }
            digits.push_back(static_cast<char>('0' + rem));
        }
        return {digits.rbegin(), digits.rend()};
    }

    /// Nearest double (may round up to the next power of two).
    double to_double() const {
        double r = 0.0;
        for (std::size_t i = N; i-- > 0;) r = r * 18446744073709551616.0 + static_cast<double>(limb[i]);
        return r;
    }

    /// Decimal parsing; overflow is a format error.
    static BigUInt from_decimal(std::string_view s) {
        if (s.empty()) throw FormatError("empty decimal string");
        BigUInt r;
        for (char c : s) {
            if (c < '0' || c > '9') throw FormatError("invalid decimal digit in '" + std::string(s) + "'");
            // r = r*10 + digit
            std::uint64_t carry = static_cast<std::uint64_t>(c - '0');
            for (std::size_t i = 0; i < N; ++i) {
                u128 t = u128{r.limb[i]} * 10 + carry;
                r.limb[i] = static_cast<std::uint64_t>(t);
                carry = static_cast<std::uint64_t>(t >> 64);
            }
            if (carry != 0) throw FormatError("decimal value exceeds " + std::to_string(kBits) + " bits");
        }
        return r;
    }

private:
    static constexpr int hex_value(char c) {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    }
};

using U256 = BigUInt<4>;
using U512 = BigUInt<8>;

/// Full product of an N-limb and an M-limb integer.
template <std::size_t N, std::size_t M>
constexpr BigUInt<N + M> mul_wide(const BigUInt<N>& a, const BigUInt<M>& b) {
    BigUInt<N + M> r;
    for (std::size_t i = 0; i < N; ++i) {
        std::uint64_t carry = 0;
        for (std::size_t j = 0; j < M; ++j) {
            u128 t = u128{a.limb[i]} * b.limb[j] + r.limb[i + j] + carry;
            r.limb[i + j] = static_cast<std::uint64_t>(t);
            carry = static_cast<std::uint64_t>(t >> 64);
        }
        r.limb[i + M] = carry;
    }
    return r;
}

}  // namespace eclab
