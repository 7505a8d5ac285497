#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "eclab/bigint.hpp"
#include "eclab/errors.hpp"

namespace eclab {

/// Tallies of priced field operations inside one counting scope.
/// Subtractions and negations count as additions.
struct OpCounter {
    std::uint64_t mults = 0;
    std::uint64_t squarings = 0;
    std::uint64_t additions = 0;
    std::uint64_t inversions = 0;

    void reset() { *this = OpCounter{}; }

    friend bool operator==(const OpCounter&, const OpCounter&) = default;

    friend OpCounter operator-(const OpCounter& a, const OpCounter& b) {
        return {a.mults - b.mults, a.squarings - b.squarings, a.additions - b.additions,
                a.inversions - b.inversions};
    }
};

/// An odd modulus >= 3 with precomputed Barrett constant mu = floor(2^(128k) / p),
/// where k is the number of significant 64-bit limbs of p.
///
/// Reduction works for any such modulus; primality is only needed by fe_inv
/// and fe_sqrt. FieldElements hold a pointer to their Modulus, so a Modulus
/// must outlive every element created from it.
class Modulus {
public:
    explicit Modulus(const U256& value) : value_(value) {
        if (!value.is_odd() || value < U256{3}) throw DomainError("modulus must be odd and >= 3");
        bit_length_ = value.bit_length();
        limbs_ = value.significant_limbs();
        compute_mu();
    }

    const U256& value() const { return value_; }
    std::size_t bit_length() const { return bit_length_; }
    std::size_t limbs() const { return limbs_; }
    /// Bytes needed for the fixed-width serialization of a residue.
    std::size_t byte_length() const { return (bit_length_ + 7) / 8; }

    /// x mod p for x given as little-endian limbs (any length up to 8).
    U256 reduce(std::span<const std::uint64_t> x) const {
        std::size_t len = x.size();
        while (len > 0 && x[len - 1] == 0) --len;
        if (len == 0) return U256{};

        const std::size_t k = limbs_;
        Wide buf{};
        if (len <= 2 * k) {
            for (std::size_t i = 0; i < len; ++i) buf[i] = x[i];
            return barrett(buf);
        }
        // Top 2k limbs first, then fold in one limb at a time: r*2^64 + w < 2^(64(k+1)).
        for (std::size_t i = 0; i < 2 * k; ++i) buf[i] = x[len - 2 * k + i];
        U256 r = barrett(buf);
        for (std::size_t pos = len - 2 * k; pos-- > 0;) {
            buf.fill(0);
            buf[0] = x[pos];
            for (std::size_t i = 0; i < k; ++i) buf[i + 1] = r.limb[i];
            r = barrett(buf);
        }
        return r;
    }

    /// a * b mod p for residues a, b < p; the product always fits in 2k limbs.
    U256 mul_reduced(const U256& a, const U256& b) const { return barrett(mul_wide(a, b).limb.data()); }

    friend bool operator==(const Modulus& a, const Modulus& b) { return a.value_ == b.value_; }

private:
    using Wide = std::array<std::uint64_t, 10>;

    void compute_mu() {
        // Bitwise long division of 2^(128k) by p; the remainder stays below 2p < 2^257.
        const std::size_t top = 128 * limbs_;
        BigUInt<5> rem;
        const BigUInt<5> p5{value_};
        for (std::size_t i = top + 1; i-- > 0;) {
            rem = rem.shl1();
            if (i == top) rem.limb[0] |= 1U;
            if (rem >= p5) {
                rem.sub_in_place(p5);
                mu_.set_bit(i);
            }
        }
    }

    U256 barrett(const Wide& x) const { return barrett(x.data()); }

    U256 barrett(const std::uint64_t* x) const {
        switch (limbs_) {
            case 1: return barrett_k<1>(x);
            case 2: return barrett_k<2>(x);
            case 3: return barrett_k<3>(x);
            default: return barrett_k<4>(x);
        }
    }

    // HAC 14.42 with base 2^64; x holds at most 2K limbs.
    template <std::size_t K>
    U256 barrett_k(const std::uint64_t* x) const {
        // q3 = floor(floor(x / b^(K-1)) * mu / b^(K+1)); only limbs >= K+1 of the product matter,
        // but the carries from below are needed, so the full product is formed.
        std::array<std::uint64_t, 2 * K + 2> q2{};
        for (std::size_t i = 0; i <= K; ++i) {
            std::uint64_t carry = 0;
            const std::uint64_t qi = x[K - 1 + i];
            for (std::size_t j = 0; j <= K; ++j) {
                u128 t = u128{qi} * mu_.limb[j] + q2[i + j] + carry;
                q2[i + j] = static_cast<std::uint64_t>(t);
                carry = static_cast<std::uint64_t>(t >> 64);
            }
            q2[i + K + 1] = carry;
        }

        // r2 = q3 * p mod b^(K+1)
        std::array<std::uint64_t, K + 1> r2{};
        for (std::size_t i = 0; i <= K; ++i) {
            std::uint64_t carry = 0;
            const std::uint64_t qi = q2[K + 1 + i];
            for (std::size_t j = 0; j < K && i + j <= K; ++j) {
                u128 t = u128{qi} * value_.limb[j] + r2[i + j] + carry;
                r2[i + j] = static_cast<std::uint64_t>(t);
                carry = static_cast<std::uint64_t>(t >> 64);
            }
            if (i == 0) r2[K] += carry;
        }

        // r = (x mod b^(K+1)) - r2 mod b^(K+1)
        std::array<std::uint64_t, K + 1> r{};
        std::uint64_t borrow = 0;
        for (std::size_t i = 0; i <= K; ++i) {
            u128 d = u128{x[i]} - r2[i] - borrow;
            r[i] = static_cast<std::uint64_t>(d);
            borrow = static_cast<std::uint64_t>(d >> 64) & 1U;
        }

        // At most two corrective subtractions.
        for (;;) {
            std::array<std::uint64_t, K + 1> t{};
            std::uint64_t b = 0;
            for (std::size_t i = 0; i <= K; ++i) {
                std::uint64_t pl = i < K ? value_.limb[i] : 0;
                u128 d = u128{r[i]} - pl - b;
                t[i] = static_cast<std::uint64_t>(d);
                b = static_cast<std::uint64_t>(d >> 64) & 1U;
            }
            if (b != 0) break;  // r < p
            r = t;
        }
        U256 out;
        for (std::size_t i = 0; i < K; ++i) out.limb[i] = r[i];
        return out;
    }

    U256 value_;
    std::size_t bit_length_ = 0;
    std::size_t limbs_ = 0;
    BigUInt<5> mu_;
};

/// A residue modulo a Modulus, always fully reduced.
class FieldElement {
public:
    FieldElement() = default;

    /// Reduces `v` modulo `m`.
    FieldElement(const U256& v, const Modulus& m) : value_(m.reduce(v.limb)), mod_(&m) {}

    static FieldElement zero(const Modulus& m) { return FieldElement(U256{}, m); }
    static FieldElement one(const Modulus& m) { return FieldElement(U256{1}, m); }

    /// Fixed-width big-endian lowercase hex (2 * byte_length chars; 64 for P-256).
    static FieldElement from_hex(std::string_view hex, const Modulus& m) {
        U256 v = U256::from_hex(hex);
        if (v >= m.value()) throw FormatError("field element hex is not reduced");
        return FieldElement(v, m);
    }

    const U256& value() const { return value_; }
    const Modulus& modulus() const {
        if (mod_ == nullptr) throw DomainError("uninitialized field element");
        return *mod_;
    }
    bool has_modulus() const { return mod_ != nullptr; }
    bool is_zero() const { return value_.is_zero(); }
    bool is_odd() const { return value_.is_odd(); }

    std::string to_hex() const {
        std::string full = value_.to_hex();
        return full.substr(full.size() - 2 * modulus().byte_length());
    }

    /// Big-endian bytes of the residue, padded to `width`.
    template <std::size_t Width>
    std::array<std::uint8_t, Width> to_bytes_be() const {
        static_assert(Width <= 32);
        auto full = value_.to_bytes_be();
        std::array<std::uint8_t, Width> out{};
        for (std::size_t i = 0; i < Width; ++i) out[i] = full[32 - Width + i];
        return out;
    }

    friend bool operator==(const FieldElement& a, const FieldElement& b) {
        return a.value_ == b.value_ && same_modulus(a, b);
    }

    friend bool same_modulus(const FieldElement& a, const FieldElement& b) {
        return a.mod_ == b.mod_ || (a.mod_ != nullptr && b.mod_ != nullptr && *a.mod_ == *b.mod_);
    }

private:
    struct Raw {};
    FieldElement(Raw, const U256& reduced, const Modulus* m) : value_(reduced), mod_(m) {}

    friend FieldElement fe_reduce(const U512&, const Modulus&);
    friend FieldElement fe_add(const FieldElement&, const FieldElement&, OpCounter&);
    friend FieldElement fe_sub(const FieldElement&, const FieldElement&, OpCounter&);
    friend FieldElement fe_mul_uncounted(const FieldElement&, const FieldElement&);

    U256 value_;
    const Modulus* mod_ = nullptr;
};

namespace detail {
inline const Modulus& shared_modulus(const FieldElement& a, const FieldElement& b) {
    if (!a.has_modulus() || !b.has_modulus()) throw DomainError("uninitialized field element");
    if (!same_modulus(a, b)) throw DomainError("field elements have different moduli");
    return a.modulus();
}
}  // namespace detail

/// a mod m for a up to 512 bits.
inline FieldElement fe_reduce(const U512& a, const Modulus& m) {
    return FieldElement(FieldElement::Raw{}, m.reduce(a.limb), &m);
}

inline FieldElement fe_add(const FieldElement& a, const FieldElement& b, OpCounter& counter) {
    const Modulus& m = detail::shared_modulus(a, b);
    U256 s = a.value();
    std::uint64_t carry = s.add_in_place(b.value());
    if (carry != 0 || s >= m.value()) s.sub_in_place(m.value());
    ++counter.additions;
    return FieldElement(FieldElement::Raw{}, s, &m);
}

inline FieldElement fe_sub(const FieldElement& a, const FieldElement& b, OpCounter& counter) {
    const Modulus& m = detail::shared_modulus(a, b);
    U256 d = a.value();
    if (d.sub_in_place(b.value()) != 0) d.add_in_place(m.value());
    ++counter.additions;
    return FieldElement(FieldElement::Raw{}, d, &m);
}

inline FieldElement fe_neg(const FieldElement& a, OpCounter& counter) {
    return fe_sub(FieldElement::zero(a.modulus()), a, counter);
}

inline FieldElement fe_mul_uncounted(const FieldElement& a, const FieldElement& b) {
    const Modulus& m = detail::shared_modulus(a, b);
    return FieldElement(FieldElement::Raw{}, m.mul_reduced(a.value(), b.value()), &m);
}

inline FieldElement fe_mul(const FieldElement& a, const FieldElement& b, OpCounter& counter) {
    FieldElement r = fe_mul_uncounted(a, b);
    ++counter.mults;
    return r;
}

/// Same value as fe_mul(a, a) but tallied as a squaring.
inline FieldElement fe_sqr(const FieldElement& a, OpCounter& counter) {
    FieldElement r = fe_mul_uncounted(a, a);
    ++counter.squarings;
    return r;
}

/// Left-to-right square-and-multiply; every internal squaring and
/// multiplication is tallied.
inline FieldElement fe_pow(const FieldElement& base, const U256& exponent, OpCounter& counter) {
    const Modulus& m = base.modulus();
    std::size_t bits = exponent.bit_length();
    if (bits == 0) return FieldElement::one(m);
    FieldElement r = base;
    for (std::size_t i = bits - 1; i-- > 0;) {
        r = fe_sqr(r, counter);
        if (exponent.bit(i)) r = fe_mul(r, base, counter);
    }
    return r;
}

/// Fermat inversion a^(p-2); requires a prime modulus.
inline FieldElement fe_inv(const FieldElement& a, OpCounter& counter) {
    if (a.is_zero()) throw DomainError("zero is not invertible");
    FieldElement r = fe_pow(a, a.modulus().value() - U256{2}, counter);
    ++counter.inversions;
    return r;
}

/// Square root for p = 3 (mod 4); throws DecodeError for non-residues.
inline FieldElement fe_sqrt(const FieldElement& a, OpCounter& counter) {
    const Modulus& m = a.modulus();
    if ((m.value().limb[0] & 3U) != 3U) throw DomainError("square root requires p = 3 mod 4");
    // (p + 1) / 4 = floor(p / 4) + 1 for p = 3 mod 4, without overflowing 256 bits.
    U256 e = m.value().shr1().shr1() + U256{1};
    FieldElement r = fe_pow(a, e, counter);
    if (!(fe_mul_uncounted(r, r) == a)) throw DecodeError("element is not a quadratic residue");
    return r;
}

// Uncounted conveniences.
inline FieldElement fe_add(const FieldElement& a, const FieldElement& b) {
    OpCounter c;
    return fe_add(a, b, c);
}
inline FieldElement fe_sub(const FieldElement& a, const FieldElement& b) {
    OpCounter c;
    return fe_sub(a, b, c);
}
inline FieldElement fe_mul(const FieldElement& a, const FieldElement& b) { return fe_mul_uncounted(a, b); }
inline FieldElement fe_sqr(const FieldElement& a) { return fe_mul_uncounted(a, a); }
inline FieldElement fe_inv(const FieldElement& a) {
    OpCounter c;
    return fe_inv(a, c);
}
inline FieldElement fe_sqrt(const FieldElement& a) {
    OpCounter c;
    return fe_sqrt(a, c);
}

}  // namespace eclab
