#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "eclab/bigint.hpp"
#include "eclab/errors.hpp"
#include "eclab/field.hpp"

namespace eclab {

/// Multiplication/squaring cost of one group-law formula.
struct FormulaCost {
    std::uint64_t mults;
    std::uint64_t squarings;
};

/// EFD dbl-2001-b, Jacobian doubling for a = -3.
inline constexpr FormulaCost kDoubleCostAMinus3{3, 5};
/// EFD dbl-2007-bl, Jacobian doubling for arbitrary a (the a*ZZ^2 product counts as a mult).
inline constexpr FormulaCost kDoubleCostGeneric{2, 8};
/// EFD madd-2007-bl, Jacobian + affine (Z2 = 1) addition.
inline constexpr FormulaCost kMixedAddCost{7, 4};

struct AffinePoint {
    FieldElement x;
    FieldElement y;
    bool at_infinity = false;

    static AffinePoint infinity() { return AffinePoint{{}, {}, true}; }

    friend bool operator==(const AffinePoint& p, const AffinePoint& q) {
        if (p.at_infinity || q.at_infinity) return p.at_infinity == q.at_infinity;
        return p.x == q.x && p.y == q.y;
    }
};

/// (X, Y, Z) represents (X/Z^2, Y/Z^3); Z = 0 is the point at infinity.
struct JacobianPoint {
    FieldElement X;
    FieldElement Y;
    FieldElement Z;

    bool is_infinity() const { return Z.is_zero(); }

    static JacobianPoint infinity(const Modulus& m) {
        return {FieldElement::one(m), FieldElement::one(m), FieldElement::zero(m)};
    }
};

/// Short-Weierstrass curve y^2 = x^3 + ax + b over F_p with a base point of
/// known order. Copies share the underlying Modulus.
class CurveParams {
public:
    /// Validates the discriminant, that G is on the curve, and that order*G = infinity.
    static CurveParams make(const U256& p, const U256& a, const U256& b, const U256& gx, const U256& gy,
                            const U256& order, std::string name);

    /// NIST P-256 / secp256r1.
    static const CurveParams& p256();

    /// y^2 = x^3 - 3x + 49 over F_311; the curve group has prime order 317 and G = (0, 7).
    static const CurveParams& toy();

    const Modulus& modulus() const { return *modulus_; }
    const FieldElement& a() const { return a_; }
    const FieldElement& b() const { return b_; }
    const AffinePoint& generator() const { return g_; }
    const U256& order() const { return order_; }
    const std::string& name() const { return name_; }
    bool a_is_minus_three() const { return a_minus_three_; }

    FieldElement element(const U256& v) const { return FieldElement(v, *modulus_); }

    /// x^3 + ax + b
    FieldElement rhs(const FieldElement& x) const {
        return fe_add(fe_add(fe_mul(fe_sqr(x), x), fe_mul(a_, x)), b_);
    }

    bool on_curve(const AffinePoint& p) const {
        if (p.at_infinity) return true;
        if (!same_modulus(p.x, a_) || !same_modulus(p.y, a_)) return false;
        return fe_sqr(p.y) == rhs(p.x);
    }

private:
    CurveParams() = default;

    std::shared_ptr<const Modulus> modulus_;
    FieldElement a_;
    FieldElement b_;
    AffinePoint g_;
    U256 order_;
    std::string name_;
    bool a_minus_three_ = false;
};

/// Private scalar, public point, and the field-operation tallies of the derivation.
struct KeyPair {
    U256 d;
    AffinePoint Q;
    OpCounter counts;
};

inline JacobianPoint to_jacobian(const AffinePoint& p, const CurveParams& params) {
    if (p.at_infinity) return JacobianPoint::infinity(params.modulus());
    return {p.x, p.y, FieldElement::one(params.modulus())};
}

/// One field inversion plus 1M + 1S for Z^-3, then 2M for the coordinates.
inline AffinePoint to_affine(const JacobianPoint& p, OpCounter& counter) {
    if (p.is_infinity()) return AffinePoint::infinity();
    FieldElement zinv = fe_inv(p.Z, counter);
    FieldElement zinv2 = fe_sqr(zinv, counter);
    FieldElement zinv3 = fe_mul(zinv2, zinv, counter);
    return {fe_mul(p.X, zinv2, counter), fe_mul(p.Y, zinv3, counter), false};
}

inline AffinePoint to_affine(const JacobianPoint& p) {
    OpCounter c;
    return to_affine(p, c);
}

inline AffinePoint negate(const AffinePoint& p) {
    if (p.at_infinity) return p;
    return {p.x, fe_sub(FieldElement::zero(p.y.modulus()), p.y), false};
}

inline JacobianPoint point_double(const JacobianPoint& p, const CurveParams& params, OpCounter& c) {
    if (p.is_infinity() || p.Y.is_zero()) return JacobianPoint::infinity(params.modulus());

    if (params.a_is_minus_three()) {
        // dbl-2001-b
        FieldElement delta = fe_sqr(p.Z, c);
        FieldElement gamma = fe_sqr(p.Y, c);
        FieldElement beta = fe_mul(p.X, gamma, c);
        FieldElement t = fe_mul(fe_sub(p.X, delta, c), fe_add(p.X, delta, c), c);
        FieldElement alpha = fe_add(fe_add(t, t, c), t, c);
        FieldElement beta2 = fe_add(beta, beta, c);
        FieldElement beta4 = fe_add(beta2, beta2, c);
        FieldElement beta8 = fe_add(beta4, beta4, c);
        FieldElement x3 = fe_sub(fe_sqr(alpha, c), beta8, c);
        FieldElement yz = fe_add(p.Y, p.Z, c);
        FieldElement z3 = fe_sub(fe_sub(fe_sqr(yz, c), gamma, c), delta, c);
        FieldElement g2 = fe_sqr(gamma, c);
        FieldElement g4 = fe_add(g2, g2, c);
        FieldElement g8 = fe_add(fe_add(g4, g4, c), fe_add(g4, g4, c), c);
        FieldElement y3 = fe_sub(fe_mul(alpha, fe_sub(beta4, x3, c), c), g8, c);
        return {x3, y3, z3};
    }

    // dbl-2007-bl
    FieldElement xx = fe_sqr(p.X, c);
    FieldElement yy = fe_sqr(p.Y, c);
    FieldElement yyyy = fe_sqr(yy, c);
    FieldElement zz = fe_sqr(p.Z, c);
    FieldElement s0 = fe_sub(fe_sub(fe_sqr(fe_add(p.X, yy, c), c), xx, c), yyyy, c);
    FieldElement s = fe_add(s0, s0, c);
    FieldElement m = fe_add(fe_add(fe_add(xx, xx, c), xx, c), fe_mul(params.a(), fe_sqr(zz, c), c), c);
    FieldElement x3 = fe_sub(fe_sqr(m, c), fe_add(s, s, c), c);
    FieldElement y4 = fe_add(yyyy, yyyy, c);
    FieldElement y8 = fe_add(fe_add(y4, y4, c), fe_add(y4, y4, c), c);
    FieldElement y3 = fe_sub(fe_mul(m, fe_sub(s, x3, c), c), y8, c);
    FieldElement z3 = fe_sub(fe_sub(fe_sqr(fe_add(p.Y, p.Z, c), c), yy, c), zz, c);
    return {x3, y3, z3};
}

/// madd-2007-bl. P = Q falls through to point_double after the
/// 3M + 1S spent detecting it; P = -Q returns infinity.
inline JacobianPoint point_add(const JacobianPoint& p, const AffinePoint& q, const CurveParams& params,
                               OpCounter& c) {
    if (q.at_infinity) return p;
    if (p.is_infinity()) return to_jacobian(q, params);

    FieldElement z1z1 = fe_sqr(p.Z, c);
    FieldElement u2 = fe_mul(q.x, z1z1, c);
    FieldElement s2 = fe_mul(fe_mul(q.y, p.Z, c), z1z1, c);
    FieldElement h = fe_sub(u2, p.X, c);
    FieldElement sy = fe_sub(s2, p.Y, c);
    if (h.is_zero()) {
        if (sy.is_zero()) return point_double(p, params, c);
        return JacobianPoint::infinity(params.modulus());
    }
    FieldElement r = fe_add(sy, sy, c);
    FieldElement hh = fe_sqr(h, c);
    FieldElement i2 = fe_add(hh, hh, c);
    FieldElement i = fe_add(i2, i2, c);
    FieldElement j = fe_mul(h, i, c);
    FieldElement v = fe_mul(p.X, i, c);
    FieldElement x3 = fe_sub(fe_sub(fe_sqr(r, c), j, c), fe_add(v, v, c), c);
    FieldElement y1j = fe_mul(p.Y, j, c);
    FieldElement y3 = fe_sub(fe_mul(r, fe_sub(v, x3, c), c), fe_add(y1j, y1j, c), c);
    FieldElement z3 = fe_sub(fe_sub(fe_sqr(fe_add(p.Z, h, c), c), z1z1, c), hh, c);
    return {x3, y3, z3};
}

namespace detail {
// Left-to-right double-and-add without the k < order precondition.
inline AffinePoint scalar_mult_unchecked(const U256& k, const AffinePoint& p, const CurveParams& params,
                                         OpCounter& counter) {
    std::size_t bits = k.bit_length();
    if (bits == 0 || p.at_infinity) return AffinePoint::infinity();
    JacobianPoint r = to_jacobian(p, params);
    for (std::size_t i = bits - 1; i-- > 0;) {
        r = point_double(r, params, counter);
        if (k.bit(i)) r = point_add(r, p, params, counter);
    }
    return to_affine(r, counter);
}
}  // namespace detail

/// k*P by left-to-right double-and-add; the final conversion does one fe_inv.
inline AffinePoint scalar_mult(const U256& k, const AffinePoint& p, const CurveParams& params,
                               OpCounter& counter) {
    if (k >= params.order()) throw DomainError("scalar must be below the group order");
    return detail::scalar_mult_unchecked(k, p, params, counter);
}

inline AffinePoint scalar_mult(const U256& k, const AffinePoint& p, const CurveParams& params) {
    OpCounter c;
    return scalar_mult(k, p, params, c);
}

inline KeyPair derive_public(const U256& d, const CurveParams& params) {
    if (d.is_zero() || d >= params.order()) throw DomainError("private scalar must lie in [1, order - 1]");
    KeyPair kp{d, {}, {}};
    kp.Q = scalar_mult(d, params.generator(), params, kp.counts);
    return kp;
}

using CompressedPoint = std::array<std::uint8_t, 33>;

/// SEC1 compressed form: 0x02/0x03 parity prefix then x as 32 big-endian bytes.
/// Toy-curve coordinates are zero-padded to the same 32 bytes.
inline CompressedPoint encode_compressed(const AffinePoint& q) {
    if (q.at_infinity) throw FormatError("cannot encode the point at infinity");
    CompressedPoint out{};
    out[0] = q.y.is_odd() ? 0x03 : 0x02;
    auto x = q.x.value().to_bytes_be();
    for (std::size_t i = 0; i < 32; ++i) out[1 + i] = x[i];
    return out;
}

inline AffinePoint decode_compressed(std::span<const std::uint8_t, 33> bytes, const CurveParams& params) {
    if (bytes[0] != 0x02 && bytes[0] != 0x03) throw FormatError("invalid compressed point prefix");
    U256 xv = U256::from_bytes_be(bytes.subspan<1, 32>());
    if (xv >= params.modulus().value()) throw DecodeError("x-coordinate is not a field element");
    FieldElement x = params.element(xv);
    FieldElement y = fe_sqrt(params.rhs(x));
    bool want_odd = bytes[0] == 0x03;
    if (y.is_odd() != want_odd) {
        if (y.is_zero()) throw DecodeError("no point with the requested y parity");
        y = fe_sub(FieldElement::zero(params.modulus()), y);
    }
    return {x, y, false};
}

inline CurveParams CurveParams::make(const U256& p, const U256& a, const U256& b, const U256& gx,
                                     const U256& gy, const U256& order, std::string name) {
    CurveParams c;
    c.modulus_ = std::make_shared<const Modulus>(p);
    const Modulus& m = *c.modulus_;
    if (a >= p || b >= p || gx >= p || gy >= p) throw DomainError("curve constants must be reduced mod p");
    c.a_ = FieldElement(a, m);
    c.b_ = FieldElement(b, m);
    c.g_ = {FieldElement(gx, m), FieldElement(gy, m), false};
    c.order_ = order;
    c.name_ = std::move(name);
    c.a_minus_three_ = fe_add(c.a_, FieldElement(U256{3}, m)).is_zero();

    FieldElement a3 = fe_mul(fe_sqr(c.a_), c.a_);
    FieldElement disc = fe_add(fe_mul(FieldElement(U256{4}, m), a3), fe_mul(FieldElement(U256{27}, m), fe_sqr(c.b_)));
    if (disc.is_zero()) throw DomainError("singular curve: 4a^3 + 27b^2 = 0");
    if (!c.on_curve(c.g_)) throw DomainError("base point is not on the curve");
    if (order < U256{2}) throw DomainError("group order must be at least 2");
    OpCounter scratch;
    if (!detail::scalar_mult_unchecked(order, c.g_, c, scratch).at_infinity)
        throw DomainError("order * G is not the point at infinity");
    return c;
}

inline const CurveParams& CurveParams::p256() {
    static const CurveParams curve = make(
        U256::from_hex("ffffffff00000001000000000000000000000000ffffffffffffffffffffffff"),
        U256::from_hex("ffffffff00000001000000000000000000000000fffffffffffffffffffffffc"),
        U256::from_hex("5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b"),
        U256::from_hex("6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"),
        U256::from_hex("4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5"),
        U256::from_hex("ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551"), "p256");
    return curve;
}

inline const CurveParams& CurveParams::toy() {
    static const CurveParams curve = make(U256{311}, U256{308}, U256{49}, U256{0}, U256{7}, U256{317}, "toy");
    return curve;
}

/// Looks up a built-in curve by name ("p256" or "toy").
inline const CurveParams& curve_by_name(const std::string& name) {
    if (name == "p256" || name == "secp256r1") return CurveParams::p256();
    if (name == "toy") return CurveParams::toy();
    throw ConfigError("unknown curve '" + name + "' (expected p256 or toy)");
}

}  // namespace eclab
