#include <gtest/gtest.h>

#include <random>

#include "eclab/curve.hpp"
#include "eclab/field.hpp"
#include "support/bigint_oracle.hpp"

namespace eclab {
namespace {

using testing::cpp_int;
using testing::from_cpp;
using testing::random_big;
using testing::random_below;
using testing::to_cpp;

const Modulus& p97() {
    static const Modulus m{U256{97}};
    return m;
}
const Modulus& p256() { return CurveParams::p256().modulus(); }
const Modulus& toy() { return CurveParams::toy().modulus(); }

FieldElement fe(std::uint64_t v, const Modulus& m) { return FieldElement(U256{v}, m); }

TEST(Modulus, RejectsEvenAndTinyValues) {
    EXPECT_THROW(Modulus{U256{96}}, DomainError);
    EXPECT_THROW(Modulus{U256{1}}, DomainError);
    EXPECT_NO_THROW(Modulus{U256{3}});
}

TEST(Modulus, BitLengthIsHighestSetBit) {
    EXPECT_EQ(p97().bit_length(), 7U);
    EXPECT_EQ(toy().bit_length(), 9U);
    EXPECT_EQ(p256().bit_length(), 256U);
}

TEST(FeReduce, Examples) {
    EXPECT_TRUE(fe_reduce(U512{}, p97()).is_zero());
    EXPECT_EQ(fe_reduce(U512{3000}, p97()).value(), U256{90});
    U512 p_plus_one{p256().value()};
    p_plus_one.add_in_place(U512{1});
    EXPECT_EQ(fe_reduce(p_plus_one, p256()).value(), U256{1});
}

TEST(FeReduce, MatchesLongDivisionOnRandom512BitInputs) {
    std::mt19937_64 rng(7);
    for (const Modulus* m : {&p97(), &toy(), &p256()}) {
        cpp_int mod = to_cpp(m->value());
        for (int i = 0; i < 2000; ++i) {
            U512 a = random_big<8>(rng);
            // Sprinkle short inputs to exercise every limb count.
            for (std::size_t j = 1 + (i % 8); j < 8; ++j)
                if (i % 3 == 0) a.limb[j] = 0;
            ASSERT_EQ(to_cpp(fe_reduce(a, *m).value()), to_cpp(a) % mod) << "i=" << i;
        }
    }
}

TEST(FeAdd, Examples) {
    OpCounter c;
    FieldElement x = fe(42, p97());
    EXPECT_EQ(fe_add(x, fe(0, p97()), c), x);
    EXPECT_EQ(fe_add(fe(96, p97()), fe(5, p97()), c).value(), U256{4});
    FieldElement pm1(p256().value() - U256{1}, p256());
    EXPECT_TRUE(fe_add(pm1, FieldElement::one(p256()), c).is_zero());
    EXPECT_EQ(c.additions, 3U);
}

TEST(FeAdd, ModulusMismatchIsDomainError) {
    OpCounter c;
    EXPECT_THROW(fe_add(fe(1, p97()), fe(1, toy()), c), DomainError);
    EXPECT_THROW(fe_mul(fe(1, p97()), fe(1, toy()), c), DomainError);
    EXPECT_EQ(c, OpCounter{});
}

TEST(FeAdd, EqualModuliFromDistinctObjectsAreCompatible) {
    Modulus other{U256{97}};
    EXPECT_EQ(fe_add(fe(50, p97()), fe(50, other)).value(), U256{3});
}

TEST(FeMul, Examples) {
    OpCounter c;
    FieldElement x = fe(77, p97());
    EXPECT_EQ(fe_mul(x, fe(1, p97()), c), x);
    EXPECT_EQ(fe_mul(fe(50, p97()), fe(60, p97()), c).value(), U256{90});
    EXPECT_TRUE(fe_mul(fe(0, p97()), x, c).is_zero());
    EXPECT_EQ(c.mults, 3U);
    EXPECT_EQ(c.squarings, 0U);
}

TEST(FeSqr, Examples) {
    OpCounter c;
    EXPECT_EQ(fe_sqr(fe(1, p97()), c).value(), U256{1});
    EXPECT_EQ(fe_sqr(fe(10, p97()), c).value(), U256{3});
    FieldElement pm1(p256().value() - U256{1}, p256());
    EXPECT_EQ(fe_sqr(pm1, c).value(), U256{1});
    EXPECT_EQ(c.squarings, 3U);
    EXPECT_EQ(c.mults, 0U);
}

TEST(FeInv, Examples) {
    OpCounter c;
    EXPECT_EQ(fe_inv(fe(1, p97()), c).value(), U256{1});
    EXPECT_EQ(fe_inv(fe(2, p97()), c).value(), U256{49});
    EXPECT_EQ(c.inversions, 2U);
    EXPECT_THROW(fe_inv(fe(0, p97()), c), DomainError);
}

TEST(FeInv, RandomP256ElementsInvert) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        FieldElement a(random_below(p256().value(), rng), p256());
        if (a.is_zero()) continue;
        ASSERT_EQ(fe_mul(a, fe_inv(a)).value(), U256{1});
    }
}

TEST(FeInv, CountsFermatInternals) {
    // p - 2 for p = 97 is 95 = 0b1011111: 6 squarings, 5 multiplications.
    OpCounter c;
    fe_inv(fe(5, p97()), c);
    EXPECT_EQ(c, (OpCounter{5, 6, 0, 1}));
}

TEST(FeSqrt, RecoversRootsAndRejectsNonResidues) {
    // 311 = 3 mod 4.
    int residues = 0;
    for (std::uint64_t v = 1; v < 311; ++v) {
        FieldElement a = fe(v, toy());
        try {
            FieldElement r = fe_sqrt(a);
            EXPECT_EQ(fe_sqr(r), a);
            ++residues;
        } catch (const DecodeError&) {
        }
    }
    EXPECT_EQ(residues, 155);
    EXPECT_THROW(fe_sqrt(fe(4, p97())), DomainError);  // 97 = 1 mod 4
}

TEST(FieldProperties, RingLawsOnToyPrimeAndP256) {
    std::mt19937_64 rng(3);
    for (const Modulus* m : {&toy(), &p256()}) {
        for (int i = 0; i < 10000; ++i) {
            FieldElement a(random_below(m->value(), rng), *m);
            FieldElement b(random_below(m->value(), rng), *m);
            FieldElement c(random_below(m->value(), rng), *m);
            ASSERT_EQ(fe_mul(fe_mul(a, b), c), fe_mul(a, fe_mul(b, c)));
            ASSERT_EQ(fe_mul(a, fe_add(b, c)), fe_add(fe_mul(a, b), fe_mul(a, c)));
            ASSERT_EQ(fe_sqr(a), fe_mul(a, a));
            ASSERT_LT(fe_add(a, b).value(), m->value());
            ASSERT_LT(fe_sub(a, b).value(), m->value());
            ASSERT_LT(fe_mul(a, b).value(), m->value());
        }
    }
}

TEST(FieldProperties, CounterConservation) {
    std::mt19937_64 rng(5);
    OpCounter c;
    FieldElement a(random_below(p256().value(), rng), p256());
    FieldElement acc = FieldElement::one(p256());
    const int k = 37, j = 19;
    for (int i = 0; i < k; ++i) acc = fe_mul(acc, a, c);
    for (int i = 0; i < j; ++i) acc = fe_sqr(acc, c);
    EXPECT_EQ(c, (OpCounter{k, j, 0, 0}));
    c.reset();
    EXPECT_EQ(c, OpCounter{});
}

TEST(FieldElement, HexIsFixedWidthBigEndianLowercase) {
    FieldElement one = FieldElement::one(p256());
    EXPECT_EQ(one.to_hex(), std::string(63, '0') + "1");
    FieldElement x = FieldElement::from_hex("ABCDEF", p256());
    EXPECT_EQ(x.to_hex(), std::string(58, '0') + "abcdef");
    EXPECT_EQ(fe(0x12e, toy()).to_hex(), "012e");
    EXPECT_THROW(FieldElement::from_hex("ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff", p256()),
                 FormatError);
    EXPECT_THROW(FieldElement::from_hex("12g4", p256()), FormatError);
}

TEST(BigUInt, DecimalAndHexRoundTrip) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        U256 v = random_big<4>(rng);
        ASSERT_EQ(U256::from_decimal(v.to_decimal()), v);
        ASSERT_EQ(U256::from_hex(v.to_hex()), v);
        ASSERT_EQ(v.to_decimal(), to_cpp(v).str());
    }
    EXPECT_THROW(U256::from_decimal(std::string(80, '9')), FormatError);
}

}  // namespace
}  // namespace eclab
