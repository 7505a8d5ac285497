#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "eclab/keystream.hpp"
#include "support/temp_dir.hpp"

namespace eclab {
namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

SeedSpec seed_s() { return SeedSpec::from_hex("5eed"); }

TEST(ChaCha20, Rfc8439BlockVector) {
    ChaCha20::Key key{};
    for (std::size_t i = 0; i < 32; ++i) key[i] = static_cast<std::uint8_t>(i);
    ChaCha20::Nonce nonce{0, 0, 0, 0x09, 0, 0, 0, 0x4a, 0, 0, 0, 0};
    auto block = ChaCha20::block(key, 1, nonce);
    EXPECT_EQ(detail::hex_encode(block),
              "10f1e7e4d13b5915500fdd1fa32071c4c7d1f4c733c068030422aa9ac3d46c4e"
              "d2826446079faa0914c2d705d98b02a2b5129cd1de164eb9cbd083e8a2503c4e");
}

TEST(PrivateScalar, FirstCandidateForZeroSeed) {
    SeedSpec zero{};
    EXPECT_EQ(private_scalar(zero, 0, CurveParams::p256()).to_hex(),
              "76b8e0ada0f13d90405d6ae55386bd28bdd219b8a08ded1aa836efcc8b770dc7");
}

TEST(PrivateScalar, RejectionKeepsScalarsInRange) {
    for (const CurveParams* curve : {&CurveParams::p256(), &CurveParams::toy()}) {
        for (std::uint64_t i = 0; i < 500; ++i) {
            U256 d = private_scalar(seed_s(), i, *curve);
            ASSERT_FALSE(d.is_zero());
            ASSERT_LT(d, curve->order());
        }
    }
    // Masking to 9 bits leaves the toy scalars spread over the whole group.
    std::set<U256> toy_scalars;
    for (std::uint64_t i = 0; i < 5000; ++i) toy_scalars.insert(private_scalar(seed_s(), i, CurveParams::toy()));
    EXPECT_EQ(toy_scalars.size(), 316U);
    SeedSpec seq = seed_s();
    seq.mode = SeedMode::sequential;
    EXPECT_EQ(private_scalar(seq, 315, CurveParams::toy()), U256{316});
    EXPECT_THROW(private_scalar(seq, 316, CurveParams::toy()), DomainError);
}

TEST(FixedDataset, ByteIdenticalForIdenticalSeeds) {
    testing::TempDir dir;
    auto a = generate_fixed_dataset(seed_s(), {5, 2}, CurveParams::p256(), dir.path() / "a");
    auto b = generate_fixed_dataset(seed_s(), {5, 2}, CurveParams::p256(), dir.path() / "b");
    EXPECT_EQ(slurp(a.train), slurp(b.train));
    EXPECT_EQ(slurp(a.eval), slurp(b.eval));
    EXPECT_EQ(read_dataset(a.train).size(), 5U);
    EXPECT_EQ(read_dataset(a.eval).size(), 2U);
    EXPECT_EQ(std::filesystem::file_size(a.train), kDatasetHeaderSize + 5 * 65);
}

TEST(FixedDataset, TrainAndEvalAreDisjointSlicesOfOneStream) {
    testing::TempDir dir;
    auto files = generate_fixed_dataset(seed_s(), {4, 3}, CurveParams::p256(), dir.path());
    auto train = read_dataset(files.train);
    auto eval = read_dataset(files.eval);
    auto all = generate_records(seed_s(), 0, 7, CurveParams::p256());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(train[i], all[i]);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(eval[i], all[4 + i]);
}

TEST(FixedDataset, SequentialModeYieldsMultiplesOfG) {
    testing::TempDir dir;
    SeedSpec seq = seed_s();
    seq.mode = SeedMode::sequential;
    const auto& curve = CurveParams::p256();
    auto files = generate_fixed_dataset(seq, {3, 0}, curve, dir.path());
    auto recs = read_dataset(files.train);
    ASSERT_EQ(recs.size(), 3U);
    AffinePoint expect = curve.generator();
    JacobianPoint acc = to_jacobian(curve.generator(), curve);
    for (std::uint64_t k = 1; k <= 3; ++k) {
        EXPECT_EQ(U256::from_bytes_be(recs[k - 1].private_key), U256{k});
        EXPECT_EQ(decode_compressed(recs[k - 1].public_key, curve), expect);
        OpCounter c;
        acc = point_add(acc, curve.generator(), curve, c);
        expect = to_affine(acc);
    }
}

TEST(FixedDataset, FiveThousandRecordsHaveNoDuplicateScalars) {
    testing::TempDir dir;
    auto files = generate_fixed_dataset(seed_s(), {5000, 0}, CurveParams::p256(), dir.path());
    auto recs = read_dataset(files.train);
    ASSERT_EQ(recs.size(), 5000U);
    std::set<std::array<std::uint8_t, 32>> seen;
    for (const auto& r : recs) seen.insert(r.private_key);
    EXPECT_EQ(seen.size(), 5000U);
    for (std::size_t i = 0; i < recs.size(); i += 97) EXPECT_TRUE(record_consistent(recs[i], CurveParams::p256()));
}

TEST(FixedDataset, WorkerCountDoesNotChangeBytes) {
    auto one = generate_records(seed_s(), 10, 9, CurveParams::p256(), 1);
    auto four = generate_records(seed_s(), 10, 9, CurveParams::p256(), 4);
    EXPECT_EQ(one, four);
}

TEST(FixedDataset, RejectsEmptyTrainSplitAndUnwritableDestination) {
    testing::TempDir dir;
    EXPECT_THROW(generate_fixed_dataset(seed_s(), {0, 1}, CurveParams::p256(), dir.path()), ConfigError);
    std::ofstream(dir.path() / "file") << "x";
    EXPECT_THROW(generate_fixed_dataset(seed_s(), {1, 0}, CurveParams::p256(), dir.path() / "file" / "sub"),
                 IoError);
}

TEST(Stream, FreshStreamRepeatsFirstBatch) {
    auto s1 = stream_batches(seed_s(), 4, CurveParams::p256());
    auto first = s1.next_batch();
    auto second = s1.next_batch();
    EXPECT_NE(first, second);
    auto s2 = stream_batches(seed_s(), 4, CurveParams::p256());
    EXPECT_EQ(s2.next_batch(), first);
}

TEST(Stream, DifferentSeedsGiveDifferentBatches) {
    auto a = stream_batches(seed_s(), 4, CurveParams::p256()).next_batch();
    auto b = stream_batches(SeedSpec::from_hex("5eee"), 4, CurveParams::p256()).next_batch();
    EXPECT_NE(a, b);
}

TEST(Stream, HundredThousandDrawsHaveNoDuplicateScalars) {
    // Scalars are the only random component of a record; checking them directly
    // avoids 10^5 point multiplications.
    std::set<std::array<std::uint8_t, 32>> seen;
    for (std::uint64_t i = 0; i < 100000; ++i) seen.insert(private_scalar(seed_s(), i, CurveParams::p256()).to_bytes_be());
    EXPECT_EQ(seen.size(), 100000U);
}

TEST(Stream, EveryStreamedRecordIsConsistent) {
    auto s = stream_batches(seed_s(), 8, CurveParams::p256(), 1000);
    for (int b = 0; b < 3; ++b)
        for (const auto& r : s.next_batch()) EXPECT_TRUE(record_consistent(r, CurveParams::p256()));
    EXPECT_EQ(s.position(), 1024U);
    EXPECT_THROW(stream_batches(seed_s(), 0, CurveParams::p256()), ConfigError);
}

TEST(Csv, EmptyAndSingleRecordAndRoundTrip) {
    testing::TempDir dir;
    write_dataset(dir.path() / "empty.bin", {});
    export_csv(dir.path() / "empty.bin", dir.path() / "empty.csv");
    EXPECT_EQ(slurp(dir.path() / "empty.csv"), "pub_hex,priv_hex\n");

    auto recs = generate_records(seed_s(), 0, 1, CurveParams::p256());
    write_dataset(dir.path() / "one.bin", recs);
    export_csv(dir.path() / "one.bin", dir.path() / "one.csv");
    std::string csv = slurp(dir.path() / "one.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);

    auto many = generate_records(seed_s(), 0, 12, CurveParams::p256());
    write_dataset(dir.path() / "many.bin", many);
    export_csv(dir.path() / "many.bin", dir.path() / "many.csv");
    EXPECT_EQ(import_csv(dir.path() / "many.csv"), many);
}

TEST(Csv, MalformedRecordReportsIndex) {
    testing::TempDir dir;
    auto recs = generate_records(seed_s(), 0, 3, CurveParams::p256());
    recs[2].public_key[0] = 0x07;
    write_dataset(dir.path() / "bad.bin", recs);
    try {
        export_csv(dir.path() / "bad.bin", dir.path() / "bad.csv");
        FAIL() << "expected RecordFormatError";
    } catch (const RecordFormatError& e) {
        EXPECT_EQ(e.index(), 2U);
    }
}

TEST(DatasetFile, RejectsBadMagicAndTruncation) {
    testing::TempDir dir;
    auto recs = generate_records(seed_s(), 0, 2, CurveParams::p256());
    write_dataset(dir.path() / "d.bin", recs);
    std::string bytes = slurp(dir.path() / "d.bin");

    std::ofstream(dir.path() / "trunc.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
    EXPECT_THROW(read_dataset(dir.path() / "trunc.bin"), RecordFormatError);

    bytes[0] = 'X';
    std::ofstream(dir.path() / "magic.bin", std::ios::binary) << bytes;
    EXPECT_THROW(read_dataset(dir.path() / "magic.bin"), FormatError);
    EXPECT_THROW(read_dataset(dir.path() / "missing.bin"), IoError);
}

TEST(DatasetFile, HeaderLayout) {
    testing::TempDir dir;
    auto recs = generate_records(seed_s(), 0, 2, CurveParams::p256());
    write_dataset(dir.path() / "d.bin", recs);
    std::string bytes = slurp(dir.path() / "d.bin");
    EXPECT_EQ(bytes.substr(0, 8), "ECLABDS1");
    EXPECT_EQ(bytes.substr(8, 4), std::string("\x01\x00\x00\x00", 4));
    EXPECT_EQ(bytes.substr(12, 8), std::string("\x02\x00\x00\x00\x00\x00\x00\x00", 8));
    EXPECT_EQ(bytes.substr(20, 33), std::string(recs[0].public_key.begin(), recs[0].public_key.end()));
}

}  // namespace
}  // namespace eclab
