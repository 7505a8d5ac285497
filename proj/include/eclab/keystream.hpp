#pragma once

// Deterministic keypair datasets.
//
// Private scalar for record i under seed S (random_stream mode):
//   keystream = ChaCha20(key = S, nonce = LE32(0) || LE64(i), counter = 0, 1, 2, ...)
// Each 64-byte block yields two 32-byte big-endian candidates, tried in order.
// Candidates are masked to the bit length of the group order n (a no-op for
// P-256) and the first d with 1 <= d <= n - 1 is the record's scalar.
// Sequential mode assigns scalar i + 1 to record i.
//
// Every record depends only on (S, mode, i), so any partition of the index
// range across workers produces the same bytes.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "eclab/bigint.hpp"
#include "eclab/chacha20.hpp"
#include "eclab/curve.hpp"
#include "eclab/errors.hpp"

namespace eclab {

enum class SeedMode { random_stream, sequential };

inline std::string to_string(SeedMode m) { return m == SeedMode::sequential ? "sequential" : "random"; }

inline SeedMode seed_mode_from_string(std::string_view s) {
    if (s == "random" || s == "random_stream") return SeedMode::random_stream;
    if (s == "sequential") return SeedMode::sequential;
    throw ConfigError("unknown seed mode '" + std::string(s) + "' (expected random or sequential)");
}

struct SeedSpec {
    std::array<std::uint8_t, 32> seed{};
    SeedMode mode = SeedMode::random_stream;

    /// Up to 64 hex digits, read as a big-endian 256-bit value.
    static SeedSpec from_hex(std::string_view hex, SeedMode mode = SeedMode::random_stream) {
        return {U256::from_hex(hex).to_bytes_be(), mode};
    }
    std::string seed_hex() const { return U256::from_bytes_be(seed).to_hex(); }

    friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

struct SplitSpec {
    std::uint64_t train_count = 512;
    std::uint64_t eval_count = 128;
};

/// 33-byte SEC1 compressed public key followed by the 32-byte big-endian scalar.
struct DatasetRecord {
    CompressedPoint public_key{};
    std::array<std::uint8_t, 32> private_key{};

    static constexpr std::size_t kSize = 65;

    friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

inline constexpr std::array<char, 8> kDatasetMagic = {'E', 'C', 'L', 'A', 'B', 'D', 'S', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderSize = 8 + 4 + 8;

inline U256 private_scalar(const SeedSpec& spec, std::uint64_t index, const CurveParams& params) {
    if (spec.mode == SeedMode::sequential) {
        U256 d{index};
        d.add_in_place(U256{1});
        if (d.is_zero() || d >= params.order()) throw DomainError("sequential scalar exceeds the group order");
        return d;
    }
    ChaCha20::Nonce nonce{};
    for (std::size_t b = 0; b < 8; ++b) nonce[4 + b] = static_cast<std::uint8_t>(index >> (8 * b));
    const std::size_t order_bits = params.order().bit_length();
    for (std::uint64_t counter = 0; counter <= 0xFFFFFFFFULL; ++counter) {
        auto block = ChaCha20::block(spec.seed, static_cast<std::uint32_t>(counter), nonce);
        for (std::size_t half = 0; half < 2; ++half) {
            U256 d = U256::from_bytes_be(std::span<const std::uint8_t>(block).subspan(32 * half, 32));
            for (std::size_t bit = order_bits; bit < 256; ++bit) d.limb[bit / 64] &= ~(std::uint64_t{1} << (bit % 64));
            if (!d.is_zero() && d < params.order()) return d;
        }
    }
    throw DomainError("keystream exhausted without an in-range scalar");
}

inline DatasetRecord make_record(const U256& d, const CurveParams& params) {
    KeyPair kp = derive_public(d, params);
    return {encode_compressed(kp.Q), d.to_bytes_be()};
}

inline DatasetRecord make_record(const SeedSpec& spec, std::uint64_t index, const CurveParams& params) {
    return make_record(private_scalar(spec, index, params), params);
}

/// Records [first, first + count); workers split the range into contiguous blocks.
inline std::vector<DatasetRecord> generate_records(const SeedSpec& spec, std::uint64_t first, std::uint64_t count,
                                                   const CurveParams& params, unsigned workers = 1) {
    std::vector<DatasetRecord> out(count);
    workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::uint64_t>(count, 1))));
    auto fill = [&](std::uint64_t lo, std::uint64_t hi) {
        for (std::uint64_t i = lo; i < hi; ++i) out[i] = make_record(spec, first + i, params);
    };
    if (workers == 1) {
        fill(0, count);
        return out;
    }
    std::vector<std::thread> pool;
    std::uint64_t chunk = (count + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        std::uint64_t lo = std::min<std::uint64_t>(count, w * chunk);
        std::uint64_t hi = std::min<std::uint64_t>(count, lo + chunk);
        pool.emplace_back(fill, lo, hi);
    }
    for (auto& t : pool) t.join();
    return out;
}

/// True when the stored public key is exactly derive(private).Q.
inline bool record_consistent(const DatasetRecord& r, const CurveParams& params) {
    U256 d = U256::from_bytes_be(r.private_key);
    if (d.is_zero() || d >= params.order()) return false;
    return encode_compressed(derive_public(d, params).Q) == r.public_key;
}

namespace detail {
inline void put_le(std::string& buf, std::uint64_t v, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(const std::uint8_t* p, std::size_t bytes) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
}
inline std::string hex_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * bytes.size());
    for (auto b : bytes) {
        s.push_back(kDigits[b >> 4]);
        s.push_back(kDigits[b & 0xF]);
    }
    return s;
}
inline bool hex_decode(std::string_view hex, std::span<std::uint8_t> out) {
    if (hex.size() != 2 * out.size()) return false;
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = nib(hex[2 * i]), lo = nib(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) return false;
        out[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return true;
}
}  // namespace detail

/// magic "ECLABDS1" | u32 version | u64 record count | count * 65-byte records; integers little-endian.
inline void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
    std::string buf;
    buf.reserve(kDatasetHeaderSize + records.size() * DatasetRecord::kSize);
    buf.append(kDatasetMagic.data(), kDatasetMagic.size());
    detail::put_le(buf, kDatasetVersion, 4);
    detail::put_le(buf, records.size(), 8);
    for (const auto& r : records) {
        buf.append(reinterpret_cast<const char*>(r.public_key.data()), r.public_key.size());
        buf.append(reinterpret_cast<const char*>(r.private_key.data()), r.private_key.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write to '" + path.string() + "' failed");
}

/// Validates the header and per-record framing (prefix byte, nonzero scalar).
/// Pair consistency is checked separately by record_consistent.
inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < kDatasetHeaderSize) throw FormatError("dataset header truncated");
    if (!std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), bytes.begin()))
        throw FormatError("bad dataset magic");
    if (detail::get_le(bytes.data() + 8, 4) != kDatasetVersion) throw FormatError("unsupported dataset version");
    std::uint64_t count = detail::get_le(bytes.data() + 12, 8);
    std::size_t body = bytes.size() - kDatasetHeaderSize;
    if (body % DatasetRecord::kSize != 0 || body / DatasetRecord::kSize != count) {
        std::size_t complete = body / DatasetRecord::kSize;
        throw RecordFormatError(complete, "dataset truncated or record count mismatch");
    }
    std::vector<DatasetRecord> out(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint8_t* p = bytes.data() + kDatasetHeaderSize + i * DatasetRecord::kSize;
        std::copy(p, p + 33, out[i].public_key.begin());
        std::copy(p + 33, p + 65, out[i].private_key.begin());
        if (p[0] != 0x02 && p[0] != 0x03) throw RecordFormatError(i, "invalid public key prefix");
        if (std::all_of(p + 33, p + 65, [](std::uint8_t b) { return b == 0; }))
            throw RecordFormatError(i, "zero private key");
    }
    return out;
}

struct DatasetFiles {
    std::filesystem::path train;
    std::filesystem::path eval;
};

/// Train split is records [0, train_count), eval split the next eval_count.
inline DatasetFiles generate_fixed_dataset(const SeedSpec& spec, const SplitSpec& split, const CurveParams& params,
                                           const std::filesystem::path& out_dir, unsigned workers = 1) {
    if (split.train_count < 1) throw ConfigError("train_count must be at least 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    DatasetFiles files{out_dir / "train.bin", out_dir / "eval.bin"};
    write_dataset(files.train, generate_records(spec, 0, split.train_count, params, workers));
    write_dataset(files.eval, generate_records(spec, split.train_count, split.eval_count, params, workers));
    return files;
}

/// Lazy, unbounded sequence of record batches drawn at consecutive indices.
class RecordStream {
public:
    RecordStream(SeedSpec spec, std::size_t batch_size, const CurveParams& params, std::uint64_t start_index = 0)
        : spec_(spec), batch_size_(batch_size), params_(&params), next_(start_index) {
        if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    }

    std::vector<DatasetRecord> next_batch() {
        std::vector<DatasetRecord> batch;
        batch.reserve(batch_size_);
        for (std::size_t i = 0; i < batch_size_; ++i) batch.push_back(make_record(spec_, next_++, *params_));
        return batch;
    }

    std::uint64_t position() const { return next_; }

private:
    SeedSpec spec_;
    std::size_t batch_size_;
    const CurveParams* params_;
    std::uint64_t next_;
};

inline RecordStream stream_batches(const SeedSpec& spec, std::size_t batch_size, const CurveParams& params,
                                   std::uint64_t start_index = 0) {
    return RecordStream(spec, batch_size, params, start_index);
}

inline constexpr std::string_view kCsvHeader = "pub_hex,priv_hex";

inline std::string records_to_csv(std::span<const DatasetRecord> records) {
    std::string out(kCsvHeader);
    out.push_back('\n');
    for (const auto& r : records) {
        out += detail::hex_encode(r.public_key);
        out.push_back(',');
        out += detail::hex_encode(r.private_key);
        out.push_back('\n');
    }
    return out;
}

inline void export_csv(const std::filesystem::path& dataset, const std::filesystem::path& csv) {
    auto records = read_dataset(dataset);
    std::ofstream f(csv, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + csv.string() + "' for writing");
    f << records_to_csv(records);
    if (!f) throw IoError("write to '" + csv.string() + "' failed");
}

inline std::vector<DatasetRecord> import_csv(const std::filesystem::path& csv) {
    std::ifstream f(csv);
    if (!f) throw IoError("cannot open '" + csv.string() + "'");
    std::string line;
    if (!std::getline(f, line) || line != kCsvHeader) throw FormatError("missing CSV header");
    std::vector<DatasetRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::size_t idx = out.size();
        auto comma = line.find(',');
        if (comma == std::string::npos) throw RecordFormatError(idx, "expected two columns");
        DatasetRecord r;
        if (!detail::hex_decode(std::string_view(line).substr(0, comma), r.public_key) ||
            !detail::hex_decode(std::string_view(line).substr(comma + 1), r.private_key))
            throw RecordFormatError(idx, "bad hex field");
        if (r.public_key[0] != 0x02 && r.public_key[0] != 0x03)
            throw RecordFormatError(idx, "invalid public key prefix");
        out.push_back(r);
    }
    return out;
}

}  // namespace eclab
