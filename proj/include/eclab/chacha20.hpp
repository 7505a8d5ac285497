#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>

namespace eclab {

/// ChaCha20 block function (RFC 8439 state layout: 32-bit block counter,
/// 96-bit nonce).
class ChaCha20 {
public:
    using Key = std::array<std::uint8_t, 32>;
    using Nonce = std::array<std::uint8_t, 12>;
    using Block = std::array<std::uint8_t, 64>;

    static Block block(const Key& key, std::uint32_t counter, const Nonce& nonce) {
        std::array<std::uint32_t, 16> init{0x61707865U, 0x3320646eU, 0x79622d32U, 0x6b206574U};
        for (std::size_t i = 0; i < 8; ++i) init[4 + i] = load_le32(&key[4 * i]);
        init[12] = counter;
        for (std::size_t i = 0; i < 3; ++i) init[13 + i] = load_le32(&nonce[4 * i]);

        std::array<std::uint32_t, 16> x = init;
        for (int round = 0; round < 10; ++round) {
            quarter(x, 0, 4, 8, 12);
            quarter(x, 1, 5, 9, 13);
            quarter(x, 2, 6, 10, 14);
            quarter(x, 3, 7, 11, 15);
            quarter(x, 0, 5, 10, 15);
            quarter(x, 1, 6, 11, 12);
            quarter(x, 2, 7, 8, 13);
            quarter(x, 3, 4, 9, 14);
        }
        Block out{};
        for (std::size_t i = 0; i < 16; ++i) {
            std::uint32_t w = x[i] + init[i];
            for (std::size_t b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(w >> (8 * b));
        }
        return out;
    }

private:
    static std::uint32_t load_le32(const std::uint8_t* p) {
        return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
               (std::uint32_t{p[3]} << 24);
    }

    static void quarter(std::array<std::uint32_t, 16>& x, int a, int b, int c, int d) {
        x[a] += x[b];
        x[d] = std::rotl(x[d] ^ x[a], 16);
        x[c] += x[d];
        x[b] = std::rotl(x[b] ^ x[c], 12);
        x[a] += x[b];
        x[d] = std::rotl(x[d] ^ x[a], 8);
        x[c] += x[d];
        x[b] = std::rotl(x[b] ^ x[c], 7);
    }
};

}  // namespace eclab
