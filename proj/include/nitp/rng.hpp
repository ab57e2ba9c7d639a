#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nitp {

// splitmix64 finalizer; good avalanche for seed derivation.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives an independent seed for a named substream (model init, data order,
// probe sampling, ...) so enabling one consumer never shifts another's stream.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t h = base ^ 0xcbf29ce484222325ull;
    for (char c : tag) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return mix64(mix64(h) ^ mix64(index + 0x51ed270b0a11ull));
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace nitp
