#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cour {

/// 64-bit FNV-1a. Used for stage keys, asset hashes and embedding buckets;
/// the constants are fixed so every derived value is stable across builds.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = kFnvOffset) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for a named stage: splitmix64(master ^ fnv1a(stage)). Stages are
/// keyed by name, so adding a stage never shifts the seeds of the others.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    return splitmix64(master ^ fnv1a(stage));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage, std::uint64_t index) {
    return derive_seed(master, std::string(stage) + "/" + std::to_string(index));
}

std::string hex64(std::uint64_t v);

}  // namespace cour
