// Seed fan-out. One user-facing seed drives every random choice in the
// workbench; independent consumers derive their own stream by name+index so
// that adding a consumer never shifts the draws another one sees.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace surfbench {

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic sub-seed for the stream identified by (name, index).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t index = 0) {
    std::uint64_t h = detail::splitmix64(root ^ detail::fnv1a64(name));
    return detail::splitmix64(h ^ index);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view name,
                                std::uint64_t index = 0) {
    return std::mt19937_64(derive_seed(root, name, index));
}

}  // namespace surfbench
