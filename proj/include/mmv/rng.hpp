#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace mmv {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Key of a named substream derived from the top-level seed.
constexpr std::uint64_t substream(std::uint64_t seed, std::string_view name) noexcept {
    return mix64(seed ^ mix64(hash_name(name)));
}

// Counter-based generator: output k of stream `key` is mix64(key + k*gamma),
// so any (key, index) pair can be generated independently of the others.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t key, std::uint64_t index) noexcept
        : state_(mix64(key ^ mix64(index + 0x632be59bd9b4e019ULL))) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace mmv
