#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wimle {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Derives independent, named RNG streams from one run seed.
///
/// A stream is a pure function of (seed, name, index), so the order in which
/// streams are created or consumed never changes what any of them produces.
class SeedSequence {
public:
    explicit SeedSequence(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t derive(std::string_view name, std::uint64_t index = 0) const noexcept
    {
        std::uint64_t h = detail::splitmix64(seed_);
        h = detail::splitmix64(h ^ detail::fnv1a(name));
        return detail::splitmix64(h + index * 0xd1b54a32d192ed03ULL);
    }

    Rng stream(std::string_view name, std::uint64_t index = 0) const
    {
        return Rng(derive(name, index));
    }

private:
    std::uint64_t seed_;
};

}  // namespace wimle
