#pragma once

#include <cmath>
#include <cstdint>

namespace proxbias {

// Counter-based generator: the i-th output is a pure function of (key, i),
// so independent streams can be split off by key derivation and any row of a
// simulation can be regenerated without sequencing through its predecessors.
// The mixer is the splitmix64 finalizer, which passes BigCrush as a stream.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0)
        : key_(key), ctr_(counter) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Stateless access: value at an absolute counter position.
    static std::uint64_t at(std::uint64_t key, std::uint64_t counter) {
        return mix(key + (counter + 1) * 0x9e3779b97f4a7c15ULL);
    }

    // Child key for an independent stream.
    static std::uint64_t derive(std::uint64_t key, std::uint64_t stream) {
        return mix(mix(key ^ 0x5851f42d4c957f2dULL) + stream);
    }

    std::uint64_t next_u64() { return at(key_, ctr_++); }

    // Uniform on (0, 1]; never 0 so log() below is safe.
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::uint64_t counter() const { return ctr_; }

private:
    std::uint64_t key_;
    std::uint64_t ctr_;
};

}  // namespace proxbias
