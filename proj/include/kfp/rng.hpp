// Counter-based random number generation.
//
// Every draw is a pure function of (seed, stream, particle index, draw
// index), so sampling loops can be parallelized in any order and still
// produce bit-identical output.

#ifndef KFP_RNG_HPP
#define KFP_RNG_HPP

#include <cmath>
#include <cstdint>

namespace kfp {

namespace rng_stream {
// Stream tags keep independent uses of the same (seed, particle) pair
// from colliding.
inline constexpr std::uint64_t position = 0x706f736974696f6eULL;
inline constexpr std::uint64_t velocity = 0x76656c6f63697479ULL;
inline constexpr std::uint64_t jitter   = 0x6a69747465720000ULL;
inline constexpr std::uint64_t beam     = 0x6265616d00000000ULL;
inline constexpr std::uint64_t init     = 0x696e697400000000ULL;
}  // namespace rng_stream

// SplitMix64 finalizer; full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::uint64_t stream, std::uint64_t index,
                       std::uint64_t draw) const {
        std::uint64_t z = mix64(seed_ ^ mix64(stream));
        z = mix64(z ^ mix64(index));
        return mix64(z ^ draw);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform(std::uint64_t stream, std::uint64_t index,
                   std::uint64_t draw) const {
        return static_cast<double>(bits(stream, index, draw) >> 11) *
               0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes draw indices 2*draw and
    // 2*draw+1 of the stream.
    double normal(std::uint64_t stream, std::uint64_t index,
                  std::uint64_t draw) const {
        const double u1 = uniform(stream, index, 2 * draw);
        const double u2 = uniform(stream, index, 2 * draw + 1);
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

}  // namespace kfp

#endif
