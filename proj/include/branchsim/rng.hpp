#pragma once

#include <cstdint>

#include "branchsim/label.hpp"

namespace branchsim {

// Counter-based noise: every random number is a pure function of
// (seed, label, stream, counter).  No generator state is carried between
// draws, so particles can be simulated in any order, replicates can be
// farmed out to any number of workers, and relabeling a run is exactly a
// re-keying of its noise.
enum class NoiseStream : std::uint64_t {
    Diffusion = 1,  // Brownian increments
    Clock = 2,      // candidate event clocks
    Mark = 3,       // thinning marks
};

// SplitMix64 finalizer; full-avalanche 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

// Collision-resistant fold of a label's digit word into 64 bits.
std::uint64_t label_noise_hash(const Label& label);

struct NoiseKey {
    std::uint64_t seed = 0;
    std::uint64_t label_hash = 0;  // from label_noise_hash

    NoiseKey() = default;
    NoiseKey(std::uint64_t s, const Label& l) : seed(s), label_hash(label_noise_hash(l)) {}
};

std::uint64_t noise_bits(const NoiseKey& k, NoiseStream stream, std::uint64_t counter);

// Uniform on (0,1] (never 0: safe under log).
double noise_uniform(const NoiseKey& k, NoiseStream stream, std::uint64_t counter);

// Standard normal via Box-Muller; consumes counters 2c and 2c+1 internally.
double noise_normal(const NoiseKey& k, NoiseStream stream, std::uint64_t counter);

// Exponential with the given rate (rate > 0).
double noise_exponential(const NoiseKey& k, NoiseStream stream, std::uint64_t counter, double rate);

// Stream of independent seeds for replicate r of a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t r);

}  // namespace branchsim
