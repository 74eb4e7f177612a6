#include "branchsim/rng.hpp"

#include <cmath>
#include <numbers>

namespace branchsim {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// absorb one word into a running hash state
inline std::uint64_t absorb(std::uint64_t h, std::uint64_t w) { return mix64(h ^ (w + kGolden + (h << 6) + (h >> 2))); }
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t label_noise_hash(const Label& label) {
    std::uint64_t h = 0x243F6A8885A308D3ull;  // root sentinel
    for (std::uint32_t d : label.digits()) h = absorb(h, static_cast<std::uint64_t>(d) + 1);
    return h;
}

std::uint64_t noise_bits(const NoiseKey& k, NoiseStream stream, std::uint64_t counter) {
    std::uint64_t h = absorb(k.seed, k.label_hash);
    h = absorb(h, static_cast<std::uint64_t>(stream));
    h = absorb(h, counter);
    return h;
}

double noise_uniform(const NoiseKey& k, NoiseStream stream, std::uint64_t counter) {
    std::uint64_t bits = noise_bits(k, stream, counter);
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
}

double noise_normal(const NoiseKey& k, NoiseStream stream, std::uint64_t counter) {
    double u1 = noise_uniform(k, stream, 2 * counter);
    double u2 = noise_uniform(k, stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double noise_exponential(const NoiseKey& k, NoiseStream stream, std::uint64_t counter, double rate) {
    return -std::log(noise_uniform(k, stream, counter)) / rate;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t r) {
    return mix64(absorb(base, r));
}

}  // namespace branchsim
