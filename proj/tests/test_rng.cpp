#include <doctest.h>

#include <cmath>
#include <vector>

#include "branchsim/label.hpp"
#include "branchsim/rng.hpp"
#include "branchsim/util.hpp"

using namespace branchsim;

TEST_SUITE("rng") {

TEST_CASE("draws are pure functions of the key") {
    NoiseKey k(42, Label::parse("0.1"));
    double a = noise_normal(k, NoiseStream::Diffusion, 7);
    double b = noise_normal(k, NoiseStream::Diffusion, 7);
    CHECK(a == b);
    // distinct counters, streams, labels and seeds all decouple
    CHECK(noise_normal(k, NoiseStream::Diffusion, 8) != a);
    CHECK(noise_normal(k, NoiseStream::Clock, 7) != a);
    NoiseKey k2(42, Label::parse("0.2"));
    CHECK(noise_normal(k2, NoiseStream::Diffusion, 7) != a);
    NoiseKey k3(43, Label::parse("0.1"));
    CHECK(noise_normal(k3, NoiseStream::Diffusion, 7) != a);
}

TEST_CASE("label hashing distinguishes words that flatten alike") {
    // (1,2) vs (12) vs (2,1): digit sequences must hash by position
    CHECK(label_noise_hash(Label::parse("1.2")) != label_noise_hash(Label::parse("12")));
    CHECK(label_noise_hash(Label::parse("1.2")) != label_noise_hash(Label::parse("2.1")));
    CHECK(label_noise_hash(Label::root()) != label_noise_hash(Label::parse("0")));
}

TEST_CASE("uniforms: moments and range") {
    NoiseKey k(7, Label::root());
    const int n = 200000;
    std::vector<double> u(n);
    for (int i = 0; i < n; ++i) {
        u[i] = noise_uniform(k, NoiseStream::Mark, static_cast<std::uint64_t>(i));
        CHECK(u[i] > 0.0);
        CHECK(u[i] <= 1.0);
    }
    auto ms = mean_se(u);
    CHECK(std::abs(ms.mean - 0.5) < 4.0 * ms.se);
    std::vector<double> u2(n);
    for (int i = 0; i < n; ++i) u2[i] = u[i] * u[i];
    auto ms2 = mean_se(u2);
    CHECK(std::abs(ms2.mean - 1.0 / 3.0) < 4.0 * ms2.se);
}

TEST_CASE("normals: mean, variance, kurtosis") {
    NoiseKey k(11, Label::parse("3"));
    const int n = 200000;
    std::vector<double> z(n), z2(n), z4(n);
    for (int i = 0; i < n; ++i) {
        z[i] = noise_normal(k, NoiseStream::Diffusion, static_cast<std::uint64_t>(i));
        z2[i] = z[i] * z[i];
        z4[i] = z2[i] * z2[i];
    }
    auto m1 = mean_se(z);
    auto m2 = mean_se(z2);
    auto m4 = mean_se(z4);
    CHECK(std::abs(m1.mean) < 4.0 * m1.se);
    CHECK(std::abs(m2.mean - 1.0) < 4.0 * m2.se);
    CHECK(std::abs(m4.mean - 3.0) < 4.0 * m4.se);
}

TEST_CASE("exponentials match their rate") {
    NoiseKey k(13, Label::root());
    const double rate = 2.5;
    const int n = 100000;
    std::vector<double> e(n);
    for (int i = 0; i < n; ++i) e[i] = noise_exponential(k, NoiseStream::Clock, static_cast<std::uint64_t>(i), rate);
    auto ms = mean_se(e);
    CHECK(std::abs(ms.mean - 1.0 / rate) < 4.0 * ms.se);
}

TEST_CASE("derived replicate seeds do not collide in small ranges") {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t r = 0; r < 10000; ++r) seeds.push_back(derive_seed(1234, r));
    std::sort(seeds.begin(), seeds.end());
    CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
}

TEST_CASE("pairwise sum is chunking-independent by construction") {
    std::vector<double> v;
    NoiseKey k(5, Label::root());
    for (int i = 0; i < 1000; ++i) v.push_back(noise_normal(k, NoiseStream::Diffusion, static_cast<std::uint64_t>(i)) * 1e6);
    double whole = pairwise_sum(v);
    // same tree evaluated twice is bitwise identical
    CHECK(pairwise_sum(v) == whole);
}

}  // TEST_SUITE

