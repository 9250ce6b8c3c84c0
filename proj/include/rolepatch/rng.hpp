#pragma once

#include <cstdint>
#include <vector>

namespace rolepatch {

// Deterministic PRNG used everywhere randomness is needed (toy weights,
// dataset sampling, pair construction). splitmix64 core: identical output
// on every platform, unlike std:: distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [-scale, scale).
    float next_float_symmetric(float scale) {
        return static_cast<float>((next_double() * 2.0 - 1.0) * scale);
    }

    // Uniform integer in [0, n). Multiply-shift; avoids modulo bias well
    // enough for test-scale n and stays platform-deterministic.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // k distinct indices drawn from [0, n), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        shuffle(pool);
        pool.resize(k < n ? k : n);
        return pool;
    }

private:
    std::uint64_t state_;
};

} // namespace rolepatch
