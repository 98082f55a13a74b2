// Seeded RNG wrapper. Distributions are hand-rolled on top of mt19937_64 so
// that streams are reproducible independent of the standard library's
// distribution implementations.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sapt {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Derive a child seed from a base seed and a stream label, so distinct
    // concerns (init/data/sampling) never share a stream.
    static std::uint64_t derive(std::uint64_t base, std::string_view label) {
        std::uint64_t h = 0xcbf29ce484222325ull ^ base;
        for (char c : label) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdull;
        h ^= h >> 33;
        return h;
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        // Rejection-free modulo is fine at desk scale; bias is < 2^-50 for n < 2^14.
        return static_cast<std::size_t>(engine_() % n);
    }

    // Standard normal via Box-Muller (no cached spare: keeps the stream
    // position a pure function of the number of calls).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(std::vector<double>& buf, double mean, double stddev) {
        for (double& x : buf) x = normal(mean, stddev);
    }

    // First k elements of a Fisher-Yates shuffle over {0..n-1}: a determinate
    // sample of k distinct indices.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (k > n) k = n;
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + uniform_index(n - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace sapt
