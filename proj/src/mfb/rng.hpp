#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "errors.hpp"

namespace mfb {

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// that streams are reproducible bit-for-bit independent of the standard
// library's distribution implementations. Independent streams are derived
// from (seed, stream).
class Rng {
  public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) {
        std::seed_seq seq{seed & 0xffffffffu, seed >> 32, stream & 0xffffffffu, stream >> 32};
        gen_.seed(seq);
    }

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw ContractError("uniform_int: n must be positive");
        // rejection to avoid modulo bias
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t lim = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do { x = gen_(); } while (x >= lim);
        return static_cast<int>(x % un);
    }

    /// Standard normal via Marsaglia's polar method (one cached value).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    /// n distinct indices drawn from [0, pool) without replacement (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int pool, int n) {
        if (n < 0 || n > pool) throw ContractError("sample_without_replacement: need 0 <= n <= pool");
        std::vector<int> idx(pool);
        for (int i = 0; i < pool; ++i) idx[i] = i;
        for (int i = 0; i < n; ++i) {
            const int j = i + uniform_int(pool - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(n);
        return idx;
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace mfb
