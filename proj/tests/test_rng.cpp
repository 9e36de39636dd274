#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mfb/rng.hpp"

using namespace mfb;

TEST_CASE("identical seed and stream reproduce the sequence exactly") {
    Rng a(42, 7), b(42, 7);
    for (int i = 0; i < 50; ++i) CHECK(a.uniform() == b.uniform());
    Rng c(42, 7), d(42, 7);
    for (int i = 0; i < 50; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("different streams from one seed decorrelate") {
    Rng a(42, 0), b(42, 1);
    int same = 0;
    for (int i = 0; i < 64; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("uniform stays in the half-open unit interval") {
    Rng rng(9, 0);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.03));
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("normal moments are near standard") {
    Rng rng(123, 4);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("uniform_int is bounded and covers the range") {
    Rng rng(5, 0);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(rng.uniform_int(0), ContractError);
}

TEST_CASE("sampling without replacement yields distinct in-range indices") {
    Rng rng(77, 2);
    auto idx = rng.sample_without_replacement(100, 40);
    CHECK(idx.size() == 40);
    std::set<int> s(idx.begin(), idx.end());
    CHECK(s.size() == 40);
    CHECK(*s.begin() >= 0);
    CHECK(*s.rbegin() < 100);

    auto all = rng.sample_without_replacement(5, 5);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 5; ++i) CHECK(all[i] == i);

    CHECK_THROWS_AS(rng.sample_without_replacement(3, 4), ContractError);
}
