#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "autosame/core.hpp"

using namespace autosame;

TEST_CASE("rng: identical seeds give identical streams") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.uniform() == b.uniform());
    Rng c(1234), d(4321);
    int diff = 0;
    for (int i = 0; i < 100; ++i) diff += c.uniform() != d.uniform();
    CHECK(diff > 90);
}

TEST_CASE("rng: uniform stays in [0,1) and fills the range") {
    Rng r(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("rng: normal moments are sane") {
    Rng r(42);
    const int n = 50000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng: serialize round-trip resumes the exact stream") {
    Rng r(99);
    for (int i = 0; i < 37; ++i) r.normal();  // odd count leaves a cached spare
    const std::string state = r.serialize();
    std::vector<double> expect;
    for (int i = 0; i < 64; ++i) expect.push_back(r.normal());
    Rng q(0);
    q.deserialize(state);
    for (int i = 0; i < 64; ++i) CHECK(q.normal() == expect[static_cast<std::size_t>(i)]);
    CHECK_THROWS_AS(q.deserialize("not a state"), DataError);
}

TEST_CASE("rng: derived streams are stable and independent") {
    Rng a = Rng::derive(5, 10, 3);
    Rng b = Rng::derive(5, 10, 3);
    Rng c = Rng::derive(5, 11, 3);
    CHECK(a.uniform() == b.uniform());
    int diff = 0;
    for (int i = 0; i < 50; ++i) diff += a.uniform() != c.uniform();
    CHECK(diff > 45);
}

TEST_CASE("rng: uniform_int bounds and shuffle permutation") {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const auto v = r.uniform_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
    }
    std::vector<int> xs{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> ys = xs;
    r.shuffle(ys);
    std::vector<int> sorted = ys;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == xs);
}

TEST_CASE("check macros throw typed errors carrying the message") {
    try {
        ASAME_CHECK(false, "widget count must be positive");
        FAIL("unreachable");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("widget count") != std::string::npos);
    }
    try {
        ASAME_CHECK_SHAPE(false, "bad shape here");
        FAIL("unreachable");
    } catch (const ShapeMismatch& e) {
        CHECK(std::string(e.what()).find("bad shape") != std::string::npos);
    }
    // All error types share the common base.
    CHECK_THROWS_AS(throw DataError("x"), Error);
    CHECK_THROWS_AS(throw NumericError("x"), Error);
}
