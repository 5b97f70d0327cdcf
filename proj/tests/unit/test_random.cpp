#include "doctest.h"

#include "rbsde/random.hpp"

#include <cmath>
#include <set>

using namespace rbsde;

// Known-answer vectors published with the Random123 reference implementation.
TEST_CASE("Philox4x32-10 known answers") {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::apply(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::apply(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, K{0xffffffffu, 0xffffffffu}) ==
          C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::apply(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}) ==
          C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
    CounterStream a(42, 7), b(42, 7), c(42, 8), e(43, 7);
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        CHECK(va == b.uniform());
        CHECK(va != c.uniform());
        CHECK(va != e.uniform());
    }
}

TEST_CASE("uniform stays in the open unit interval") {
    CounterStream s(1, 0);
    double lo = 1, hi = 0, sum = 0;
    constexpr int kN = 200000;
    for (int i = 0; i < kN; ++i) {
        const double u = s.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
    CHECK(std::abs(sum / kN - 0.5) < 5.0 * std::sqrt(1.0 / 12.0 / kN));
}

TEST_CASE("normal moments") {
    CounterStream s(2024, 3);
    constexpr int kN = 200000;
    double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
    for (int i = 0; i < kN; ++i) {
        const double z = s.normal();
        m1 += z;
        m2 += z * z;
        m3 += z * z * z;
        m4 += z * z * z * z;
    }
    m1 /= kN;
    m2 /= kN;
    m3 /= kN;
    m4 /= kN;
    CHECK(std::abs(m1) < 5.0 / std::sqrt(kN));
    CHECK(std::abs(m2 - 1.0) < 5.0 * std::sqrt(2.0 / kN));
    CHECK(std::abs(m3) < 5.0 * std::sqrt(15.0 / kN));
    CHECK(std::abs(m4 - 3.0) < 5.0 * std::sqrt(96.0 / kN));
}

TEST_CASE("below covers its range") {
    CounterStream s(5, 5);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto v = s.below(3);
        CHECK(v < 3);
        seen.insert(v);
    }
    CHECK(seen.size() == 3);
}
