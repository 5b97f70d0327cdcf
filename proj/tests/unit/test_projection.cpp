#include "doctest.h"

#include "rbsde/error.hpp"
#include "rbsde/projection.hpp"
#include "support.hpp"

#include <cmath>

using namespace rbsde;
using testsupport::Gen;

TEST_CASE("project: two regimes, unit costs") {
    const auto c = CostMatrix::uniform(2, 1.0);
    CHECK(project(c, std::vector<double>{0, 5}) == std::vector<double>{4, 5});
    CHECK(project(c, std::vector<double>{3, 3}) == std::vector<double>{3, 3});
}

TEST_CASE("project: three regimes, costs 0.5") {
    const auto c = CostMatrix::uniform(3, 0.5);
    CHECK(project(c, std::vector<double>{0, 0, 2}) == std::vector<double>{1.5, 1.5, 2});
}

TEST_CASE("project rejects dimension mismatch") {
    const auto c = CostMatrix::uniform(2, 1.0);
    CHECK_THROWS_AS(project(c, std::vector<double>{1, 2, 3}), InvalidArgument);
    CHECK_THROWS_AS(is_in_domain(c, std::vector<double>{1}), InvalidArgument);
}

TEST_CASE("is_in_domain") {
    const auto c = CostMatrix::uniform(2, 1.0);
    CHECK(is_in_domain(c, std::vector<double>{1, 0}));
    CHECK_FALSE(is_in_domain(c, std::vector<double>{0, 5}));
    CHECK(is_in_domain(CostMatrix(1), std::vector<double>{-7.25}));
}

TEST_CASE("projection_target picks the smallest maximiser") {
    const auto c = CostMatrix::uniform(3, 1.0);
    // From regime 1: y^2 - 1 = y^3 - 1 = 4 beats y^1 = 0.
    CHECK(projection_target(c, std::vector<double>{0, 5, 5}, 0) == 1);
    // Tie with staying: y^1 = 4 = y^2 - 1, stay wins since index 0 is smaller.
    CHECK(projection_target(c, std::vector<double>{4, 5, 0}, 0) == 0);
}

TEST_CASE("lipschitz witness ratio is sqrt(d)") {
    auto w2 = lipschitz_witness(2, CostMatrix::uniform(2, 1.0));
    CHECK(w2.y1 == std::vector<double>{1, 0});
    CHECK(w2.y2 == std::vector<double>{2, 0});
    CHECK(w2.ratio == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    auto w3 = lipschitz_witness(3, CostMatrix::uniform(3, 1.0));
    CHECK(std::abs(w3.ratio - std::sqrt(3.0)) <= 1e-12);
    CHECK_THROWS_AS(lipschitz_witness(1, CostMatrix(1)), InvalidArgument);
}

TEST_CASE("structure violations are itemised") {
    CostMatrix c(3, {0, 1, 3, 1, 0, 1, 3, 1, 0});
    const auto v = structure_violations(c);
    bool found = false;
    for (const auto& s : v) found = found || s == "c^{12}+c^{23}-c^{13} = -1 <= 0";
    CHECK(found);
    CHECK(structure_violations(CostMatrix::uniform(4, 0.3)).empty());
    CHECK_FALSE(structure_violations(CostMatrix(2, {0, 0, 1, 0})).empty());
    CHECK_FALSE(structure_violations(CostMatrix(2, {0.1, 1, 1, 0})).empty());
}

TEST_CASE("property: projection algebra on random valid costs") {
    Gen gen(20261015);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t d = gen.index(2, 5);
        const auto c = gen.costs(d, gen.uniform(0.05, 2.0));
        REQUIRE(structure_violations(c).empty());
        const auto y = gen.vec(d, -10, 10);
        const auto p = project(c, y);

        CHECK(p == testsupport::reference_projection(c, y));
        CHECK(project(c, p) == p);
        CHECK(is_in_domain(c, p));
        for (std::size_t i = 0; i < d; ++i) CHECK(p[i] >= y[i]);

        auto up = y;
        for (auto& v : up) v += gen.uniform(0, 3);
        const auto pu = project(c, up);
        for (std::size_t i = 0; i < d; ++i) CHECK(pu[i] >= p[i]);

        const auto y2 = gen.vec(d, -10, 10);
        const double ratio = testsupport::norm2(p, project(c, y2)) / testsupport::norm2(y, y2);
        CHECK(ratio <= std::sqrt(static_cast<double>(d)) + 1e-12);

        auto shifted = y;
        const double e = gen.uniform(-5, 5);
        for (auto& v : shifted) v += e;
        const auto ps = project(c, shifted);
        for (std::size_t i = 0; i < d; ++i) CHECK(ps[i] == doctest::Approx(p[i] + e).epsilon(1e-14));
    }
}

TEST_CASE("property: translation is exact on dyadic data") {
    // Multiples of 2^-10 below 2^10 keep every sum and difference exact.
    Gen gen(99);
    auto dyadic = [&](double lo, double hi) { return std::ldexp(std::round(std::ldexp(gen.uniform(lo, hi), 10)), -10); };
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = gen.index(2, 5);
        std::vector<double> cv(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (i != j) cv[i * d + j] = dyadic(1.0, 1.9);
        const CostMatrix c(d, cv);
        std::vector<double> y(d);
        for (auto& v : y) v = dyadic(-10, 10);
        const double e = dyadic(-5, 5);
        auto shifted = y;
        for (auto& v : shifted) v += e;
        const auto p = project(c, y);
        const auto ps = project(c, shifted);
        for (std::size_t i = 0; i < d; ++i) CHECK(ps[i] == p[i] + e);
    }
}

TEST_CASE("property: points of Q are fixed") {
    Gen gen(7);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t d = gen.index(1, 5);
        const auto c = gen.costs(d, 0.5);
        const auto y = project(c, gen.vec(d, -5, 5));
        CHECK(project(c, y) == y);
        CHECK(is_in_domain(c, y));
    }
}
