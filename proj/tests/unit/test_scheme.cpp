#include "doctest.h"

#include "rbsde/error.hpp"
#include "rbsde/forward.hpp"
#include "rbsde/scheme.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace rbsde;
using testsupport::Gen;

namespace {

Problem lattice_problem(std::size_t n, std::size_t kappa, CostMatrix c, Driver f, Terminal g, double x0 = 0.0,
                        double b = 0.0, double sigma = 1.0) {
    return Problem(testsupport::scalar_sde(x0, b, sigma), std::move(f), std::move(g), CostModel::constant(std::move(c)),
                   build_uniform_grid(1.0, n, kappa));
}

LatticeEngine engine_for(const Problem& p) { return LatticeEngine(build_lattice(p.sde, p.grid)); }

Problem random_problem(Gen& gen, std::size_t d, std::size_t n, std::size_t kappa) {
    const auto c = gen.costs(d, gen.uniform(0.05, 0.5));
    std::vector<double> a(d), bb(d), alpha(d), beta(d), gamma(d);
    for (std::size_t r = 0; r < d; ++r) {
        a[r] = gen.uniform(-1, 1);
        bb[r] = gen.uniform(-1, 1);
        alpha[r] = gen.uniform(-1, 1);
        beta[r] = gen.uniform(-1, 1);
        gamma[r] = gen.uniform(-0.5, 0.5);
    }
    return lattice_problem(n, kappa, c, testsupport::linear_driver(alpha, beta, gamma),
                           testsupport::affine_terminal(c, a, bb), gen.uniform(-1, 1), gen.uniform(-0.5, 0.5),
                           gen.uniform(0.2, 1.0));
}

}  // namespace

TEST_CASE("implicit_step examples") {
    const std::vector<double> x{0.0};
    std::vector<double> y(2);

    auto r = implicit_step(std::vector<double>{1.5, -2.0}, std::vector<double>(2, 0.0), x, Driver::zero(2), 0.1, y);
    CHECK(y == std::vector<double>{1.5, -2.0});
    CHECK(r.iterations <= 2);

    std::vector<double> y1(1);
    implicit_step(std::vector<double>{1.0}, std::vector<double>{0.0}, x, testsupport::linear_driver({0}, {0}, {-1}),
                  0.1, y1);
    CHECK(y1[0] == doctest::Approx(1.0 / 1.1).epsilon(1e-12));

    implicit_step(std::vector<double>{2.0}, std::vector<double>{0.0}, x, testsupport::linear_driver({3}, {0}, {0}),
                  0.25, y1);
    CHECK(y1[0] == doctest::Approx(2.75).epsilon(1e-14));
}

TEST_CASE("implicit_step rejections") {
    const std::vector<double> x{0.0};
    std::vector<double> y(1);
    const auto f = testsupport::linear_driver({0}, {0}, {-2});
    CHECK_THROWS_AS(implicit_step(std::vector<double>{1}, std::vector<double>{0}, x, f, 0.5, y), InvalidArgument);

    auto liar = testsupport::linear_driver({0}, {0}, {2});
    liar.lipschitz = 0.1;
    CHECK_THROWS_WITH_AS(implicit_step(std::vector<double>{1}, std::vector<double>{0}, x, liar, 1.0, y),
                         doctest::Contains("did not converge"), NumericalError);
    std::vector<double> wrong(2);
    CHECK_THROWS_AS(implicit_step(std::vector<double>{1}, std::vector<double>{0}, x, f, 0.1, wrong), InvalidArgument);
}

TEST_CASE("backward_solve: constant terminal inside Q") {
    const auto p = lattice_problem(8, 4, CostMatrix::uniform(2, 2.0), Driver::zero(2),
                                   testsupport::constant_terminal({1, 0}));
    const auto engine = engine_for(p);
    const auto sol = backward_solve(p, engine);
    CHECK(sol.y0() == std::vector<double>{1, 0});
    CHECK(sol.y_tilde0() == std::vector<double>{1, 0});
    for (double z : sol.z_bar0()) CHECK(z == doctest::Approx(0.0));
    for (double k : sol.delta_k_mass()) CHECK(k == 0.0);
    REQUIRE(sol.has_tables());
    for (std::size_t i = 0; i <= 8; ++i) {
        CHECK(sol.points[i] == i + 1);
        for (std::size_t j = 0; j < sol.tables[i].y.size(); ++j)
            CHECK(sol.tables[i].y[j] == sol.tables[i].y_tilde[j]);
    }
}

TEST_CASE("backward_solve: Z-bar of a linear terminal") {
    // Y_T = X_T with f = 0: Y_i = X_i and Z-bar = sigma at every node.
    Terminal g;
    g.regimes = 1;
    g.lipschitz = 1;
    g.eval = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
    const auto p = lattice_problem(6, 3, CostMatrix(1), Driver::zero(1), g, 0.3, 0.0, 0.8);
    const auto engine = engine_for(p);
    const auto sol = backward_solve(p, engine);
    CHECK(sol.y0()[0] == doctest::Approx(0.3).epsilon(1e-13));
    for (std::size_t i = 0; i < 6; ++i)
        for (double z : sol.tables[i].z_bar) CHECK(z == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("property: one regime reduces to plain backward Euler") {
    Gen gen(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t kappa = gen.index(1, 6);
        const std::size_t n = kappa * gen.index(1, 8);
        const double x0 = gen.uniform(-1, 1), b = gen.uniform(-0.5, 0.5), sigma = gen.uniform(0.1, 1.2);
        const double ga = gen.uniform(-1, 1), gb = gen.uniform(-1, 1);
        const double alpha = gen.uniform(-1, 1), beta = gen.uniform(-1, 1), gamma = gen.uniform(-0.9, 0.9);
        Terminal g;
        g.regimes = 1;
        g.lipschitz = std::abs(gb);
        g.eval = [ga, gb](std::span<const double> x, std::span<double> out) { out[0] = ga + gb * x[0]; };
        const auto p = lattice_problem(n, kappa, CostMatrix(1), testsupport::linear_driver({alpha}, {beta}, {gamma}),
                                       g, x0, b, sigma);
        const auto sol = backward_solve(p, engine_for(p));
        const double expected = testsupport::textbook_backward_euler(x0, b, sigma, 1.0, n, ga, gb, alpha, beta, gamma);
        CHECK(std::abs(sol.y0()[0] - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
        CHECK(sol.delta_k_mass()[0] == 0.0);
    }
}

TEST_CASE("property: scheme invariants on random lattice problems") {
    Gen gen(32);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t d = gen.index(2, 4);
        const std::size_t kappa = gen.index(1, 4);
        const std::size_t n = kappa * gen.index(1, 5);
        const auto p = random_problem(gen, d, n, kappa);
        const auto engine = engine_for(p);
        const auto sol = backward_solve(p, engine);
        const auto c = p.costs.constant_matrix();
        for (std::size_t i = 0; i <= n; ++i) {
            const auto& t = sol.tables[i];
            const auto states = engine.states_at(i);
            for (std::size_t k = 0; k < sol.points[i]; ++k) {
                const std::vector<double> y(t.y.begin() + k * d, t.y.begin() + (k + 1) * d);
                const std::vector<double> yt(t.y_tilde.begin() + k * d, t.y_tilde.begin() + (k + 1) * d);
                if (i == n) {
                    std::vector<double> g(d);
                    p.terminal.eval(states.subspan(k, 1), g);
                    CHECK(y == g);
                } else if (!p.grid.is_reflection(i)) {
                    CHECK(y == yt);
                } else {
                    CHECK(y == project(c, yt));
                    CHECK(is_in_domain(c, y));
                    for (std::size_t r = 0; r < d; ++r) CHECK(y[r] >= yt[r]);
                }
            }
        }
        for (double m : sol.delta_k_mass()) CHECK(m >= 0.0);
    }
}

TEST_CASE("backward_solve: terminal outside Q is an error") {
    const auto p = lattice_problem(4, 2, CostMatrix::uniform(2, 0.5), Driver::zero(2),
                                   testsupport::constant_terminal({1, 0}));
    CHECK_THROWS_WITH_AS(backward_solve(p, engine_for(p)), doctest::Contains("outside Q"), NumericalError);
}

TEST_CASE("backward_solve: engine grid and contraction checks") {
    const auto p = lattice_problem(4, 2, CostMatrix::uniform(2, 1.0), Driver::zero(2),
                                   testsupport::constant_terminal({0, 0}));
    const LatticeEngine other(build_lattice(p.sde, build_uniform_grid(1.0, 8, 2)));
    CHECK_THROWS_AS(backward_solve(p, other), InvalidArgument);

    const auto stiff = lattice_problem(2, 1, CostMatrix::uniform(2, 1.0),
                                       testsupport::linear_driver({0, 0}, {0, 0}, {-3, 0}),
                                       testsupport::constant_terminal({0, 0}));
    CHECK_THROWS_AS(backward_solve(stiff, engine_for(stiff)), InvalidArgument);
}

TEST_CASE("property: translating g by a constant translates Y") {
    // Drivers without y-dependence commute with constant shifts.
    Gen gen(33);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = gen.index(2, 3);
        const std::size_t kappa = gen.index(1, 4);
        const std::size_t n = kappa * gen.index(1, 4);
        const auto c = gen.costs(d, 0.3);
        const auto a = gen.vec(d, -1, 1), bb = gen.vec(d, -1, 1);
        const auto alpha = gen.vec(d, -1, 1), beta = gen.vec(d, -1, 1);
        const double e = gen.uniform(-3, 3);
        auto shifted_a = a;
        for (auto& v : shifted_a) v += e;
        const auto f = testsupport::linear_driver(alpha, beta, std::vector<double>(d, 0.0));
        const auto p1 = lattice_problem(n, kappa, c, f, testsupport::affine_terminal(c, a, bb));
        const auto p2 = lattice_problem(n, kappa, c, f, testsupport::affine_terminal(c, shifted_a, bb));
        const auto engine = engine_for(p1);
        const auto s1 = backward_solve(p1, engine);
        const auto s2 = backward_solve(p2, engine);
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j < s1.tables[i].y.size(); ++j)
                CHECK(std::abs(s2.tables[i].y[j] - s1.tables[i].y[j] - e) <= 1e-12 * std::max(1.0, std::abs(e)));
    }
}

TEST_CASE("compare_schemes examples") {
    const auto c = CostMatrix::uniform(2, 0.4);
    const auto f = testsupport::linear_driver({0.1, -0.2}, {0.5, 0.3}, {-0.5, 0.2});
    const auto base = lattice_problem(8, 4, c, f, testsupport::affine_terminal(c, {0, 0.1}, {1, -1}));
    const auto engine = engine_for(base);

    const auto higher_g = lattice_problem(8, 4, c, f, testsupport::affine_terminal(c, {1, 1.1}, {1, -1}));
    auto r = compare_schemes(higher_g, base, engine);
    CHECK(r.dominates());
    CHECK(r.min_gap > 0.0);

    const auto higher_f =
        lattice_problem(8, 4, c, testsupport::linear_driver({0.6, 0.3}, {0.5, 0.3}, {-0.5, 0.2}),
                        testsupport::affine_terminal(c, {0, 0.1}, {1, -1}));
    r = compare_schemes(higher_f, base, engine);
    CHECK(r.dominates());
    CHECK(r.min_gap >= 0.0);

    r = compare_schemes(base, base, engine);
    CHECK(r.dominates());
    CHECK(r.max_abs_difference == 0.0);

    CHECK_THROWS_WITH_AS(compare_schemes(base, higher_g, engine), doctest::Contains("g1 < g2"), InvalidArgument);
}

TEST_CASE("compare_schemes preconditions") {
    const auto c = CostMatrix::uniform(2, 0.4);
    const auto base = lattice_problem(4, 2, c, Driver::zero(2), testsupport::constant_terminal({0, 0}));
    auto zdep = base;
    zdep.driver.depends_on_z = true;
    CHECK_THROWS_WITH_AS(compare_schemes(zdep, base, engine_for(base)), doctest::Contains("depends on z"),
                         InvalidArgument);
    const auto other_grid = lattice_problem(8, 2, c, Driver::zero(2), testsupport::constant_terminal({0, 0}));
    CHECK_THROWS_WITH_AS(compare_schemes(other_grid, base, engine_for(base)), doctest::Contains("time grids differ"),
                         InvalidArgument);
}

TEST_CASE("property: refining the reflection grid raises Y") {
    Gen gen(34);
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t d = gen.index(2, 3);
        const std::size_t kappa = gen.index(1, 3);
        const std::size_t n = 4 * kappa * gen.index(1, 3);
        const auto coarse = random_problem(gen, d, n, kappa);
        const Problem fine(coarse.sde, coarse.driver, coarse.terminal, coarse.costs,
                           build_uniform_grid(1.0, n, 2 * kappa));
        const auto engine = engine_for(coarse);
        const auto sc = backward_solve(coarse, engine);
        const auto sf = backward_solve(fine, LatticeEngine(build_lattice(fine.sde, fine.grid)));
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t j = 0; j < sc.tables[i].y.size(); ++j)
                CHECK(sf.tables[i].y[j] >= sc.tables[i].y[j] - 2e-12 * std::max(1.0, std::abs(sc.tables[i].y[j])));
    }
}

TEST_CASE("solution and summary CSV layout") {
    const auto p = lattice_problem(2, 1, CostMatrix::uniform(2, 2.0), Driver::zero(2),
                                   testsupport::constant_terminal({1, 0}));
    const auto engine = engine_for(p);
    const auto sol = backward_solve(p, engine);
    std::ostringstream os;
    write_solution_csv(sol, engine, os);
    const auto text = os.str();
    CHECK(text.rfind("time_index,time,reflection,point,x_1,y_1,y_2,y_tilde_1,y_tilde_2,z_bar_1_1,z_bar_2_1,"
                     "delta_k_1,delta_k_2\n0,0,1,0,0,1,0,1,0,0,0,0,0\n",
                     0) == 0);
    std::ostringstream ss;
    write_summary_csv(sol, ss);
    CHECK(ss.str() == "component,y0,y_tilde0,z_bar0_1,delta_k_mass\n1,1,1,0,0\n2,0,0,0,0\n");

    const auto lean = backward_solve(p, engine, SolveOptions{false});
    CHECK_FALSE(lean.has_tables());
    CHECK(lean.y0() == sol.y0());
    std::ostringstream ls;
    write_solution_csv(lean, engine, ls);
    CHECK(ls.str().find(",mean,") != std::string::npos);
}
