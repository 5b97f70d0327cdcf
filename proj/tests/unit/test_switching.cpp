#include "doctest.h"

#include "rbsde/error.hpp"
#include "rbsde/switching.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace rbsde;
using testsupport::Gen;

namespace {

struct Instance {
    Problem problem;
    Lattice lattice;
};

Instance make(std::size_t n, std::size_t kappa, CostMatrix c, Driver f, Terminal g, double sigma = 1.0) {
    Problem p(testsupport::scalar_sde(0.0, 0.0, sigma), std::move(f), std::move(g), CostModel::constant(std::move(c)),
              build_uniform_grid(1.0, n, kappa));
    Lattice lat = build_lattice(p.sde, p.grid);
    return {std::move(p), std::move(lat)};
}

// Terminal regimes pulling in opposite directions so that switching pays.
Instance crossing(std::size_t n, std::size_t kappa, double cost, Driver f) {
    const auto c = CostMatrix::uniform(2, cost);
    return make(n, kappa, c, std::move(f), testsupport::affine_terminal(c, {0, 0}, {1, -1}));
}

double terminal_mean(const Instance& in, std::size_t regime) {
    const std::size_t n = in.lattice.steps();
    const auto w = in.lattice.marginal(n);
    std::vector<double> g(in.problem.regimes());
    double mean = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        in.problem.terminal.eval(in.lattice.state(n, k), g);
        mean += w[k] * g[regime];
    }
    return mean;
}

}  // namespace

TEST_CASE("decision dates and points") {
    const auto grid = build_uniform_grid(1.0, 8, 4);
    CHECK(decision_dates(grid, 0) == std::vector<std::size_t>{2, 4, 6});
    CHECK(decision_dates(grid, 2) == std::vector<std::size_t>{4, 6});
    CHECK(decision_dates(grid, 7).empty());

    auto points = [](std::size_t n, std::size_t kappa) {
        const auto lat = build_lattice(testsupport::scalar_sde(0, 0, 1), build_uniform_grid(1.0, n, kappa));
        return decision_points(lat, 2, 0);
    };
    CHECK(points(4, 2) == 6);
    CHECK(points(6, 2) == 8);
    CHECK(points(6, 3) == 16);
    CHECK(points(8, 1) == 0);
}

TEST_CASE("extracted strategy: no switch when the terminal sits deep in Q") {
    const auto in = make(6, 3, CostMatrix::uniform(2, 2.0), Driver::zero(2), testsupport::constant_terminal({1, 0}));
    const auto sol = backward_solve(in.problem, LatticeEngine(in.lattice));
    for (std::size_t r = 0; r < 2; ++r) {
        const auto s = extract_optimal_strategy(sol, in.lattice, in.problem, 0, r);
        for (const auto& table : s.actions)
            for (std::size_t idx = 0; idx < table.size(); ++idx) CHECK(table[idx] == idx % 2);
    }

    const auto flat = make(6, 3, CostMatrix::uniform(2, 0.1), Driver::zero(2), testsupport::constant_terminal({0, 0}));
    const auto sf = backward_solve(flat.problem, LatticeEngine(flat.lattice));
    const auto s = extract_optimal_strategy(sf, flat.lattice, flat.problem, 0, 0);
    for (const auto& table : s.actions)
        for (std::size_t idx = 0; idx < table.size(); ++idx) CHECK(table[idx] == idx % 2);

    const auto lean = backward_solve(flat.problem, LatticeEngine(flat.lattice), SolveOptions{false});
    CHECK_THROWS_WITH_AS(extract_optimal_strategy(lean, flat.lattice, flat.problem, 0, 0),
                         doctest::Contains("requires node tables"), InvalidArgument);
}

TEST_CASE("evaluate_switched: staying put") {
    const auto in = crossing(6, 3, 0.2, Driver::zero(2));
    for (std::size_t r = 0; r < 2; ++r) {
        const auto v = evaluate_switched(in.lattice, empty_strategy(in.lattice, 2, 0, r), in.problem);
        REQUIRE(v.value.size() == 1);
        CHECK(v.value[0] == doctest::Approx(terminal_mean(in, r)).epsilon(1e-13));
        CHECK(v.expected_cost[0] == 0.0);
    }

    // f = -y gives U = E[g] / (1 + dt)^n.
    const auto damped = crossing(6, 3, 0.2, testsupport::linear_driver({0, 0}, {0, 0}, {-1, -1}));
    const auto v = evaluate_switched(damped.lattice, empty_strategy(damped.lattice, 2, 0, 0), damped.problem);
    CHECK(v.value[0] ==
          doctest::Approx(terminal_mean(damped, 0) / std::pow(1.0 + 1.0 / 6.0, 6.0)).epsilon(1e-11));
}

TEST_CASE("evaluate_switched: a forced switch costs exactly c") {
    const double cost = 0.3;
    const auto in = make(4, 2, CostMatrix::uniform(2, cost), Driver::zero(2), testsupport::constant_terminal({0, 0}));
    auto s = empty_strategy(in.lattice, 2, 0, 0);
    REQUIRE(s.dates == std::vector<std::size_t>{2});
    for (std::size_t k = 0; k < in.lattice.nodes(2); ++k) s.actions[0][k * 2 + 0] = 1;
    const auto v = evaluate_switched(in.lattice, s, in.problem);
    CHECK(v.value[0] == doctest::Approx(-cost));
    CHECK(v.expected_cost[0] == doctest::Approx(cost));
    CHECK(v.value_all[1] == 0.0);

    // Switch only on the middle node, reached with probability 1/2.
    s = empty_strategy(in.lattice, 2, 0, 0);
    s.actions[0][1 * 2 + 0] = 1;
    const auto half = evaluate_switched(in.lattice, s, in.problem);
    CHECK(half.expected_cost[0] == doctest::Approx(cost / 2));
    CHECK(half.value[0] == doctest::Approx(-cost / 2));
}

TEST_CASE("evaluate_switched rejects z-dependent and coupled drivers") {
    auto in = crossing(4, 2, 0.2, Driver::zero(2));
    in.problem.driver.depends_on_z = true;
    CHECK_THROWS_AS(evaluate_switched(in.lattice, empty_strategy(in.lattice, 2, 0, 0), in.problem), InvalidArgument);
    in.problem.driver.depends_on_z = false;
    in.problem.driver.componentwise = false;
    CHECK_THROWS_AS(enumerate_strategies_oracle(in.lattice, in.problem, 0), InvalidArgument);
}

TEST_CASE("rollout follows the realised path") {
    const auto in = crossing(4, 2, 0.2, Driver::zero(2));
    auto s = empty_strategy(in.lattice, 2, 0, 0);
    s.actions[0][1 * 2 + 0] = 1;
    const std::vector<std::size_t> up_down{1, 0, 0, 0};
    const auto sw = rollout(in.lattice, s, 0, up_down);
    REQUIRE(sw.size() == 1);
    CHECK(sw[0].step == 2);
    CHECK(sw[0].regime == 1);
    CHECK(rollout(in.lattice, s, 0, std::vector<std::size_t>{0, 0, 1, 1}).empty());
    CHECK_THROWS_AS(rollout(in.lattice, s, 0, std::vector<std::size_t>{0, 0}), InvalidArgument);
}

TEST_CASE("oracle without decision dates is the terminal mean") {
    const auto in = crossing(6, 1, 0.2, Driver::zero(2));
    const auto r = enumerate_strategies_oracle(in.lattice, in.problem, 0);
    CHECK(r.decision_points == 0);
    CHECK(r.tables == 1);
    CHECK(r.values[0] == doctest::Approx(terminal_mean(in, 0)).epsilon(1e-13));
    CHECK(r.values[1] == doctest::Approx(terminal_mean(in, 1)).epsilon(1e-13));
}

TEST_CASE("oracle refuses large instances and quotes the count") {
    const auto in = crossing(8, 4, 0.2, Driver::zero(2));
    CHECK_THROWS_WITH_AS(enumerate_strategies_oracle(in.lattice, in.problem, 0),
                         doctest::Contains("30 decision points"), InvalidArgument);
}

TEST_CASE("oracle matches Y-tilde_0 on binding instances") {
    for (auto [n, kappa] : {std::pair<std::size_t, std::size_t>{4, 2}, {6, 2}, {6, 3}}) {
        const auto in = crossing(n, kappa, 0.05, testsupport::linear_driver({0.1, -0.1}, {0.3, -0.2}, {-0.4, 0.3}));
        const auto sol = backward_solve(in.problem, LatticeEngine(in.lattice));
        const auto oracle = enumerate_strategies_oracle(in.lattice, in.problem, 0);
        CHECK(oracle.tables == (std::size_t{1} << oracle.decision_points));
        for (std::size_t r = 0; r < 2; ++r)
            CHECK(std::abs(oracle.values[r] - sol.tables[0].y_tilde[r]) <= 1e-10);

        const auto best = extract_optimal_strategy(sol, in.lattice, in.problem, 0, 0);
        bool switches = false;
        for (const auto& table : best.actions)
            for (std::size_t idx = 0; idx < table.size(); ++idx) switches = switches || table[idx] != idx % 2;
        CHECK(switches);
        CHECK(evaluate_switched(in.lattice, best, in.problem).value[0] ==
              doctest::Approx(sol.tables[0].y_tilde[0]).epsilon(1e-12));
    }
}

TEST_CASE("property: sampled strategies never beat the scheme") {
    Gen gen(41);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = gen.index(2, 3);
        const auto c = gen.costs(d, gen.uniform(0.05, 0.4));
        const auto in = make(12, 4, c,
                             testsupport::linear_driver(gen.vec(d, -1, 1), gen.vec(d, -1, 1), gen.vec(d, -0.5, 0.5)),
                             testsupport::affine_terminal(c, gen.vec(d, -1, 1), gen.vec(d, -1, 1)),
                             gen.uniform(0.3, 1.0));
        const auto sol = backward_solve(in.problem, LatticeEngine(in.lattice));
        const auto report = domination_check(in.lattice, in.problem, sol, 50, 1000 + trial);
        CHECK(report.ok());
        CHECK(report.sampled == 50);
        CHECK(report.max_excess <= 1e-10);
        CHECK(report.optimal_gap <= 1e-10);
    }
}

TEST_CASE("random strategies are reproducible") {
    const auto in = crossing(6, 3, 0.2, Driver::zero(2));
    const auto a = random_strategy(in.lattice, 2, 0, 0, 9, 4);
    const auto b = random_strategy(in.lattice, 2, 0, 0, 9, 4);
    CHECK(a.actions == b.actions);
    for (const auto& table : a.actions)
        for (auto v : table) CHECK(v < 2);
}

TEST_CASE("strategy CSV layout") {
    const auto in = crossing(4, 2, 0.2, Driver::zero(2));
    auto s = empty_strategy(in.lattice, 2, 0, 0);
    s.actions[0][1 * 2 + 0] = 1;
    std::ostringstream os;
    write_strategy_csv(s, os);
    CHECK(os.str() == "reflection_date,node,regime,action\n2,0,1,1\n2,0,2,2\n2,1,1,2\n2,1,2,2\n2,2,1,1\n2,2,2,2\n");
}
