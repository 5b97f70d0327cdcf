#include "rbsde/switching.hpp"

#include "rbsde/error.hpp"
#include "rbsde/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace rbsde {

namespace {

void require_same_grid(const Lattice& lat, const Problem& problem, const char* what) {
    if (!(lat.grid() == problem.grid))
        throw InvalidArgument(std::string(what) + ": lattice and problem use different time grids");
}

void require_switchable_driver(const Driver& driver, const char* what) {
    if (driver.depends_on_z)
        throw InvalidArgument(std::string(what) + ": driver depends on z; switched BSDEs are evaluated only for "
                                                  "z-independent drivers");
    if (!driver.componentwise)
        throw InvalidArgument(std::string(what) + ": driver must be componentwise (f^i reads y^i only)");
}

// u = e + dt f^r(x, u), scalar Picard iteration on one driver component.
class ScalarStep {
public:
    ScalarStep(const Driver& driver, std::size_t q)
        : driver_(driver), y_(driver.regimes), z_(driver.regimes * q, 0.0), f_(driver.regimes) {}

    double solve(double e, std::span<const double> x, std::size_t r, double dt) {
        double u = e;
        for (std::size_t it = 0; it < kPicardMaxIterations; ++it) {
            std::fill(y_.begin(), y_.end(), u);
            driver_.eval(x, y_, z_, f_);
            const double next = e + dt * f_[r];
            const bool done = std::abs(next - u) <= kPicardTolerance * std::max(1.0, std::abs(next));
            u = next;
            if (done) return u;
        }
        throw NumericalError("switched BSDE: scalar implicit step did not converge");
    }

private:
    const Driver& driver_;
    std::vector<double> y_;
    std::vector<double> z_;
    std::vector<double> f_;
};

}  // namespace

std::vector<std::size_t> decision_dates(const TimeGrid& grid, std::size_t start_step) {
    std::vector<std::size_t> out;
    for (std::size_t i = start_step + 1; i < grid.steps(); ++i)
        if (grid.is_reflection(i)) out.push_back(i);
    return out;
}

std::size_t decision_points(const Lattice& lat, std::size_t regimes, std::size_t start_step) {
    std::size_t total = 0;
    for (std::size_t step : decision_dates(lat.grid(), start_step)) total += lat.nodes(step) * regimes;
    return total;
}

SwitchingStrategy empty_strategy(const Lattice& lat, std::size_t regimes, std::size_t start_step,
                                 std::size_t start_regime) {
    if (start_regime >= regimes) throw InvalidArgument("strategy: start regime out of range");
    if (start_step > lat.steps()) throw InvalidArgument("strategy: start step out of range");
    SwitchingStrategy s;
    s.regimes = regimes;
    s.start_step = start_step;
    s.start_regime = start_regime;
    s.dates = decision_dates(lat.grid(), start_step);
    for (std::size_t step : s.dates) {
        std::vector<std::size_t> table(lat.nodes(step) * regimes);
        for (std::size_t k = 0; k < lat.nodes(step); ++k)
            for (std::size_t r = 0; r < regimes; ++r) table[k * regimes + r] = r;
        s.actions.push_back(std::move(table));
    }
    return s;
}

SwitchingStrategy random_strategy(const Lattice& lat, std::size_t regimes, std::size_t start_step,
                                  std::size_t start_regime, std::uint64_t seed, std::uint64_t index) {
    auto s = empty_strategy(lat, regimes, start_step, start_regime);
    CounterStream rng(seed, index);
    for (auto& table : s.actions)
        for (auto& a : table) a = static_cast<std::size_t>(rng.below(regimes));
    return s;
}

SwitchingStrategy extract_optimal_strategy(const SchemeSolution& sol, const Lattice& lat, const Problem& problem,
                                           std::size_t start_step, std::size_t start_regime) {
    if (!sol.exact || !sol.has_tables()) throw InvalidArgument("strategy extraction requires node tables");
    require_same_grid(lat, problem, "extract_optimal_strategy");
    const std::size_t d = problem.regimes();
    auto s = empty_strategy(lat, d, start_step, start_regime);
    for (std::size_t k = 0; k < s.dates.size(); ++k) {
        const std::size_t step = s.dates[k];
        const auto& yt = sol.tables.at(step).y_tilde;
        const auto states = lat.states_at(step);
        for (std::size_t node = 0; node < lat.nodes(step); ++node) {
            const CostMatrix c = problem.costs.at(states.subspan(node, 1));
            for (std::size_t a = 0; a < d; ++a) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t target = a;
                for (std::size_t j = 0; j < d; ++j) {
                    if (j == a) continue;
                    const double v = yt[node * d + j] - c(a, j);
                    if (v > best) {
                        best = v;
                        target = j;
                    }
                }
                s.actions[k][node * d + a] = (target != a && yt[node * d + a] <= best) ? target : a;
            }
        }
    }
    return s;
}

std::vector<Switch> rollout(const Lattice& lat, const SwitchingStrategy& strategy, std::size_t start_node,
                            std::span<const std::size_t> branch_choices) {
    const std::size_t n = lat.steps();
    if (branch_choices.size() != n - strategy.start_step)
        throw InvalidArgument("rollout: need one branch choice per remaining step");
    std::vector<Switch> out;
    std::size_t node = start_node;
    std::size_t regime = strategy.start_regime;
    std::size_t next_date = 0;
    for (std::size_t step = strategy.start_step; step < n; ++step) {
        if (next_date < strategy.dates.size() && strategy.dates[next_date] == step) {
            const std::size_t a = strategy.action(next_date, node, regime);
            if (a != regime) {
                out.push_back({step, a});
                regime = a;
            }
            ++next_date;
        }
        node = lat.branch(step, node, branch_choices[step - strategy.start_step]).successor;
    }
    return out;
}

SwitchedValue evaluate_switched(const Lattice& lat, const SwitchingStrategy& strategy, const Problem& problem) {
    require_same_grid(lat, problem, "evaluate_switched");
    require_switchable_driver(problem.driver, "evaluate_switched");
    const std::size_t d = problem.regimes();
    if (strategy.regimes != d) throw InvalidArgument("evaluate_switched: strategy has a different regime count");
    const std::size_t n = lat.steps();
    const std::size_t start = strategy.start_step;
    const bool fixed = problem.costs.is_constant();
    const CostMatrix fixed_costs = fixed ? problem.costs.constant_matrix() : CostMatrix(d);

    ScalarStep step_solver(problem.driver, problem.sde.brownian_dim);
    std::vector<double> u(lat.nodes(n) * d), cost(lat.nodes(n) * d, 0.0);
    for (std::size_t k = 0; k < lat.nodes(n); ++k)
        problem.terminal.eval(lat.state(n, k), std::span<double>(u).subspan(k * d, d));

    std::vector<double> cont, cont_cost;
    std::size_t date = strategy.dates.size();
    for (std::size_t step = n; step-- > start;) {
        const std::size_t nodes = lat.nodes(step);
        const double dt = lat.grid().dt(step);
        cont.assign(nodes * d, 0.0);
        cont_cost.assign(nodes * d, 0.0);
        for (std::size_t k = 0; k < nodes; ++k) {
            const auto x = lat.state(step, k);
            for (std::size_t r = 0; r < d; ++r) {
                double e = 0.0;
                double ec = 0.0;
                for (std::size_t b = 0; b < Lattice::kBranching; ++b) {
                    const auto br = lat.branch(step, k, b);
                    e += br.probability * u[br.successor * d + r];
                    ec += br.probability * cost[br.successor * d + r];
                }
                cont[k * d + r] = step_solver.solve(e, x, r, dt);
                cont_cost[k * d + r] = ec;
            }
        }
        const bool decide = date > 0 && strategy.dates[date - 1] == step;
        if (decide) {
            --date;
            // One switch per date: every decision reads the pre-decision values.
            u = cont;
            cost = cont_cost;
            for (std::size_t k = 0; k < nodes; ++k) {
                const CostMatrix c = fixed ? fixed_costs : problem.costs.at(lat.state(step, k));
                for (std::size_t r = 0; r < d; ++r) {
                    const std::size_t a = strategy.action(date, k, r);
                    if (a == r) continue;
                    u[k * d + r] = cont[k * d + a] - c(r, a);
                    cost[k * d + r] = cont_cost[k * d + a] + c(r, a);
                }
            }
            continue;
        }
        u.swap(cont);
        cost.swap(cont_cost);
    }

    SwitchedValue out;
    const std::size_t nodes = lat.nodes(start);
    out.value_all = u;
    out.value.resize(nodes);
    out.expected_cost.resize(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
        out.value[k] = u[k * d + strategy.start_regime];
        out.expected_cost[k] = cost[k * d + strategy.start_regime];
    }
    return out;
}

OracleResult enumerate_strategies_oracle(const Lattice& lat, const Problem& problem, std::size_t start_step,
                                         std::size_t max_points) {
    require_same_grid(lat, problem, "enumerate_strategies_oracle");
    require_switchable_driver(problem.driver, "enumerate_strategies_oracle");
    const std::size_t d = problem.regimes();
    const std::size_t points = decision_points(lat, d, start_step);
    if (points > max_points)
        throw InvalidArgument("enumerate_strategies_oracle: instance too large (" + std::to_string(points) +
                              " decision points, limit " + std::to_string(max_points) + ")");
    std::uint64_t tables = 1;
    for (std::size_t k = 0; k < points; ++k) {
        if (tables > std::numeric_limits<std::uint64_t>::max() / d)
            throw InvalidArgument("enumerate_strategies_oracle: table count overflows");
        tables *= d;
    }

    const std::size_t nodes = lat.nodes(start_step);
    OracleResult result;
    result.decision_points = points;
    result.tables = static_cast<std::size_t>(tables);
    result.values.assign(nodes * d, -std::numeric_limits<double>::infinity());

#pragma omp parallel
    {
        auto strat = empty_strategy(lat, d, start_step, 0);
        std::vector<double> local(nodes * d, -std::numeric_limits<double>::infinity());
#pragma omp for schedule(static)
        for (std::uint64_t t = 0; t < tables; ++t) {
            std::uint64_t code = t;
            for (auto& table : strat.actions) {
                for (auto& a : table) {
                    a = static_cast<std::size_t>(code % d);
                    code /= d;
                }
            }
            const auto v = evaluate_switched(lat, strat, problem);
            for (std::size_t k = 0; k < local.size(); ++k) local[k] = std::max(local[k], v.value_all[k]);
        }
#pragma omp critical(rbsde_oracle_merge)
        for (std::size_t k = 0; k < local.size(); ++k) result.values[k] = std::max(result.values[k], local[k]);
    }
    return result;
}

DominationReport domination_check(const Lattice& lat, const Problem& problem, const SchemeSolution& sol,
                                  std::size_t sample_strategies, std::uint64_t seed) {
    if (!sol.has_tables()) throw InvalidArgument("domination_check: solution has no node tables");
    const std::size_t d = problem.regimes();
    const auto& y_tilde0 = sol.tables.front().y_tilde;
    constexpr double kTol = 1e-10;
    DominationReport report;
    report.max_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < sample_strategies; ++k) {
        const auto strat = random_strategy(lat, d, 0, 0, seed, k);
        const auto v = evaluate_switched(lat, strat, problem);
        ++report.sampled;
        for (std::size_t r = 0; r < d; ++r) {
            const double excess = v.value_all[r] - y_tilde0[r];
            report.max_excess = std::max(report.max_excess, excess);
            if (excess > kTol) {
                std::ostringstream msg;
                msg << "sample " << k << ", start regime " << r + 1 << ": U = " << v.value_all[r]
                    << " exceeds Y-tilde_0 = " << y_tilde0[r];
                report.violations.push_back(msg.str());
            }
        }
    }
    for (std::size_t r = 0; r < d; ++r) {
        const auto best = extract_optimal_strategy(sol, lat, problem, 0, r);
        const double u = evaluate_switched(lat, best, problem).value.front();
        const double gap = std::abs(u - y_tilde0[r]);
        report.optimal_gap = std::max(report.optimal_gap, gap);
        if (gap > kTol) {
            std::ostringstream msg;
            msg << "optimal strategy from regime " << r + 1 << ": U = " << u << " differs from Y-tilde_0 = "
                << y_tilde0[r];
            report.violations.push_back(msg.str());
        }
    }
    return report;
}

void write_strategy_csv(const SwitchingStrategy& strategy, std::ostream& out) {
    out << "reflection_date,node,regime,action\n";
    for (std::size_t k = 0; k < strategy.dates.size(); ++k) {
        const auto& table = strategy.actions[k];
        for (std::size_t idx = 0; idx < table.size(); ++idx) {
            out << strategy.dates[k] << ',' << idx / strategy.regimes << ',' << idx % strategy.regimes + 1 << ','
                << table[idx] + 1 << '\n';
        }
    }
}

}  // namespace rbsde
