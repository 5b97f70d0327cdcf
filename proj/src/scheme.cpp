#include "rbsde/scheme.hpp"

#include "rbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

namespace rbsde {

namespace {

double sup_norm(std::span<const double> v) {
    double m = 0.0;
    for (double a : v) m = std::max(m, std::abs(a));
    return m;
}

void check_contraction(const Driver& driver, double dt) {
    if (!(dt * driver.lipschitz < 1.0)) {
        std::ostringstream msg;
        msg << "implicit step needs dt * L_f < 1, got " << dt << " * " << driver.lipschitz << " = "
            << dt * driver.lipschitz;
        throw InvalidArgument(msg.str());
    }
}

std::string format_state(std::span<const double> x) {
    std::ostringstream os;
    os << '(';
    for (std::size_t a = 0; a < x.size(); ++a) os << (a ? ", " : "") << x[a];
    os << ')';
    return os.str();
}

// Runs body(point) over [0, count) in parallel and rethrows the failure of the
// lowest-indexed point, so errors are reproducible regardless of scheduling.
template <class Body>
void parallel_points(std::size_t count, Body&& body) {
    std::size_t failed = std::numeric_limits<std::size_t>::max();
    std::string message;
    bool numerical = true;
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < count; ++p) {
        try {
            body(p);
        } catch (const std::exception& e) {
#pragma omp critical(rbsde_scheme_failure)
            if (p < failed) {
                failed = p;
                message = e.what();
                numerical = dynamic_cast<const InvalidArgument*>(&e) == nullptr;
            }
        }
    }
    if (failed != std::numeric_limits<std::size_t>::max()) {
        if (numerical) throw NumericalError(message);
        throw InvalidArgument(message);
    }
}

}  // namespace

PicardResult implicit_step(std::span<const double> expectation, std::span<const double> z_bar,
                           std::span<const double> x, const Driver& driver, double dt, std::span<double> y) {
    const std::size_t d = expectation.size();
    if (y.size() != d || driver.regimes != d) throw InvalidArgument("implicit_step: dimension mismatch");
    check_contraction(driver, dt);

    // Called once per point and step; reuse per-thread buffers.
    thread_local std::vector<double> f, prev;
    thread_local std::vector<char> done;
    f.assign(d, 0.0);
    prev.assign(expectation.begin(), expectation.end());
    done.assign(d, 0);
    PicardResult result;
    for (std::size_t it = 1; it <= kPicardMaxIterations; ++it) {
        driver.eval(x, prev, z_bar, f);
        double residual = 0.0;
        bool all_done = true;
        for (std::size_t i = 0; i < d; ++i) {
            if (done[i]) continue;
            const double next = expectation[i] + dt * f[i];
            const double change = std::abs(next - prev[i]);
            residual = std::max(residual, change);
            y[i] = next;
            if (driver.componentwise && change <= kPicardTolerance * std::max(1.0, std::abs(next))) {
                done[i] = 1;
            } else {
                all_done = false;
            }
        }
        if (!driver.componentwise) all_done = residual <= kPicardTolerance * std::max(1.0, sup_norm(y));
        std::copy(y.begin(), y.end(), prev.begin());
        result.iterations = it;
        result.residual = residual;
        if (all_done) return result;
    }
    std::ostringstream msg;
    msg << "implicit step did not converge in " << kPicardMaxIterations << " iterations (residual "
        << result.residual << ")";
    throw NumericalError(msg.str());
}

std::vector<double> SchemeSolution::delta_k_mass() const {
    std::vector<double> total(regimes, 0.0);
    for (std::size_t i = 1; i < summary.size(); ++i) {
        if (!grid.is_reflection(i)) continue;
        for (std::size_t r = 0; r < regimes; ++r) total[r] += summary[i].delta_k[r];
    }
    return total;
}

SchemeSolution backward_solve(const Problem& problem, const ConditionalExpectationEngine& engine,
                              const SolveOptions& options) {
    const TimeGrid& grid = problem.grid;
    if (!(engine.grid() == grid)) throw InvalidArgument("backward_solve: engine was built on a different time grid");
    if (engine.state_dim() != problem.sde.state_dim || engine.brownian_dim() != problem.sde.brownian_dim)
        throw InvalidArgument("backward_solve: engine dimensions do not match the SDE");
    check_contraction(problem.driver, grid.mesh());

    const std::size_t n = grid.steps();
    const std::size_t d = problem.regimes();
    const std::size_t m = problem.sde.state_dim;
    const std::size_t q = problem.sde.brownian_dim;
    const Driver& driver = problem.driver;
    std::optional<CostMatrix> fixed_costs;
    if (problem.costs.is_constant()) fixed_costs = problem.costs.constant_matrix();

    SchemeSolution sol{grid, d, m, q, engine.exact(), {}, {}, {}, {}};
    sol.points.resize(n + 1);
    sol.summary.resize(n + 1);
    sol.diagnostics.resize(n + 1);
    if (options.keep_tables) sol.tables.resize(n + 1);

    auto summarize = [&](std::size_t step, const std::vector<double>& yt, const std::vector<double>& y,
                         const std::vector<double>& z) {
        const auto w = engine.weights(step);
        StepSummary s;
        s.y_tilde.assign(d, 0.0);
        s.y.assign(d, 0.0);
        s.delta_k.assign(d, 0.0);
        s.z_bar.assign(z.empty() ? 0 : d * q, 0.0);
        for (std::size_t p = 0; p < w.size(); ++p) {
            for (std::size_t r = 0; r < d; ++r) {
                s.y_tilde[r] += w[p] * yt[p * d + r];
                s.y[r] += w[p] * y[p * d + r];
                s.delta_k[r] += w[p] * (y[p * d + r] - yt[p * d + r]);
            }
            for (std::size_t k = 0; k < s.z_bar.size(); ++k) s.z_bar[k] += w[p] * z[p * d * q + k];
        }
        sol.summary[step] = std::move(s);
    };

    // Terminal date.
    std::size_t np = engine.points(n);
    std::vector<double> y_next(np * d);
    {
        const auto states = engine.states_at(n);
        for (std::size_t p = 0; p < np; ++p) {
            const auto x = states.subspan(p * m, m);
            const auto g = std::span<double>(y_next).subspan(p * d, d);
            problem.terminal.eval(x, g);
            const CostMatrix c = fixed_costs ? *fixed_costs : problem.costs.at(x);
            if (!is_in_domain(c, g))
                throw NumericalError("backward_solve: terminal value g(x) is outside Q(x) at x = " + format_state(x));
        }
        sol.points[n] = np;
        summarize(n, y_next, y_next, {});
        if (options.keep_tables) sol.tables[n] = {y_next, y_next, {}};
    }

    std::vector<double> expect, zbar, y_tilde, y_cur;
    std::vector<PicardResult> picard;
    for (std::size_t step = n; step-- > 0;) {
        np = engine.points(step);
        const double dt = grid.dt(step);
        const bool reflect = grid.is_reflection(step);
        const auto states = engine.states_at(step);
        expect.assign(np * d, 0.0);
        zbar.assign(np * d * q, 0.0);
        y_tilde.assign(np * d, 0.0);
        y_cur.assign(np * d, 0.0);
        picard.assign(np, {});
        engine.expectation(step, y_next, d, expect);
        engine.weighted_expectation(step, y_next, d, zbar);

        try {
            parallel_points(np, [&](std::size_t p) {
                const auto x = states.subspan(p * m, m);
                const auto yt = std::span<double>(y_tilde).subspan(p * d, d);
                picard[p] = implicit_step(std::span<const double>(expect).subspan(p * d, d),
                                          std::span<const double>(zbar).subspan(p * d * q, d * q), x, driver, dt, yt);
                const auto yp = std::span<double>(y_cur).subspan(p * d, d);
                if (reflect) {
                    project(fixed_costs ? *fixed_costs : problem.costs.at(x), yt, yp);
                } else {
                    std::copy(yt.begin(), yt.end(), yp.begin());
                }
            });
        } catch (const NumericalError& e) {
            throw NumericalError("step " + std::to_string(step) + ": " + e.what());
        }

        StepDiagnostics diag;
        for (const auto& r : picard) {
            diag.max_iterations = std::max(diag.max_iterations, r.iterations);
            diag.max_residual = std::max(diag.max_residual, r.residual);
        }
        sol.diagnostics[step] = diag;
        sol.points[step] = np;
        summarize(step, y_tilde, y_cur, zbar);
        if (options.keep_tables) sol.tables[step] = {y_tilde, y_cur, zbar};
        y_next.swap(y_cur);
    }
    return sol;
}

ComparisonReport compare_schemes(const Problem& p1, const Problem& p2, const ConditionalExpectationEngine& engine) {
    std::vector<std::string> issues;
    const std::size_t d = p1.regimes();
    if (p2.regimes() != d) issues.push_back("regime counts differ");
    if (!(p1.grid == p2.grid)) issues.push_back("time grids differ");
    for (const Problem* p : {&p1, &p2}) {
        if (p->driver.depends_on_z) issues.push_back("driver depends on z");
        if (!p->driver.componentwise) issues.push_back("driver is not componentwise");
    }
    if (!issues.empty()) {
        std::string msg = "compare_schemes: preconditions not met:";
        for (const auto& s : issues) msg += " " + s + ";";
        throw InvalidArgument(msg);
    }

    const std::size_t m = p1.sde.state_dim;
    const std::size_t q = p1.sde.brownian_dim;
    const std::size_t n = p1.grid.steps();
    const std::vector<double> y_probes{-10.0, -1.0, 0.0, 1.0, 10.0};
    std::vector<double> g1(d), g2(d), f1(d), f2(d), y(d), z(d * q, 0.0);
    for (std::size_t step = 0; step <= n; ++step) {
        const auto states = engine.states_at(step);
        for (std::size_t pt = 0; pt < engine.points(step); ++pt) {
            const auto x = states.subspan(pt * m, m);
            if (!(p1.costs.at(x) == p2.costs.at(x)))
                throw InvalidArgument("compare_schemes: cost models differ at x = " + format_state(x));
            if (step == n) {
                p1.terminal.eval(x, g1);
                p2.terminal.eval(x, g2);
                for (std::size_t r = 0; r < d; ++r)
                    if (g1[r] < g2[r])
                        throw InvalidArgument("compare_schemes: g1 < g2 in component " + std::to_string(r + 1) +
                                              " at x = " + format_state(x));
                continue;
            }
            for (double v : y_probes) {
                std::fill(y.begin(), y.end(), v);
                p1.driver.eval(x, y, z, f1);
                p2.driver.eval(x, y, z, f2);
                for (std::size_t r = 0; r < d; ++r)
                    if (f1[r] < f2[r])
                        throw InvalidArgument("compare_schemes: f1 < f2 in component " + std::to_string(r + 1) +
                                              " at x = " + format_state(x));
            }
        }
    }

    const auto s1 = backward_solve(p1, engine);
    const auto s2 = backward_solve(p2, engine);
    ComparisonReport report;
    report.min_gap = std::numeric_limits<double>::infinity();
    const double slack = 2.0 * kPicardTolerance;
    for (std::size_t step = 0; step <= n; ++step) {
        const auto& a = s1.tables[step];
        const auto& b = s2.tables[step];
        for (std::size_t k = 0; k < a.y.size(); ++k) {
            for (auto field : {&StepTables::y, &StepTables::y_tilde}) {
                const double u = (a.*field)[k];
                const double v = (b.*field)[k];
                const double gap = u - v;
                ++report.checked;
                report.min_gap = std::min(report.min_gap, gap);
                report.max_abs_difference = std::max(report.max_abs_difference, std::abs(gap));
                if (gap < -slack * std::max(1.0, std::abs(v))) {
                    std::ostringstream msg;
                    msg << "step " << step << ", point " << k / d << ", regime " << k % d + 1 << ": "
                        << (field == &StepTables::y ? "Y" : "Y-tilde") << "1 = " << u << " < " << v;
                    report.counterexamples.push_back(msg.str());
                }
            }
        }
    }
    return report;
}

void write_solution_csv(const SchemeSolution& sol, const ConditionalExpectationEngine& engine, std::ostream& out) {
    const std::size_t d = sol.regimes;
    const std::size_t m = sol.state_dim;
    const std::size_t q = sol.brownian_dim;
    out << "time_index,time,reflection,point";
    for (std::size_t a = 0; a < m; ++a) out << ",x_" << a + 1;
    for (std::size_t r = 0; r < d; ++r) out << ",y_" << r + 1;
    for (std::size_t r = 0; r < d; ++r) out << ",y_tilde_" << r + 1;
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t k = 0; k < q; ++k) out << ",z_bar_" << r + 1 << '_' << k + 1;
    for (std::size_t r = 0; r < d; ++r) out << ",delta_k_" << r + 1;
    out << '\n';
    out.precision(17);

    const std::size_t n = sol.grid.steps();
    for (std::size_t step = 0; step <= n; ++step) {
        const auto states = engine.states_at(step);
        const bool reflect = sol.grid.is_reflection(step);
        auto row_prefix = [&](const std::string& point) {
            out << step << ',' << sol.grid.time(step) << ',' << (reflect ? 1 : 0) << ',' << point;
        };
        if (sol.has_tables()) {
            const auto& t = sol.tables[step];
            for (std::size_t p = 0; p < sol.points[step]; ++p) {
                row_prefix(std::to_string(p));
                for (std::size_t a = 0; a < m; ++a) out << ',' << states[p * m + a];
                for (std::size_t r = 0; r < d; ++r) out << ',' << t.y[p * d + r];
                for (std::size_t r = 0; r < d; ++r) out << ',' << t.y_tilde[p * d + r];
                for (std::size_t k = 0; k < d * q; ++k) out << ',' << (t.z_bar.empty() ? 0.0 : t.z_bar[p * d * q + k]);
                for (std::size_t r = 0; r < d; ++r) out << ',' << t.y[p * d + r] - t.y_tilde[p * d + r];
                out << '\n';
            }
        } else {
            const auto w = engine.weights(step);
            const auto& s = sol.summary[step];
            row_prefix("mean");
            for (std::size_t a = 0; a < m; ++a) {
                double mean = 0.0;
                for (std::size_t p = 0; p < w.size(); ++p) mean += w[p] * states[p * m + a];
                out << ',' << mean;
            }
            for (double v : s.y) out << ',' << v;
            for (double v : s.y_tilde) out << ',' << v;
            for (std::size_t k = 0; k < d * q; ++k) out << ',' << (s.z_bar.empty() ? 0.0 : s.z_bar[k]);
            for (double v : s.delta_k) out << ',' << v;
            out << '\n';
        }
    }
}

void write_summary_csv(const SchemeSolution& sol, std::ostream& out) {
    const std::size_t q = sol.brownian_dim;
    out << "component,y0,y_tilde0";
    for (std::size_t k = 0; k < q; ++k) out << ",z_bar0_" << k + 1;
    out << ",delta_k_mass\n";
    out.precision(17);
    const auto mass = sol.delta_k_mass();
    for (std::size_t r = 0; r < sol.regimes; ++r) {
        out << r + 1 << ',' << sol.y0()[r] << ',' << sol.y_tilde0()[r];
        for (std::size_t k = 0; k < q; ++k) out << ',' << sol.z_bar0()[r * q + k];
        out << ',' << mass[r] << '\n';
    }
}

}  // namespace rbsde
