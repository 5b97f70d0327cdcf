#include "rbsde/core.hpp"

#include "rbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rbsde {

TimeGrid::TimeGrid(std::vector<double> points, std::vector<bool> reflection_flags)
    : points_(std::move(points)), flags_(std::move(reflection_flags)) {
    if (points_.size() < 2) throw InvalidArgument("TimeGrid: need at least two points");
    if (flags_.size() != points_.size())
        throw InvalidArgument("TimeGrid: one reflection flag per grid point is required");
    if (points_.front() != 0.0) throw InvalidArgument("TimeGrid: t_0 must be 0");
    for (std::size_t i = 1; i < points_.size(); ++i) {
        if (!(points_[i] > points_[i - 1]))
            throw InvalidArgument("TimeGrid: points must be strictly increasing (index " +
                                  std::to_string(i) + ")");
        mesh_ = std::max(mesh_, points_[i] - points_[i - 1]);
    }
    if (!flags_.front() || !flags_.back())
        throw InvalidArgument("TimeGrid: t_0 and t_n must be reflection dates");

    double last = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) {
        if (flags_[i]) {
            ++kappa_;
            reflection_mesh_ = std::max(reflection_mesh_, points_[i] - last);
            last = points_[i];
        }
    }
}

std::vector<std::size_t> TimeGrid::reflection_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < flags_.size(); ++i)
        if (flags_[i]) out.push_back(i);
    return out;
}

bool TimeGrid::is_uniform(double rel_tol) const noexcept {
    const double h = horizon() / static_cast<double>(steps());
    for (std::size_t i = 0; i + 1 < points_.size(); ++i)
        if (std::abs(points_[i + 1] - points_[i] - h) > rel_tol * h) return false;
    return true;
}

TimeGrid build_uniform_grid(double horizon, std::size_t n, std::size_t kappa) {
    if (n == 0) throw InvalidArgument("build_uniform_grid: n must be >= 1");
    if (kappa == 0) throw InvalidArgument("build_uniform_grid: kappa must be >= 1");
    if (!(horizon > 0.0)) throw InvalidArgument("build_uniform_grid: horizon must be positive");
    if (n % kappa != 0)
        throw InvalidArgument("build_uniform_grid: kappa = " + std::to_string(kappa) +
                              " does not divide n = " + std::to_string(n) +
                              "; reflection dates would fall off the grid");
    const std::size_t stride = n / kappa;
    std::vector<double> points(n + 1);
    std::vector<bool> flags(n + 1, false);
    for (std::size_t i = 0; i <= n; ++i) {
        points[i] = horizon * static_cast<double>(i) / static_cast<double>(n);
        flags[i] = (i % stride == 0);
    }
    return TimeGrid(std::move(points), std::move(flags));
}

SdeModel SdeModel::with_constant_coefficients(std::vector<double> x0, std::vector<double> drift,
                                              std::vector<double> diffusion, std::size_t brownian_dim) {
    const std::size_t m = x0.size();
    if (drift.size() != m) throw InvalidArgument("SdeModel: drift must have state dimension entries");
    if (diffusion.size() != m * brownian_dim)
        throw InvalidArgument("SdeModel: diffusion must be m x q");
    SdeModel s;
    s.state_dim = m;
    s.brownian_dim = brownian_dim;
    s.x0 = std::move(x0);
    s.constant = Constant{drift, diffusion};
    s.drift = [b = std::move(drift)](std::span<const double>, std::span<double> out) {
        std::copy(b.begin(), b.end(), out.begin());
    };
    s.diffusion = [sig = std::move(diffusion)](std::span<const double>, std::span<double> out) {
        std::copy(sig.begin(), sig.end(), out.begin());
    };
    return s;
}

CostModel CostModel::constant(CostMatrix costs) {
    CostModel c;
    c.regimes_ = costs.dim();
    c.constant_ = std::move(costs);
    return c;
}

CostModel CostModel::state_dependent(std::size_t regimes, Evaluator eval, double lipschitz) {
    CostModel c;
    c.regimes_ = regimes;
    c.eval_ = std::move(eval);
    c.lipschitz_ = lipschitz;
    return c;
}

CostMatrix CostModel::at(std::span<const double> x) const {
    if (constant_) return *constant_;
    CostMatrix out(regimes_);
    eval_(x, out);
    return out;
}

const CostMatrix& CostModel::constant_matrix() const {
    if (!constant_) throw InvalidArgument("CostModel: costs depend on the state");
    return *constant_;
}

Driver Driver::zero(std::size_t regimes) {
    Driver f;
    f.regimes = regimes;
    f.eval = [](std::span<const double>, std::span<const double>, std::span<const double>,
                std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
    return f;
}

Problem::Problem(SdeModel sde_, Driver driver_, Terminal terminal_, CostModel costs_, TimeGrid grid_)
    : sde(std::move(sde_)),
      driver(std::move(driver_)),
      terminal(std::move(terminal_)),
      costs(std::move(costs_)),
      grid(std::move(grid_)) {
    const std::size_t d = costs.regimes();
    if (d == 0) throw InvalidArgument("Problem: at least one regime is required");
    if (driver.regimes != d || terminal.regimes != d) {
        std::ostringstream msg;
        msg << "Problem: regime counts disagree (costs " << d << ", driver " << driver.regimes
            << ", terminal " << terminal.regimes << ")";
        throw InvalidArgument(msg.str());
    }
    if (sde.x0.size() != sde.state_dim) throw InvalidArgument("Problem: x0 does not match the state dimension");
    if (!sde.drift || !sde.diffusion) throw InvalidArgument("Problem: SDE coefficients are missing");
    if (!driver.eval || !terminal.eval) throw InvalidArgument("Problem: driver or terminal evaluator is missing");
}

namespace {

std::string regime_pair(std::size_t i, std::size_t j) {
    return std::to_string(i + 1) + std::to_string(j + 1);
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

}  // namespace

ValidationReport validate_problem(const Problem& p, std::span<const std::vector<double>> probes) {
    if (probes.empty()) throw InvalidArgument("validate_problem: at least one probe state is required");
    const std::size_t d = p.regimes();
    const std::size_t m = p.sde.state_dim;
    const std::size_t q = p.sde.brownian_dim;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    ValidationReport report;
    auto add = [&](std::size_t probe, ViolationKind kind, std::string msg) {
        report.violations.push_back({probe, kind, std::move(msg)});
    };

    for (std::size_t k = 0; k < probes.size(); ++k) {
        const auto& x = probes[k];
        if (x.size() != m)
            throw InvalidArgument("validate_problem: probe " + std::to_string(k) + " has dimension " +
                                  std::to_string(x.size()) + ", expected " + std::to_string(m));

        std::vector<double> b(m, nan), sig(m * q, nan);
        p.sde.drift(x, b);
        p.sde.diffusion(x, sig);
        if (!all_finite(b)) add(k, ViolationKind::dimension, "drift did not produce " + std::to_string(m) + " finite values");
        if (!all_finite(sig))
            add(k, ViolationKind::dimension,
                "diffusion did not produce " + std::to_string(m) + "x" + std::to_string(q) + " finite values");

        const CostMatrix c = p.costs.at(x);
        // A constant matrix is the same at every probe; report it once.
        if (k == 0 || !p.costs.is_constant())
            for (auto& msg : structure_violations(c)) add(k, ViolationKind::structure, std::move(msg));

        std::vector<double> g(d, nan);
        p.terminal.eval(x, g);
        if (!all_finite(g)) {
            add(k, ViolationKind::dimension, "terminal did not produce " + std::to_string(d) + " finite values");
        } else {
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    if (g[i] < g[j] - c(i, j)) {
                        std::ostringstream msg;
                        msg << "g^" << i + 1 << " >= g^" << j + 1 << " - c^{" << regime_pair(i, j)
                            << "} fails (" << g[i] << " < " << g[j] - c(i, j) << ")";
                        add(k, ViolationKind::terminal_membership, msg.str());
                    }
                }
            }
        }

        // Probe the driver's declared dependence structure by perturbing one input block at a time.
        std::vector<double> y(d), z(d * q), base(d, nan), moved(d, nan);
        for (std::size_t i = 0; i < d; ++i) y[i] = 0.25 * static_cast<double>(i + 1);
        for (std::size_t i = 0; i < d * q; ++i) z[i] = 0.125 * static_cast<double>(i + 1);
        p.driver.eval(x, y, z, base);
        if (!all_finite(base)) {
            add(k, ViolationKind::dimension, "driver did not produce " + std::to_string(d) + " finite values");
            continue;
        }
        if (p.driver.componentwise) {
            for (std::size_t j = 0; j < d; ++j) {
                auto y2 = y;
                y2[j] += 1.0;
                auto z2 = z;
                for (std::size_t r = 0; r < q; ++r) z2[j * q + r] += 1.0;
                p.driver.eval(x, y2, p.driver.depends_on_z ? z2 : z, moved);
                for (std::size_t i = 0; i < d; ++i) {
                    if (i != j && moved[i] != base[i]) {
                        add(k, ViolationKind::componentwise,
                            "driver flagged componentwise but f^" + std::to_string(i + 1) +
                                " reacts to component " + std::to_string(j + 1));
                    }
                }
            }
        }
        if (!p.driver.depends_on_z) {
            auto z2 = z;
            for (auto& v : z2) v += 1.0;
            p.driver.eval(x, y, z2, moved);
            if (moved != base) add(k, ViolationKind::z_dependence, "driver flagged z-independent but reacts to z");
        }
    }
    return report;
}

}  // namespace rbsde
