#include "rbsde/forward.hpp"

#include "rbsde/error.hpp"
#include "rbsde/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace rbsde {

PathBundle::PathBundle(TimeGrid grid, std::size_t paths, std::size_t state_dim, std::size_t brownian_dim,
                       std::uint64_t seed)
    : grid_(std::move(grid)),
      paths_(paths),
      m_(state_dim),
      q_(brownian_dim),
      seed_(seed),
      states_((grid_.steps() + 1) * paths * state_dim),
      increments_(grid_.steps() * paths * brownian_dim) {}

std::span<const double> PathBundle::states_at(std::size_t step) const {
    return std::span<const double>(states_).subspan(step * paths_ * m_, paths_ * m_);
}

std::span<const double> PathBundle::state(std::size_t step, std::size_t path) const {
    return std::span<const double>(states_).subspan((step * paths_ + path) * m_, m_);
}

std::span<double> PathBundle::state(std::size_t step, std::size_t path) {
    return std::span<double>(states_).subspan((step * paths_ + path) * m_, m_);
}

std::span<const double> PathBundle::increment(std::size_t step, std::size_t path) const {
    return std::span<const double>(increments_).subspan((step * paths_ + path) * q_, q_);
}

std::span<double> PathBundle::increment(std::size_t step, std::size_t path) {
    return std::span<double>(increments_).subspan((step * paths_ + path) * q_, q_);
}

PathBundle simulate_euler(const SdeModel& sde, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths) {
    if (n_paths == 0) throw InvalidArgument("simulate_euler: n_paths must be >= 1");
    if (sde.x0.size() != sde.state_dim) throw InvalidArgument("simulate_euler: x0 does not match the state dimension");
    const std::size_t m = sde.state_dim;
    const std::size_t q = sde.brownian_dim;
    const std::size_t n = grid.steps();
    PathBundle out(grid, n_paths, m, q, seed);

    constexpr std::size_t kNoFailure = std::numeric_limits<std::size_t>::max();
    std::size_t failed_path = kNoFailure;
    std::size_t failed_step = 0;

#pragma omp parallel
    {
        std::vector<double> b(m), sig(m * q);
#pragma omp for schedule(static)
        for (std::size_t p = 0; p < n_paths; ++p) {
            CounterStream rng(seed, p);
            auto x = out.state(0, p);
            std::copy(sde.x0.begin(), sde.x0.end(), x.begin());
            for (std::size_t i = 0; i < n; ++i) {
                const double dt = grid.dt(i);
                const double sq = std::sqrt(dt);
                auto dw = out.increment(i, p);
                for (auto& w : dw) w = sq * rng.normal();
                auto cur = out.state(i, p);
                auto next = out.state(i + 1, p);
                sde.drift(cur, b);
                sde.diffusion(cur, sig);
                bool finite = true;
                for (std::size_t a = 0; a < m; ++a) {
                    double v = cur[a] + b[a] * dt;
                    for (std::size_t r = 0; r < q; ++r) v += sig[a * q + r] * dw[r];
                    next[a] = v;
                    finite = finite && std::isfinite(v);
                }
                if (!finite) {
#pragma omp critical(rbsde_euler_failure)
                    if (p < failed_path) {
                        failed_path = p;
                        failed_step = i;
                    }
                    break;
                }
            }
        }
    }
    if (failed_path != kNoFailure) {
        throw NumericalError("simulate_euler: non-finite state on path " + std::to_string(failed_path) +
                             " at step " + std::to_string(failed_step));
    }
    return out;
}

void write_paths_csv(const PathBundle& paths, std::ostream& out) {
    out << "path,time_index";
    for (std::size_t a = 0; a < paths.state_dim(); ++a) out << ",x_" << a + 1;
    out << '\n';
    out.precision(17);
    for (std::size_t p = 0; p < paths.paths(); ++p) {
        for (std::size_t i = 0; i <= paths.grid().steps(); ++i) {
            out << p << ',' << i;
            for (double v : paths.state(i, p)) out << ',' << v;
            out << '\n';
        }
    }
}

Lattice::Lattice(TimeGrid grid, double x0, double drift, double sigma)
    : grid_(std::move(grid)), collapsed_(sigma == 0.0), sqrt_dt_(std::sqrt(grid_.dt(0))) {
    const std::size_t n = grid_.steps();
    states_.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        const std::size_t count = nodes(i);
        states_[i].resize(count);
        const double t = grid_.time(i);
        for (std::size_t k = 0; k < count; ++k) {
            const double level = static_cast<double>(2 * static_cast<long long>(k) - static_cast<long long>(i));
            states_[i][k] = x0 + drift * t + (collapsed_ ? 0.0 : sigma * level * sqrt_dt_);
        }
    }
}

std::vector<double> Lattice::marginal(std::size_t step) const {
    if (collapsed_) return {1.0};
    // Binomial(step, 1/2) weights.
    const double n = static_cast<double>(step);
    const double log_norm = std::lgamma(n + 1.0) - n * std::log(2.0);
    std::vector<double> row(step + 1);
    for (std::size_t k = 0; k <= step; ++k) {
        const double kk = static_cast<double>(k);
        row[k] = std::exp(log_norm - std::lgamma(kk + 1.0) - std::lgamma(n - kk + 1.0));
    }
    return row;
}

Lattice build_lattice(const SdeModel& sde, const TimeGrid& grid) {
    if (!sde.constant || sde.state_dim != 1 || sde.brownian_dim != 1)
        throw InvalidArgument("lattice engine requires constant coefficients with m = q = 1");
    if (!grid.is_uniform()) throw InvalidArgument("lattice engine requires a uniform time grid");
    return Lattice(grid, sde.x0.at(0), sde.constant->drift.at(0), sde.constant->diffusion.at(0));
}

}  // namespace rbsde
