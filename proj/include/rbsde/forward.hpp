#pragma once

#include "rbsde/core.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace rbsde {

/// Euler paths of the forward SDE together with the Brownian increments that
/// produced them. Storage is step-major so that all paths at one date are
/// contiguous.
class PathBundle {
public:
    PathBundle(TimeGrid grid, std::size_t paths, std::size_t state_dim, std::size_t brownian_dim, std::uint64_t seed);

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t paths() const noexcept { return paths_; }
    std::size_t state_dim() const noexcept { return m_; }
    std::size_t brownian_dim() const noexcept { return q_; }
    std::uint64_t seed() const noexcept { return seed_; }

    /// All paths at `step`, paths x m.
    std::span<const double> states_at(std::size_t step) const;
    std::span<const double> state(std::size_t step, std::size_t path) const;
    std::span<double> state(std::size_t step, std::size_t path);
    /// W_{t_{step+1}} - W_{t_step} for one path, q entries.
    std::span<const double> increment(std::size_t step, std::size_t path) const;
    std::span<double> increment(std::size_t step, std::size_t path);

    bool operator==(const PathBundle&) const = default;

private:
    TimeGrid grid_;
    std::size_t paths_;
    std::size_t m_;
    std::size_t q_;
    std::uint64_t seed_;
    std::vector<double> states_;
    std::vector<double> increments_;
};

/// X_{i+1} = X_i + b(X_i) dt_i + sigma(X_i) dW_i with Gaussian increments.
/// Path j draws from CounterStream(seed, j), so adding paths never changes
/// existing ones and the result does not depend on the thread count.
PathBundle simulate_euler(const SdeModel& sde, const TimeGrid& grid, std::uint64_t seed, std::size_t n_paths);

/// Dump as CSV: path,time_index,x_1..x_m.
void write_paths_csv(const PathBundle& paths, std::ostream& out);

struct LatticeBranch {
    std::size_t successor;
    double probability;
    double increment;  // Brownian increment proxy, +-sqrt(dt)
};

/// Recombining binomial tree for a one-dimensional constant-coefficient SDE.
/// Node k at step i sits at x0 + b t_i + sigma (2k - i) sqrt(dt); each node has
/// two branches of probability 1/2 with increments -sqrt(dt) (to node k) and
/// +sqrt(dt) (to node k + 1). When sigma = 0 the tree collapses to one node
/// per step, both branches pointing to it.
class Lattice {
public:
    static constexpr std::size_t kBranching = 2;

    Lattice(TimeGrid grid, double x0, double drift, double sigma);

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t steps() const noexcept { return grid_.steps(); }
    std::size_t nodes(std::size_t step) const noexcept { return collapsed_ ? 1 : step + 1; }
    std::span<const double> states_at(std::size_t step) const { return states_.at(step); }
    std::span<const double> state(std::size_t step, std::size_t node) const {
        return std::span<const double>(states_.at(step)).subspan(node, 1);
    }
    LatticeBranch branch(std::size_t /*step*/, std::size_t node, std::size_t b) const noexcept {
        return {collapsed_ ? 0 : node + b, 0.5, b == 0 ? -sqrt_dt_ : sqrt_dt_};
    }
    /// Unconditional node probabilities at `step`.
    std::vector<double> marginal(std::size_t step) const;

private:
    TimeGrid grid_;
    bool collapsed_;
    double sqrt_dt_;
    std::vector<std::vector<double>> states_;
};

/// Rejects anything but m = q = 1 constant coefficients on a uniform grid.
Lattice build_lattice(const SdeModel& sde, const TimeGrid& grid);

}  // namespace rbsde
