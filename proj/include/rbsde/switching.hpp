#pragma once

#include "rbsde/core.hpp"
#include "rbsde/forward.hpp"
#include "rbsde/scheme.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

/// Decision points beyond this make exhaustive enumeration refuse to run.
/// 16 binary decision points is 65536 tables.
inline constexpr std::size_t kMaxDecisionPoints = 16;

/// Closed-loop switching rule on a lattice: at each decision date, for each
/// node and current regime, the regime to be in afterwards (equal to the
/// current one for "stay"). Decision dates are the reflection dates strictly
/// after the start and strictly before T; a switch at T never pays because
/// g(x) lies in Q(x).
struct SwitchingStrategy {
    std::size_t regimes = 0;
    std::size_t start_step = 0;
    std::size_t start_regime = 0;
    std::vector<std::size_t> dates;
    /// actions[k][node * regimes + regime]
    std::vector<std::vector<std::size_t>> actions;

    std::size_t action(std::size_t date_index, std::size_t node, std::size_t regime) const {
        return actions.at(date_index).at(node * regimes + regime);
    }
};

/// Reflection dates in (start_step, n).
std::vector<std::size_t> decision_dates(const TimeGrid& grid, std::size_t start_step);

/// Sum over decision dates of nodes x regimes.
std::size_t decision_points(const Lattice& lat, std::size_t regimes, std::size_t start_step);

/// The "stay forever" strategy.
SwitchingStrategy empty_strategy(const Lattice& lat, std::size_t regimes, std::size_t start_step,
                                 std::size_t start_regime);

/// Uniform random action at every decision point, drawn from
/// CounterStream(seed, index).
SwitchingStrategy random_strategy(const Lattice& lat, std::size_t regimes, std::size_t start_step,
                                  std::size_t start_regime, std::uint64_t seed, std::uint64_t index);

/// Switch from the current regime a at a decision date iff
/// Y-tilde^a <= max_{k != a} (Y-tilde^k - c^{ak}), to the smallest k attaining
/// the max. Requires node tables from a lattice solve.
SwitchingStrategy extract_optimal_strategy(const SchemeSolution& sol, const Lattice& lat, const Problem& problem,
                                           std::size_t start_step, std::size_t start_regime);

struct Switch {
    std::size_t step;
    std::size_t regime;
};

/// The open-loop sequence (theta_k, alpha_k), k >= 1, realised along one
/// lattice path. branch_choices[j] picks the branch taken at step start + j.
std::vector<Switch> rollout(const Lattice& lat, const SwitchingStrategy& strategy, std::size_t start_node,
                            std::span<const std::size_t> branch_choices);

struct SwitchedValue {
    /// U^a at the start date per start node, for the strategy's start regime.
    std::vector<double> value;
    /// Same, for every start regime under the same decision table (nodes x d).
    std::vector<double> value_all;
    /// E[A_T - A_start] per start node (start regime), costs summed at switches.
    std::vector<double> expected_cost;
};

/// Backward induction of the switched one-dimensional BSDE along the
/// strategy: implicit Euler step with the driver component of the current
/// regime, cost c^{ab}(x) subtracted at each switch. No projection is used.
/// Rejects z-dependent or non-componentwise drivers.
SwitchedValue evaluate_switched(const Lattice& lat, const SwitchingStrategy& strategy, const Problem& problem);

struct OracleResult {
    /// Max over all decision tables, start nodes x d (one column per start regime).
    std::vector<double> values;
    std::size_t tables = 0;
    std::size_t decision_points = 0;
};

/// Brute force over every adapted decision table. Rejects instances with more
/// than max_points decision points, quoting the count.
OracleResult enumerate_strategies_oracle(const Lattice& lat, const Problem& problem, std::size_t start_step,
                                         std::size_t max_points = kMaxDecisionPoints);

struct DominationReport {
    std::size_t sampled = 0;
    double max_excess = 0.0;       // max over samples and start regimes of U^a_0 - Y-tilde_0
    double optimal_gap = 0.0;      // max |U^{a*}_0 - Y-tilde_0| over start regimes
    std::vector<std::string> violations;

    bool ok() const noexcept { return violations.empty(); }
};

/// Samples random strategies from t_0 and checks U^a_0 <= Y-tilde_0 + 1e-10
/// for every start regime, plus equality (1e-10) for the extracted optimum.
DominationReport domination_check(const Lattice& lat, const Problem& problem, const SchemeSolution& sol,
                                  std::size_t sample_strategies, std::uint64_t seed);

/// reflection_date,node,regime,action (date as time index, regimes 1-based).
void write_strategy_csv(const SwitchingStrategy& strategy, std::ostream& out);

}  // namespace rbsde
