#pragma once

#include "rbsde/condexp.hpp"
#include "rbsde/core.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

inline constexpr double kPicardTolerance = 1e-12;
inline constexpr std::size_t kPicardMaxIterations = 100;

struct PicardResult {
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Solves y = e + dt f(x, y, z_bar) by Picard iteration from y = e, stopping
/// when the sup-norm update is below kPicardTolerance * max(1, |y|_inf).
/// Componentwise drivers are iterated as d independent scalar problems.
/// Throws InvalidArgument if dt * L_f >= 1 and NumericalError after
/// kPicardMaxIterations without convergence.
PicardResult implicit_step(std::span<const double> expectation, std::span<const double> z_bar,
                           std::span<const double> x, const Driver& driver, double dt, std::span<double> y);

/// Node or path values at one date. y_tilde and y are points x d,
/// z_bar is points x d x q (empty at the terminal date).
struct StepTables {
    std::vector<double> y_tilde;
    std::vector<double> y;
    std::vector<double> z_bar;
};

/// Probability-weighted means at one date.
struct StepSummary {
    std::vector<double> y_tilde;
    std::vector<double> y;
    std::vector<double> z_bar;
    std::vector<double> delta_k;
};

struct StepDiagnostics {
    std::size_t max_iterations = 0;
    double max_residual = 0.0;
};

struct SchemeSolution {
    TimeGrid grid;
    std::size_t regimes = 0;
    std::size_t state_dim = 0;
    std::size_t brownian_dim = 0;
    bool exact = false;
    std::vector<std::size_t> points;
    /// Empty per-step entries when tables were not retained.
    std::vector<StepTables> tables;
    std::vector<StepSummary> summary;
    std::vector<StepDiagnostics> diagnostics;

    bool has_tables() const noexcept { return !tables.empty(); }
    const std::vector<double>& y0() const { return summary.front().y; }
    const std::vector<double>& y_tilde0() const { return summary.front().y_tilde; }
    const std::vector<double>& z_bar0() const { return summary.front().z_bar; }
    /// sum over r in Re \ {0} of E[Delta K_r], per regime.
    std::vector<double> delta_k_mass() const;
};

struct SolveOptions {
    bool keep_tables = true;
};

/// Backward sweep from Y_T = g(X_T): Z-bar from the engine's increment-weighted
/// expectation, Y-tilde from the implicit step, Y by oblique projection at
/// reflection dates (t_0 included).
SchemeSolution backward_solve(const Problem& problem, const ConditionalExpectationEngine& engine,
                              const SolveOptions& options = {});

struct ComparisonReport {
    std::size_t checked = 0;
    double min_gap = 0.0;           // min over all points of Y1 - Y2
    double max_abs_difference = 0.0;
    std::vector<std::string> counterexamples;

    bool dominates() const noexcept { return counterexamples.empty(); }
};

/// Discrete comparison for z-independent componentwise drivers: if g1 >= g2
/// and f1 >= f2 (checked at every engine state and a fixed set of y probes)
/// then Y1 >= Y2 and Y-tilde1 >= Y-tilde2 everywhere. Ordering is certified up
/// to twice the Picard tolerance.
ComparisonReport compare_schemes(const Problem& p1, const Problem& p2, const ConditionalExpectationEngine& engine);

/// time_index,time,reflection,point,x_*,y_*,y_tilde_*,z_bar_*_*,delta_k_*.
/// One row per node when tables were kept, else one "mean" row per date.
void write_solution_csv(const SchemeSolution& sol, const ConditionalExpectationEngine& engine, std::ostream& out);

/// component,y0,y_tilde0,z_bar0_1..q,delta_k_mass.
void write_summary_csv(const SchemeSolution& sol, std::ostream& out);

}  // namespace rbsde
