#pragma once

#include "rbsde/core.hpp"
#include "rbsde/scheme.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rbsde {

enum class EngineKind { lattice, regression };

struct EngineConfig {
    EngineKind kind = EngineKind::lattice;
    std::size_t degree = 2;
    std::size_t paths = 10000;
};

/// How kappa follows n across a sweep: Re = pi, kappa ~ n^{2/3}, or listed.
enum class Coupling { equal, two_thirds, list };

struct GridConfig {
    double horizon = 1.0;
    std::vector<std::size_t> n;
    Coupling coupling = Coupling::equal;
    std::vector<std::size_t> kappa;  // Coupling::list only
};

/// Refinement in pi (time) or, at fixed n, in Re (reflection).
enum class Study { time, reflection };

struct OracleConfig {
    std::size_t random_instances = 0;
    std::size_t sample_strategies = 100;
};

struct EngineCompareConfig {
    std::size_t bootstrap = 32;
    std::vector<std::size_t> path_counts;  // defaults to {engine.paths}
};

struct RunConfig {
    std::string name;
    SdeModel sde;
    std::size_t regimes = 0;
    Driver driver;
    Terminal terminal;
    CostModel costs = CostModel::constant(CostMatrix(1));
    GridConfig grid;
    Study study = Study::time;
    EngineConfig engine;
    std::uint64_t seed = 1;
    bool exploratory = false;
    double slope_threshold = 0.4;
    std::vector<std::vector<double>> probes;
    OracleConfig oracle;
    EngineCompareConfig engine_compare;

    /// (n, kappa) for every sweep entry in config order.
    std::vector<std::pair<std::size_t, std::size_t>> sweep() const;
    Problem problem(std::size_t n, std::size_t kappa) const;
};

/// Parses a JSON document; every schema violation found is listed in the
/// ConfigError message, one per line.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& file);

/// Divisor of n closest to n^{2/3} in log scale, larger on ties.
std::size_t two_thirds_kappa(std::size_t n);

/// Lattice for constant-coefficient m = q = 1 models, regression otherwise.
std::unique_ptr<ConditionalExpectationEngine> make_engine(const RunConfig& cfg, const Problem& problem,
                                                          std::optional<std::size_t> paths = std::nullopt,
                                                          bool force_regression = false);

/// Config probes, x0, and Euler states of a few simulated paths.
std::vector<std::vector<double>> probe_states(const RunConfig& cfg);
ValidationReport validate_config(const RunConfig& cfg);

struct SingleRun {
    Problem problem;
    std::unique_ptr<ConditionalExpectationEngine> engine;
    SchemeSolution solution;
    double seconds = 0.0;
};

/// One solve on the first sweep entry. Throws ConfigError if validation fails.
SingleRun run_single(const RunConfig& cfg);

struct ConvergenceRow {
    std::size_t n = 0;
    std::size_t kappa = 0;
    double mesh = 0.0;
    double reflection_mesh = 0.0;
    std::vector<double> y0;
    std::vector<double> error;
    double seconds = 0.0;  // reported, never written to CSV
};

struct ConvergenceTable {
    Study study = Study::time;
    std::vector<ConvergenceRow> rows;  // fit rows, config order
    ConvergenceRow reference;
    std::vector<double> slopes;        // NaN where degenerate
    std::vector<bool> degenerate;
    double threshold = 0.4;
    bool asserted = true;              // false in exploratory mode

    bool all_degenerate() const;
    /// Every non-degenerate slope meets the threshold.
    bool passed() const;
};

/// Least-squares slope of log(error) on log(mesh).
double fit_loglog_slope(std::span<const double> mesh, std::span<const double> error);

/// Errors against the finest entry (largest n, or largest kappa for a
/// reflection study), which is excluded from the fit. Needs at least four
/// fit rows. Refuses z-dependent drivers unless exploratory.
ConvergenceTable run_convergence(const RunConfig& cfg);

struct OracleCompareRow {
    std::string instance;
    std::size_t decision_points = 0;
    std::vector<double> scheme;     // Y-tilde_0
    std::vector<double> oracle;     // max over all decision tables
    std::vector<double> extracted;  // value of a* per start regime
    double max_sampled_excess = 0.0;
    double discrepancy = 0.0;
};

struct OracleCompareReport {
    std::vector<OracleCompareRow> rows;
    double tolerance = 1e-10;

    double max_discrepancy() const;
    bool passed() const;
};

/// A random d = 2 lattice problem small enough for enumeration:
/// (n, kappa) in {(4,2), (6,2), (6,3)}, z-independent componentwise driver.
Problem random_tiny_instance(std::uint64_t seed, std::uint64_t index);

OracleCompareRow oracle_compare_instance(const Problem& problem, const std::string& label,
                                         std::size_t sample_strategies, std::uint64_t seed);
OracleCompareReport run_oracle_compare(const RunConfig& cfg);

struct EngineCompareRow {
    std::size_t paths = 0;
    std::vector<double> lattice;
    std::vector<double> regression;
    std::vector<double> standard_error;  // bootstrap
    std::vector<double> allowance;       // |Y_0(n) - Y_0(2n)| on the lattice
    std::vector<double> discrepancy;

    bool within_se() const;         // discrepancy <= 3 SE
    bool within_band() const;       // discrepancy <= 3 SE + allowance
};

struct EngineCompareReport {
    std::size_t n = 0;
    std::vector<EngineCompareRow> rows;
    /// Every row within 3 bootstrap SE. The allowance band is informational.
    bool passed() const;
};

EngineCompareReport run_engine_compare(const RunConfig& cfg);

/// n,kappa,mesh,reflection_mesh,reference,y0_*,error_* then "# slope" lines.
void write_convergence_csv(const ConvergenceTable& table, std::ostream& out);
/// instance,decision_points,regime,scheme,oracle,extracted,discrepancy.
void write_oracle_csv(const OracleCompareReport& report, std::ostream& out);
/// paths,component,lattice,regression,standard_error,allowance,discrepancy,within_se,within_band.
void write_engine_compare_csv(const EngineCompareReport& report, std::ostream& out);

}  // namespace rbsde
