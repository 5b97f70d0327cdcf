#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rbsde {

/// Switching costs c^{ij} frozen at one state, stored row-major.
/// Entry (i, j) is the cost of leaving regime i for regime j.
class CostMatrix {
public:
    CostMatrix() = default;
    explicit CostMatrix(std::size_t d);
    CostMatrix(std::size_t d, std::vector<double> row_major);

    /// Zero diagonal, every off-diagonal entry equal to `cost`.
    static CostMatrix uniform(std::size_t d, double cost);

    std::size_t dim() const noexcept { return d_; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * d_ + j]; }
    double& operator()(std::size_t i, std::size_t j) noexcept { return values_[i * d_ + j]; }
    std::span<const double> values() const noexcept { return values_; }
    double max_entry() const noexcept;

    bool operator==(const CostMatrix&) const = default;

private:
    std::size_t d_ = 0;
    std::vector<double> values_;
};

/// Human-readable list of structure-condition failures (zero diagonal,
/// positive off-diagonal, strict triangle margin). Empty when valid.
/// Regimes are printed 1-based, e.g. "c^{12}+c^{23}-c^{13} = -1 <= 0".
std::vector<std::string> structure_violations(const CostMatrix& costs);

/// Oblique projection onto Q: out^i = max_j (y^j - c^{ij}).
/// `out` may not alias `y`.
void project(const CostMatrix& costs, std::span<const double> y, std::span<double> out);
std::vector<double> project(const CostMatrix& costs, std::span<const double> y);

/// Smallest j attaining max_j (y^j - c^{ij}).
std::size_t projection_target(const CostMatrix& costs, std::span<const double> y, std::size_t i);

/// y^i >= max_j (y^j - c^{ij}) for every i.
bool is_in_domain(const CostMatrix& costs, std::span<const double> y);

struct LipschitzWitness {
    std::vector<double> y1;
    std::vector<double> y2;
    double ratio = 0.0;  // |P(y1) - P(y2)| / |y1 - y2|
};

/// The pair (M, 0, ..., 0), (M + 1, 0, ..., 0) with M = max_{ij} c^{ij},
/// on which the projection stretches distances by exactly sqrt(d).
LipschitzWitness lipschitz_witness(std::size_t d, const CostMatrix& costs);

}  // namespace rbsde
