#include "rbsde/projection.hpp"

#include "rbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rbsde {

namespace {

void require_dim(const CostMatrix& costs, std::size_t n, const char* what) {
    if (costs.dim() != n) {
        std::ostringstream msg;
        msg << what << ": dimension mismatch (costs are " << costs.dim() << "x" << costs.dim()
            << ", vector has " << n << " entries)";
        throw InvalidArgument(msg.str());
    }
}

std::string fmt_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

CostMatrix::CostMatrix(std::size_t d) : d_(d), values_(d * d, 0.0) {}

CostMatrix::CostMatrix(std::size_t d, std::vector<double> row_major)
    : d_(d), values_(std::move(row_major)) {
    if (values_.size() != d * d) {
        throw InvalidArgument("CostMatrix: expected " + std::to_string(d * d) + " entries, got " +
                              std::to_string(values_.size()));
    }
}

CostMatrix CostMatrix::uniform(std::size_t d, double cost) {
    CostMatrix c(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) c(i, j) = cost;
    return c;
}

double CostMatrix::max_entry() const noexcept {
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

std::vector<std::string> structure_violations(const CostMatrix& c) {
    std::vector<std::string> out;
    const std::size_t d = c.dim();
    for (std::size_t i = 0; i < d; ++i) {
        if (c(i, i) != 0.0) {
            out.push_back("c^{" + std::to_string(i + 1) + std::to_string(i + 1) +
                          "} = " + fmt_number(c(i, i)) + " != 0");
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (i != j && !(c(i, j) > 0.0)) {
                out.push_back("c^{" + std::to_string(i + 1) + std::to_string(j + 1) +
                              "} = " + fmt_number(c(i, j)) + " <= 0");
            }
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (j == i) continue;
            for (std::size_t l = 0; l < d; ++l) {
                if (l == j) continue;
                const double margin = c(i, j) + c(j, l) - c(i, l);
                if (!(margin > 0.0)) {
                    const auto ij = std::to_string(i + 1) + std::to_string(j + 1);
                    const auto jl = std::to_string(j + 1) + std::to_string(l + 1);
                    const auto il = std::to_string(i + 1) + std::to_string(l + 1);
                    out.push_back("c^{" + ij + "}+c^{" + jl + "}-c^{" + il + "} = " +
                                  fmt_number(margin) + " <= 0");
                }
            }
        }
    }
    return out;
}

void project(const CostMatrix& costs, std::span<const double> y, std::span<double> out) {
    require_dim(costs, y.size(), "project");
    require_dim(costs, out.size(), "project");
    const std::size_t d = y.size();
    for (std::size_t i = 0; i < d; ++i) {
        double best = y[0] - costs(i, 0);
        for (std::size_t j = 1; j < d; ++j) best = std::max(best, y[j] - costs(i, j));
        out[i] = best;
    }
}

std::vector<double> project(const CostMatrix& costs, std::span<const double> y) {
    std::vector<double> out(y.size());
    project(costs, y, out);
    return out;
}

std::size_t projection_target(const CostMatrix& costs, std::span<const double> y, std::size_t i) {
    require_dim(costs, y.size(), "projection_target");
    std::size_t arg = 0;
    double best = y[0] - costs(i, 0);
    for (std::size_t j = 1; j < y.size(); ++j) {
        const double v = y[j] - costs(i, j);
        if (v > best) {
            best = v;
            arg = j;
        }
    }
    return arg;
}

bool is_in_domain(const CostMatrix& costs, std::span<const double> y) {
    require_dim(costs, y.size(), "is_in_domain");
    const std::size_t d = y.size();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (y[i] < y[j] - costs(i, j)) return false;
    return true;
}

LipschitzWitness lipschitz_witness(std::size_t d, const CostMatrix& costs) {
    if (d < 2) throw InvalidArgument("lipschitz_witness: d must be >= 2 (projection is the identity for d = 1)");
    if (costs.dim() != d) throw InvalidArgument("lipschitz_witness: cost matrix is not d x d");
    const double m = costs.max_entry();
    LipschitzWitness w;
    w.y1.assign(d, 0.0);
    w.y2.assign(d, 0.0);
    w.y1[0] = m;
    w.y2[0] = m + 1.0;
    const auto p1 = project(costs, w.y1);
    const auto p2 = project(costs, w.y2);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        num += (p1[i] - p2[i]) * (p1[i] - p2[i]);
        den += (w.y1[i] - w.y2[i]) * (w.y1[i] - w.y2[i]);
    }
    w.ratio = std::sqrt(num) / std::sqrt(den);
    return w;
}

}  // namespace rbsde
