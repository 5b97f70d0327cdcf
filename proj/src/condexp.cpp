#include "rbsde/condexp.hpp"

#include "rbsde/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rbsde {

namespace {

void require_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
        throw InvalidArgument(std::string(what) + ": expected " + std::to_string(want) + " values, got " +
                              std::to_string(got));
}

}  // namespace

void lattice_cond_exp(const Lattice& lat, std::size_t step, std::span<const double> next, std::size_t width,
                      std::span<double> out) {
    if (step >= lat.steps()) throw InvalidArgument("lattice_cond_exp: step out of range");
    require_size(next.size(), lat.nodes(step + 1) * width, "lattice_cond_exp (next values)");
    require_size(out.size(), lat.nodes(step) * width, "lattice_cond_exp (output)");
    const std::size_t nodes = lat.nodes(step);
    for (std::size_t k = 0; k < nodes; ++k) {
        for (std::size_t w = 0; w < width; ++w) out[k * width + w] = 0.0;
        for (std::size_t b = 0; b < Lattice::kBranching; ++b) {
            const auto br = lat.branch(step, k, b);
            for (std::size_t w = 0; w < width; ++w) out[k * width + w] += br.probability * next[br.successor * width + w];
        }
    }
}

std::vector<double> lattice_cond_exp(const Lattice& lat, std::size_t step, std::span<const double> next) {
    std::vector<double> out(step < lat.steps() ? lat.nodes(step) : 0);
    lattice_cond_exp(lat, step, next, 1, out);
    return out;
}

void lattice_z_bar(const Lattice& lat, std::size_t step, std::span<const double> next, std::size_t width, double dt,
                   std::span<double> out) {
    if (!(dt > 0.0)) throw InvalidArgument("lattice_z_bar: dt must be positive");
    if (step >= lat.steps()) throw InvalidArgument("lattice_z_bar: step out of range");
    require_size(next.size(), lat.nodes(step + 1) * width, "lattice_z_bar (next values)");
    require_size(out.size(), lat.nodes(step) * width, "lattice_z_bar (output)");
    const std::size_t nodes = lat.nodes(step);
    for (std::size_t k = 0; k < nodes; ++k) {
        for (std::size_t w = 0; w < width; ++w) out[k * width + w] = 0.0;
        for (std::size_t b = 0; b < Lattice::kBranching; ++b) {
            const auto br = lat.branch(step, k, b);
            for (std::size_t w = 0; w < width; ++w)
                out[k * width + w] += br.probability * next[br.successor * width + w] * br.increment;
        }
        for (std::size_t w = 0; w < width; ++w) out[k * width + w] /= dt;
    }
}

std::vector<double> lattice_z_bar(const Lattice& lat, std::size_t step, std::span<const double> next, double dt) {
    std::vector<double> out(step < lat.steps() ? lat.nodes(step) : 0);
    lattice_z_bar(lat, step, next, 1, dt, out);
    return out;
}

std::size_t BasisSpec::size() const {
    // C(m + p, p)
    std::size_t num = 1;
    for (std::size_t k = 1; k <= degree; ++k) num = num * (state_dim + k) / k;
    return num;
}

std::vector<std::vector<unsigned>> BasisSpec::exponents() const {
    std::vector<std::vector<unsigned>> out;
    std::vector<unsigned> cur(state_dim, 0);
    for (std::size_t total = 0; total <= degree; ++total) {
        // Enumerate compositions of `total` into state_dim parts, lexicographically descending.
        auto rec = [&](auto&& self, std::size_t pos, unsigned left) -> void {
            if (pos + 1 == state_dim) {
                cur[pos] = left;
                out.push_back(cur);
                return;
            }
            for (unsigned e = left + 1; e-- > 0;) {
                cur[pos] = e;
                self(self, pos + 1, left - e);
            }
        };
        if (state_dim == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(rec, 0, static_cast<unsigned>(total));
        }
    }
    return out;
}

RegressionDesign::RegressionDesign(const BasisSpec& basis, std::span<const double> states, std::size_t samples)
    : basis_(basis), exponents_(basis.exponents()), samples_(samples), states_(states) {
    parent_.assign(exponents_.size(), 0);
    factor_.assign(exponents_.size(), 0);
    for (std::size_t b = 1; b < exponents_.size(); ++b) {
        auto lower = exponents_[b];
        const auto a = static_cast<std::size_t>(std::find_if(lower.begin(), lower.end(), [](unsigned e) { return e > 0; }) -
                                                lower.begin());
        --lower[a];
        parent_[b] = static_cast<std::size_t>(std::find(exponents_.begin(), exponents_.begin() + b, lower) -
                                              exponents_.begin());
        factor_[b] = a;
    }
    const std::size_t m = basis.state_dim;
    const std::size_t nb = exponents_.size();
    require_size(states.size(), samples * m, "RegressionDesign (states)");
    if (samples < nb)
        throw InvalidArgument("regression: " + std::to_string(samples) + " samples cannot fit a basis of size " +
                              std::to_string(nb));

    shift_.assign(m, 0.0);
    scale_.assign(m, 1.0);
    for (std::size_t a = 0; a < m; ++a) {
        double mean = 0.0;
        for (std::size_t s = 0; s < samples; ++s) mean += states[s * m + a];
        mean /= static_cast<double>(samples);
        double var = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double dx = states[s * m + a] - mean;
            var += dx * dx;
        }
        var /= static_cast<double>(samples);
        shift_[a] = mean;
        const double sd = std::sqrt(var);
        // Spread below rounding noise of the mean is treated as none.
        scale_[a] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 0.0;
    }

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(nb));
    std::vector<double> row(nb);
    for (std::size_t s = 0; s < samples; ++s) {
        basis_row(states.subspan(s * m, m), row);
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = 0; j <= i; ++j) gram(i, j) += row[i] * row[j];
    }
    gram /= static_cast<double>(samples);
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();

    gram_.compute(gram);
    bool singular = gram_.info() != Eigen::Success;
    if (!singular) {
        const Eigen::VectorXd diag = gram_.matrixL().toDenseMatrix().diagonal().cwiseAbs2();
        singular = diag.minCoeff() < 1e-12 * diag.maxCoeff();
    }
    if (singular) {
        const double ridge = 1e-10 * gram.trace() / static_cast<double>(nb);
        gram.diagonal().array() += ridge;
        gram_.compute(gram);
        ridge_used_ = true;
        if (gram_.info() != Eigen::Success || !(ridge > 0.0))
            throw NumericalError("regression: Gram matrix is singular even after ridge repair");
    }
}

void RegressionDesign::basis_row(std::span<const double> x, std::span<double> row) const {
    const std::size_t m = basis_.state_dim;
    double u[16];
    std::vector<double> heap;
    double* scaled = u;
    if (m > 16) {
        heap.resize(m);
        scaled = heap.data();
    }
    for (std::size_t a = 0; a < m; ++a) scaled[a] = scale_[a] > 0.0 ? (x[a] - shift_[a]) / scale_[a] : 0.0;
    row[0] = 1.0;
    for (std::size_t b = 1; b < exponents_.size(); ++b) row[b] = row[parent_[b]] * scaled[factor_[b]];
}

Eigen::MatrixXd RegressionDesign::solve(std::span<const double> targets, std::size_t width) const {
    require_size(targets.size(), samples_ * width, "regression (targets)");
    const std::size_t m = basis_.state_dim;
    const std::size_t nb = exponents_.size();
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(width));
    std::vector<double> row(nb);
    for (std::size_t s = 0; s < samples_; ++s) {
        basis_row(states_.subspan(s * m, m), row);
        for (std::size_t w = 0; w < width; ++w) {
            const double t = targets[s * width + w];
            for (std::size_t b = 0; b < nb; ++b) rhs(b, w) += row[b] * t;
        }
    }
    rhs /= static_cast<double>(samples_);
    return gram_.solve(rhs);
}

void RegressionDesign::fitted(const Eigen::MatrixXd& coefficients, std::span<double> out) const {
    const std::size_t m = basis_.state_dim;
    const std::size_t nb = exponents_.size();
    const auto width = static_cast<std::size_t>(coefficients.cols());
    require_size(out.size(), samples_ * width, "regression (fitted)");
#pragma omp parallel
    {
        std::vector<double> row(nb);
#pragma omp for schedule(static)
        for (std::size_t s = 0; s < samples_; ++s) {
            basis_row(states_.subspan(s * m, m), row);
            for (std::size_t w = 0; w < width; ++w) {
                double v = 0.0;
                for (std::size_t b = 0; b < nb; ++b) v += row[b] * coefficients(b, w);
                out[s * width + w] = v;
            }
        }
    }
}

void RegressionFit::predict(std::span<const double> x, std::span<double> out) const {
    const auto exps = basis.exponents();
    for (std::size_t w = 0; w < width; ++w) out[w] = 0.0;
    for (std::size_t b = 0; b < exps.size(); ++b) {
        double v = 1.0;
        for (std::size_t a = 0; a < basis.state_dim; ++a) {
            const double u = scale[a] > 0.0 ? (x[a] - shift[a]) / scale[a] : 0.0;
            for (unsigned e = 0; e < exps[b][a]; ++e) v *= u;
        }
        for (std::size_t w = 0; w < width; ++w) out[w] += v * coefficients(b, w);
    }
}

RegressionFit regress(const BasisSpec& basis, std::span<const double> states, std::span<const double> targets,
                      std::size_t width, const std::string& label) {
    if (width == 0) throw InvalidArgument("regress: width must be >= 1");
    if (basis.state_dim == 0 || states.size() % basis.state_dim != 0)
        throw InvalidArgument("regress: states do not match the basis state dimension");
    const std::size_t samples = states.size() / basis.state_dim;
    try {
        RegressionDesign design(basis, states, samples);
        RegressionFit fit;
        fit.basis = basis;
        fit.width = width;
        fit.coefficients = design.solve(targets, width);
        fit.fitted.resize(samples * width);
        design.fitted(fit.coefficients, fit.fitted);
        fit.ridge_used = design.ridge_used();
        fit.shift = design.shift();
        fit.scale = design.scale();
        return fit;
    } catch (const NumericalError& e) {
        throw NumericalError(label.empty() ? std::string(e.what()) : label + ": " + e.what());
    }
}

void LatticeEngine::expectation(std::size_t step, std::span<const double> next, std::size_t width,
                                std::span<double> out) const {
    lattice_cond_exp(lattice_, step, next, width, out);
}

void LatticeEngine::weighted_expectation(std::size_t step, std::span<const double> next, std::size_t width,
                                         std::span<double> out) const {
    lattice_z_bar(lattice_, step, next, width, lattice_.grid().dt(step), out);
}

RegressionEngine::RegressionEngine(PathBundle paths, RegressionOptions options)
    : paths_(std::move(paths)), options_(options) {
    options_.basis.state_dim = paths_.state_dim();
    if (options_.clip_lo && options_.clip_hi && *options_.clip_lo > *options_.clip_hi)
        throw InvalidArgument("RegressionEngine: clip_lo exceeds clip_hi");
    const std::size_t n = paths_.grid().steps();
    designs_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        try {
            designs_.emplace_back(options_.basis, paths_.states_at(i), paths_.paths());
        } catch (const NumericalError& e) {
            throw NumericalError("step " + std::to_string(i) + ": " + e.what());
        }
    }
}

std::vector<double> RegressionEngine::weights(std::size_t) const {
    return std::vector<double>(paths_.paths(), 1.0 / static_cast<double>(paths_.paths()));
}

void RegressionEngine::expectation(std::size_t step, std::span<const double> next, std::size_t width,
                                   std::span<double> out) const {
    const auto& design = designs_.at(step);
    design.fitted(design.solve(next, width), out);
    if (options_.clip_lo || options_.clip_hi) {
        const double lo = options_.clip_lo.value_or(-std::numeric_limits<double>::infinity());
        const double hi = options_.clip_hi.value_or(std::numeric_limits<double>::infinity());
        for (auto& v : out) v = std::clamp(v, lo, hi);
    }
}

void RegressionEngine::weighted_expectation(std::size_t step, std::span<const double> next, std::size_t width,
                                            std::span<double> out) const {
    const std::size_t np = paths_.paths();
    const std::size_t q = paths_.brownian_dim();
    require_size(next.size(), np * width, "RegressionEngine (next values)");
    const double dt = paths_.grid().dt(step);
    std::vector<double> targets(np * width * q);
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < np; ++p) {
        const auto dw = paths_.increment(step, p);
        for (std::size_t w = 0; w < width; ++w)
            for (std::size_t r = 0; r < q; ++r) targets[(p * width + w) * q + r] = next[p * width + w] * dw[r] / dt;
    }
    const auto& design = designs_.at(step);
    design.fitted(design.solve(targets, width * q), out);
}

}  // namespace rbsde
