#include "rbsde/experiments.hpp"

#include "rbsde/condexp.hpp"
#include "rbsde/error.hpp"
#include "rbsde/expression.hpp"
#include "rbsde/forward.hpp"
#include "rbsde/random.hpp"
#include "rbsde/switching.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rbsde {

using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// JSON reading with collected diagnostics
// ---------------------------------------------------------------------------

class Issues {
public:
    void add(const std::string& where, const std::string& what) { items_.push_back(where + ": " + what); }
    bool empty() const noexcept { return items_.empty(); }
    [[noreturn]] void raise() const {
        std::string msg = "invalid configuration (" + std::to_string(items_.size()) + " problem" +
                          (items_.size() == 1 ? "" : "s") + ")";
        for (const auto& s : items_) msg += "\n  - " + s;
        throw ConfigError(msg);
    }

private:
    std::vector<std::string> items_;
};

std::string at(const std::string& where, std::size_t i) { return where + "[" + std::to_string(i) + "]"; }
std::string at(const std::string& where, const std::string& key) { return where + "." + key; }

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed,
                Issues& issues) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) issues.add(where, "unknown key \"" + key + "\"");
    }
}

bool expect_object(const json& j, const std::string& where, Issues& issues) {
    if (j.is_object()) return true;
    issues.add(where, "expected an object");
    return false;
}

bool expect_array(const json& j, const std::string& where, Issues& issues, std::optional<std::size_t> size = {}) {
    if (!j.is_array()) {
        issues.add(where, "expected an array");
        return false;
    }
    if (size && j.size() != *size) {
        issues.add(where, "expected " + std::to_string(*size) + " entries, got " + std::to_string(j.size()));
        return false;
    }
    return true;
}

std::optional<double> read_number(const json& j, const std::string& where, Issues& issues) {
    if (!j.is_number()) {
        issues.add(where, "expected a number");
        return std::nullopt;
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        issues.add(where, "must be finite");
        return std::nullopt;
    }
    return v;
}

std::optional<std::size_t> read_count(const json& j, const std::string& where, Issues& issues, std::size_t min = 0) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)) {
        issues.add(where, "expected a non-negative integer");
        return std::nullopt;
    }
    const auto v = j.get<std::uint64_t>();
    if (v < min) {
        issues.add(where, "must be at least " + std::to_string(min));
        return std::nullopt;
    }
    return static_cast<std::size_t>(v);
}

std::string number_text(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

/// Affine block {"const", "x": [...], "y": a or [...], "z": [...]} rewritten as
/// an expression source.
std::optional<std::string> affine_source(const json& j, const std::string& where, const ExpressionSymbols& sym,
                                         Issues& issues) {
    check_keys(j, where, {"const", "x", "y", "z"}, issues);
    std::string src = "0";
    auto term = [&](double coef, const std::string& var) {
        if (coef != 0.0) src += " + " + number_text(coef) + "*" + var;
    };
    if (j.contains("const")) {
        if (auto c = read_number(j["const"], at(where, "const"), issues)) src = number_text(*c);
    }
    if (j.contains("x")) {
        const auto& xs = j["x"];
        if (expect_array(xs, at(where, "x"), issues, sym.state_dim))
            for (std::size_t a = 0; a < xs.size(); ++a)
                if (auto c = read_number(xs[a], at(at(where, "x"), a), issues)) term(*c, "x" + std::to_string(a + 1));
    }
    if (j.contains("y")) {
        if (!sym.allow_yz) {
            issues.add(at(where, "y"), "y is only available in driver expressions");
        } else if (j["y"].is_array()) {
            const auto& ys = j["y"];
            if (expect_array(ys, at(where, "y"), issues, sym.regimes))
                for (std::size_t r = 0; r < ys.size(); ++r)
                    if (auto c = read_number(ys[r], at(at(where, "y"), r), issues))
                        term(*c, "y" + std::to_string(r + 1));
        } else if (auto c = read_number(j["y"], at(where, "y"), issues)) {
            term(*c, "y");
        }
    }
    if (j.contains("z")) {
        if (!sym.allow_yz) {
            issues.add(at(where, "z"), "z is only available in driver expressions");
        } else {
            const auto& zs = j["z"];
            if (expect_array(zs, at(where, "z"), issues, sym.brownian_dim))
                for (std::size_t k = 0; k < zs.size(); ++k)
                    if (auto c = read_number(zs[k], at(at(where, "z"), k), issues))
                        term(*c, "z" + std::to_string(k + 1));
        }
    }
    return src;
}

std::optional<Expression> read_expression(const json& j, const std::string& where, const ExpressionSymbols& sym,
                                          Issues& issues) {
    std::string src;
    if (j.is_number()) {
        auto v = read_number(j, where, issues);
        if (!v) return std::nullopt;
        return Expression::constant(*v);
    }
    if (j.is_string()) {
        src = j.get<std::string>();
    } else if (j.is_object()) {
        auto s = affine_source(j, where, sym, issues);
        if (!s) return std::nullopt;
        src = *s;
    } else {
        issues.add(where, "expected a number, an expression string, or an affine block");
        return std::nullopt;
    }
    try {
        return Expression::parse(src, sym);
    } catch (const ConfigError& e) {
        issues.add(where, e.what());
        return std::nullopt;
    }
}

std::vector<Expression> read_expression_list(const json& j, const std::string& where, std::size_t size,
                                             ExpressionSymbols sym, Issues& issues, bool per_component) {
    std::vector<Expression> out;
    if (!expect_array(j, where, issues, size)) return out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (per_component) sym.own = i;
        if (auto e = read_expression(j[i], at(where, i), sym, issues)) out.push_back(std::move(*e));
    }
    if (out.size() != size) out.clear();
    return out;
}

/// Either a bare list or {"components": [...], "lipschitz": L}.
struct ComponentBlock {
    std::vector<Expression> components;
    std::optional<double> lipschitz;
};

ComponentBlock read_component_block(const json& j, const std::string& where, std::size_t size,
                                    const ExpressionSymbols& sym, Issues& issues, bool per_component) {
    ComponentBlock block;
    if (j.is_object()) {
        check_keys(j, where, {"components", "lipschitz"}, issues);
        if (!j.contains("components")) {
            issues.add(where, "missing \"components\"");
            return block;
        }
        block.components =
            read_expression_list(j["components"], at(where, "components"), size, sym, issues, per_component);
        if (j.contains("lipschitz")) {
            block.lipschitz = read_number(j["lipschitz"], at(where, "lipschitz"), issues);
            if (block.lipschitz && *block.lipschitz < 0) issues.add(at(where, "lipschitz"), "must be >= 0");
        }
    } else {
        block.components = read_expression_list(j, where, size, sym, issues, per_component);
    }
    return block;
}

bool all_constant(const std::vector<Expression>& v) {
    return std::all_of(v.begin(), v.end(), [](const Expression& e) { return e.is_constant(); });
}

std::vector<double> constant_values(const std::vector<Expression>& v) {
    std::vector<double> out;
    for (const auto& e : v) out.push_back(e({}));
    return out;
}

StateFn state_function(std::vector<Expression> exprs) {
    return [exprs = std::move(exprs)](std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < exprs.size(); ++i) out[i] = exprs[i](x);
    };
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

std::size_t two_thirds_kappa(std::size_t n) {
    if (n == 0) throw InvalidArgument("two_thirds_kappa: n must be positive");
    const double target = (2.0 / 3.0) * std::log(static_cast<double>(n));
    std::size_t best = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= n; ++k) {
        if (n % k != 0) continue;
        const double gap = std::abs(std::log(static_cast<double>(k)) - target);
        if (gap <= best_gap + 1e-12) {
            best = k;
            best_gap = std::min(gap, best_gap);
        }
    }
    return best;
}

std::vector<std::pair<std::size_t, std::size_t>> RunConfig::sweep() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    switch (grid.coupling) {
        case Coupling::equal:
            for (auto n : grid.n) out.emplace_back(n, n);
            break;
        case Coupling::two_thirds:
            for (auto n : grid.n) out.emplace_back(n, two_thirds_kappa(n));
            break;
        case Coupling::list:
            if (grid.n.size() == 1) {
                for (auto k : grid.kappa) out.emplace_back(grid.n.front(), k);
            } else if (grid.kappa.size() == 1) {
                for (auto n : grid.n) out.emplace_back(n, grid.kappa.front());
            } else {
                for (std::size_t i = 0; i < std::min(grid.n.size(), grid.kappa.size()); ++i)
                    out.emplace_back(grid.n[i], grid.kappa[i]);
            }
            break;
    }
    return out;
}

Problem RunConfig::problem(std::size_t n, std::size_t kappa) const {
    return Problem(sde, driver, terminal, costs, build_uniform_grid(grid.horizon, n, kappa));
}

RunConfig parse_config(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
    }
    Issues issues;
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
    check_keys(doc,
               "config",
               {"name", "description", "sde", "regimes", "costs", "terminal", "driver", "grid", "engine", "seed",
                "exploratory", "probes", "study", "slope_threshold", "oracle", "engine_compare"},
               issues);

    RunConfig cfg;
    if (doc.contains("name")) {
        if (doc["name"].is_string())
            cfg.name = doc["name"].get<std::string>();
        else
            issues.add("name", "expected a string");
    }

    // SDE
    std::size_t m = 1;
    std::size_t q = 1;
    if (!doc.contains("sde")) {
        issues.add("sde", "missing");
    } else if (const auto& s = doc["sde"]; expect_object(s, "sde", issues)) {
        check_keys(s, "sde", {"dim", "brownian_dim", "x0", "drift", "diffusion", "lipschitz"}, issues);
        if (s.contains("dim")) {
            if (auto v = read_count(s["dim"], "sde.dim", issues, 1)) m = *v;
        }
        q = m;
        if (s.contains("brownian_dim")) {
            if (auto v = read_count(s["brownian_dim"], "sde.brownian_dim", issues, 1)) q = *v;
        }
        ExpressionSymbols sym{m, 0, 0, 0, false};
        std::vector<double> x0(m, 0.0);
        if (!s.contains("x0")) {
            issues.add("sde.x0", "missing");
        } else if (expect_array(s["x0"], "sde.x0", issues, m)) {
            for (std::size_t a = 0; a < m; ++a)
                if (auto v = read_number(s["x0"][a], at("sde.x0", a), issues)) x0[a] = *v;
        }
        std::vector<Expression> drift;
        if (s.contains("drift"))
            drift = read_expression_list(s["drift"], "sde.drift", m, sym, issues, false);
        else
            drift.assign(m, Expression::constant(0.0));
        std::vector<Expression> diffusion;
        if (!s.contains("diffusion")) {
            issues.add("sde.diffusion", "missing");
        } else if (expect_array(s["diffusion"], "sde.diffusion", issues, m)) {
            for (std::size_t a = 0; a < m; ++a) {
                auto row = read_expression_list(s["diffusion"][a], at("sde.diffusion", a), q, sym, issues, false);
                for (auto& e : row) diffusion.push_back(std::move(e));
            }
        }
        double lipschitz = 0.0;
        if (s.contains("lipschitz")) {
            if (auto v = read_number(s["lipschitz"], "sde.lipschitz", issues)) lipschitz = *v;
        }
        if (drift.size() == m && diffusion.size() == m * q) {
            if (all_constant(drift) && all_constant(diffusion)) {
                cfg.sde = SdeModel::with_constant_coefficients(x0, constant_values(drift), constant_values(diffusion), q);
            } else {
                cfg.sde.state_dim = m;
                cfg.sde.brownian_dim = q;
                cfg.sde.x0 = x0;
                cfg.sde.drift = state_function(drift);
                cfg.sde.diffusion = state_function(diffusion);
                if (!s.contains("lipschitz"))
                    issues.add("sde.lipschitz", "required when drift or diffusion depend on the state");
            }
            cfg.sde.lipschitz = lipschitz;
        }
    }

    // Regimes and costs
    std::size_t d = 0;
    if (doc.contains("regimes")) {
        if (auto v = read_count(doc["regimes"], "regimes", issues, 1)) d = *v;
    }
    if (!doc.contains("costs")) {
        issues.add("costs", "missing");
    } else {
        const json* matrix = &doc["costs"];
        std::optional<double> cost_lipschitz;
        if (matrix->is_object()) {
            check_keys(*matrix, "costs", {"matrix", "lipschitz"}, issues);
            if (matrix->contains("lipschitz")) cost_lipschitz = read_number((*matrix)["lipschitz"], "costs.lipschitz", issues);
            if (!matrix->contains("matrix")) {
                issues.add("costs", "missing \"matrix\"");
                matrix = nullptr;
            } else {
                matrix = &(*matrix)["matrix"];
            }
        }
        if (matrix && expect_array(*matrix, "costs", issues)) {
            if (d == 0) d = matrix->size();
            if (matrix->size() != d) {
                issues.add("costs", "expected " + std::to_string(d) + " rows, got " + std::to_string(matrix->size()));
            } else if (d == 0) {
                issues.add("costs", "at least one regime is required");
            } else {
                ExpressionSymbols sym{m, d, q, 0, false};
                std::vector<Expression> entries;
                for (std::size_t i = 0; i < d; ++i) {
                    auto row = read_expression_list((*matrix)[i], at("costs", i), d, sym, issues, false);
                    for (auto& e : row) entries.push_back(std::move(e));
                }
                if (entries.size() == d * d) {
                    if (all_constant(entries)) {
                        cfg.costs = CostModel::constant(CostMatrix(d, constant_values(entries)));
                    } else {
                        if (!cost_lipschitz)
                            issues.add("costs.lipschitz", "required when costs depend on the state");
                        cfg.costs = CostModel::state_dependent(
                            d,
                            [entries, d](std::span<const double> x, CostMatrix& out) {
                                std::vector<double> v(d * d);
                                for (std::size_t k = 0; k < d * d; ++k) v[k] = entries[k](x);
                                out = CostMatrix(d, std::move(v));
                            },
                            cost_lipschitz.value_or(0.0));
                    }
                }
            }
        }
    }
    cfg.regimes = d;

    // Terminal
    if (!doc.contains("terminal")) {
        issues.add("terminal", "missing");
    } else if (d > 0) {
        auto block = read_component_block(doc["terminal"], "terminal", d, {m, d, q, 0, false}, issues, false);
        if (block.components.size() == d) {
            cfg.terminal.regimes = d;
            const bool state_dependent = !all_constant(block.components);
            if (state_dependent && !block.lipschitz)
                issues.add("terminal.lipschitz", "required when the terminal depends on the state");
            cfg.terminal.lipschitz = block.lipschitz.value_or(0.0);
            cfg.terminal.eval = state_function(std::move(block.components));
        }
    }

    // Driver
    if (!doc.contains("driver")) {
        if (d > 0) cfg.driver = Driver::zero(d);
    } else if (d > 0) {
        auto block = read_component_block(doc["driver"], "driver", d, {m, d, q, 0, true}, issues, true);
        if (block.components.size() == d) {
            const auto& comps = block.components;
            const bool reads_yz = std::any_of(comps.begin(), comps.end(),
                                              [](const Expression& e) { return e.reads_y() || e.reads_z(); });
            if (reads_yz && !block.lipschitz)
                issues.add("driver.lipschitz", "required when the driver reads y or z");
            cfg.driver.regimes = d;
            cfg.driver.lipschitz = block.lipschitz.value_or(0.0);
            cfg.driver.depends_on_z =
                std::any_of(comps.begin(), comps.end(), [](const Expression& e) { return e.reads_z(); });
            cfg.driver.componentwise =
                std::none_of(comps.begin(), comps.end(), [](const Expression& e) { return e.reads_other_y(); });
            cfg.driver.bounded_in_z = !cfg.driver.depends_on_z;
            cfg.driver.eval = [comps](std::span<const double> x, std::span<const double> y,
                                      std::span<const double> z, std::span<double> out) {
                for (std::size_t i = 0; i < comps.size(); ++i) out[i] = comps[i](x, y, z);
            };
        }
    }

    // Grid
    if (!doc.contains("grid")) {
        issues.add("grid", "missing");
    } else if (const auto& g = doc["grid"]; expect_object(g, "grid", issues)) {
        check_keys(g, "grid", {"T", "n", "kappa"}, issues);
        if (g.contains("T")) {
            if (auto v = read_number(g["T"], "grid.T", issues)) {
                if (*v <= 0) issues.add("grid.T", "must be positive");
                cfg.grid.horizon = *v;
            }
        }
        if (!g.contains("n")) {
            issues.add("grid.n", "missing");
        } else if (g["n"].is_array()) {
            if (g["n"].empty()) issues.add("grid.n", "must not be empty");
            for (std::size_t i = 0; i < g["n"].size(); ++i)
                if (auto v = read_count(g["n"][i], at("grid.n", i), issues, 1)) cfg.grid.n.push_back(*v);
        } else if (auto v = read_count(g["n"], "grid.n", issues, 1)) {
            cfg.grid.n.push_back(*v);
        }
        if (!g.contains("kappa")) {
            cfg.grid.coupling = Coupling::equal;
        } else if (g["kappa"].is_string()) {
            const auto rule = g["kappa"].get<std::string>();
            if (rule == "equal")
                cfg.grid.coupling = Coupling::equal;
            else if (rule == "two-thirds")
                cfg.grid.coupling = Coupling::two_thirds;
            else
                issues.add("grid.kappa", "unknown coupling \"" + rule + "\" (expected \"equal\", \"two-thirds\", or a list)");
        } else {
            cfg.grid.coupling = Coupling::list;
            if (g["kappa"].is_array()) {
                if (g["kappa"].empty()) issues.add("grid.kappa", "must not be empty");
                for (std::size_t i = 0; i < g["kappa"].size(); ++i)
                    if (auto v = read_count(g["kappa"][i], at("grid.kappa", i), issues, 1)) cfg.grid.kappa.push_back(*v);
            } else if (auto v = read_count(g["kappa"], "grid.kappa", issues, 1)) {
                cfg.grid.kappa.push_back(*v);
            }
            if (cfg.grid.n.size() > 1 && cfg.grid.kappa.size() > 1 && cfg.grid.n.size() != cfg.grid.kappa.size())
                issues.add("grid.kappa", "list length must be 1, match grid.n, or grid.n must have one entry");
        }
        for (const auto& [n, k] : cfg.sweep()) {
            if (k == 0 || n % k != 0)
                issues.add("grid", "kappa = " + std::to_string(k) + " does not divide n = " + std::to_string(n));
        }
    }

    if (doc.contains("study")) {
        const auto& s = doc["study"];
        if (s == "time")
            cfg.study = Study::time;
        else if (s == "reflection")
            cfg.study = Study::reflection;
        else
            issues.add("study", "expected \"time\" or \"reflection\"");
    } else {
        cfg.study = (cfg.grid.n.size() == 1 && cfg.grid.coupling == Coupling::list && cfg.grid.kappa.size() > 1)
                        ? Study::reflection
                        : Study::time;
    }

    // Engine
    if (doc.contains("engine")) {
        if (const auto& e = doc["engine"]; expect_object(e, "engine", issues)) {
            check_keys(e, "engine", {"type", "degree", "paths"}, issues);
            if (e.contains("type")) {
                if (e["type"] == "lattice")
                    cfg.engine.kind = EngineKind::lattice;
                else if (e["type"] == "regression")
                    cfg.engine.kind = EngineKind::regression;
                else
                    issues.add("engine.type", "expected \"lattice\" or \"regression\"");
            }
            if (e.contains("degree")) {
                if (auto v = read_count(e["degree"], "engine.degree", issues)) cfg.engine.degree = *v;
            }
            if (e.contains("paths")) {
                if (auto v = read_count(e["paths"], "engine.paths", issues, 1)) cfg.engine.paths = *v;
            }
        }
    }
    if (cfg.engine.kind == EngineKind::lattice && cfg.sde.drift &&
        (!cfg.sde.constant || cfg.sde.state_dim != 1 || cfg.sde.brownian_dim != 1))
        issues.add("engine.type", "lattice engine requires constant coefficients with m = q = 1; use \"regression\"");

    if (doc.contains("seed")) {
        if (doc["seed"].is_number_unsigned())
            cfg.seed = doc["seed"].get<std::uint64_t>();
        else
            issues.add("seed", "expected a non-negative integer");
    }
    if (doc.contains("exploratory")) {
        if (doc["exploratory"].is_boolean())
            cfg.exploratory = doc["exploratory"].get<bool>();
        else
            issues.add("exploratory", "expected true or false");
    }
    if (doc.contains("slope_threshold")) {
        if (auto v = read_number(doc["slope_threshold"], "slope_threshold", issues)) cfg.slope_threshold = *v;
    }
    if (doc.contains("probes")) {
        const auto& p = doc["probes"];
        if (expect_array(p, "probes", issues)) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!expect_array(p[i], at("probes", i), issues, m)) continue;
                std::vector<double> x(m);
                bool ok = true;
                for (std::size_t a = 0; a < m; ++a) {
                    auto v = read_number(p[i][a], at(at("probes", i), a), issues);
                    ok = ok && v.has_value();
                    if (v) x[a] = *v;
                }
                if (ok) cfg.probes.push_back(std::move(x));
            }
        }
    }
    if (doc.contains("oracle")) {
        if (const auto& o = doc["oracle"]; expect_object(o, "oracle", issues)) {
            check_keys(o, "oracle", {"random_instances", "sample_strategies"}, issues);
            if (o.contains("random_instances")) {
                if (auto v = read_count(o["random_instances"], "oracle.random_instances", issues))
                    cfg.oracle.random_instances = *v;
            }
            if (o.contains("sample_strategies")) {
                if (auto v = read_count(o["sample_strategies"], "oracle.sample_strategies", issues))
                    cfg.oracle.sample_strategies = *v;
            }
        }
    }
    if (doc.contains("engine_compare")) {
        if (const auto& o = doc["engine_compare"]; expect_object(o, "engine_compare", issues)) {
            check_keys(o, "engine_compare", {"bootstrap", "path_counts"}, issues);
            if (o.contains("bootstrap")) {
                if (auto v = read_count(o["bootstrap"], "engine_compare.bootstrap", issues, 2))
                    cfg.engine_compare.bootstrap = *v;
            }
            if (o.contains("path_counts") && expect_array(o["path_counts"], "engine_compare.path_counts", issues)) {
                for (std::size_t i = 0; i < o["path_counts"].size(); ++i)
                    if (auto v = read_count(o["path_counts"][i], at("engine_compare.path_counts", i), issues, 2))
                        cfg.engine_compare.path_counts.push_back(*v);
            }
        }
    }
    if (cfg.engine_compare.path_counts.empty()) cfg.engine_compare.path_counts.push_back(cfg.engine.paths);

    if (!issues.empty()) issues.raise();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open configuration file " + file.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::unique_ptr<ConditionalExpectationEngine> make_engine(const RunConfig& cfg, const Problem& problem,
                                                          std::optional<std::size_t> paths, bool force_regression) {
    if (cfg.engine.kind == EngineKind::lattice && !force_regression)
        return std::make_unique<LatticeEngine>(build_lattice(problem.sde, problem.grid));
    auto bundle = simulate_euler(problem.sde, problem.grid, cfg.seed, paths.value_or(cfg.engine.paths));
    RegressionOptions options;
    options.basis = BasisSpec{problem.sde.state_dim, cfg.engine.degree};
    return std::make_unique<RegressionEngine>(std::move(bundle), options);
}

std::vector<std::vector<double>> probe_states(const RunConfig& cfg) {
    std::vector<std::vector<double>> out = cfg.probes;
    out.push_back(cfg.sde.x0);
    const auto entries = cfg.sweep();
    if (entries.empty()) return out;
    const auto grid = build_uniform_grid(cfg.grid.horizon, entries.front().first, entries.front().second);
    constexpr std::size_t kPaths = 16;
    constexpr std::size_t kDates = 8;
    const auto paths = simulate_euler(cfg.sde, grid, cfg.seed, kPaths);
    const std::size_t n = grid.steps();
    const std::size_t stride = std::max<std::size_t>(1, n / kDates);
    for (std::size_t step = stride; step <= n; step += stride)
        for (std::size_t p = 0; p < kPaths; ++p) {
            const auto x = paths.state(step, p);
            out.emplace_back(x.begin(), x.end());
        }
    return out;
}

ValidationReport validate_config(const RunConfig& cfg) {
    const auto entries = cfg.sweep();
    if (entries.empty()) throw ConfigError("grid: no sweep entries");
    const Problem p = cfg.problem(entries.front().first, entries.front().second);
    const auto probes = probe_states(cfg);
    return validate_problem(p, probes);
}

namespace {

void require_valid(const RunConfig& cfg) {
    const auto report = validate_config(cfg);
    if (report.ok()) return;
    std::string msg = "problem fails validation (" + std::to_string(report.violations.size()) + " violations)";
    std::size_t shown = 0;
    for (const auto& v : report.violations) {
        if (++shown > 20) {
            msg += "\n  ...";
            break;
        }
        msg += "\n  - probe " + std::to_string(v.probe) + ": " + v.message;
    }
    throw ConfigError(msg);
}

bool keep_node_tables(const ConditionalExpectationEngine& engine) {
    constexpr std::size_t kMaxStoredPoints = 4'000'000;
    if (!engine.exact()) return false;
    std::size_t total = 0;
    for (std::size_t step = 0; step <= engine.grid().steps(); ++step) total += engine.points(step);
    return total <= kMaxStoredPoints;
}

}  // namespace

SingleRun run_single(const RunConfig& cfg) {
    require_valid(cfg);
    const auto [n, kappa] = cfg.sweep().front();
    Problem problem = cfg.problem(n, kappa);
    const auto start = std::chrono::steady_clock::now();
    auto engine = make_engine(cfg, problem);
    SolveOptions options;
    options.keep_tables = keep_node_tables(*engine);
    auto solution = backward_solve(problem, *engine, options);
    SingleRun run{std::move(problem), std::move(engine), std::move(solution), seconds_since(start)};
    return run;
}

// ---------------------------------------------------------------------------
// Convergence
// ---------------------------------------------------------------------------

bool ConvergenceTable::all_degenerate() const {
    return std::all_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
}

bool ConvergenceTable::passed() const {
    for (std::size_t r = 0; r < slopes.size(); ++r)
        if (!degenerate[r] && !(slopes[r] >= threshold)) return false;
    return true;
}

double fit_loglog_slope(std::span<const double> mesh, std::span<const double> error) {
    if (mesh.size() != error.size() || mesh.size() < 2)
        throw InvalidArgument("fit_loglog_slope: need at least two matching points");
    double sx = 0, sy = 0;
    const double k = static_cast<double>(mesh.size());
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        if (!(mesh[i] > 0) || !(error[i] > 0)) throw InvalidArgument("fit_loglog_slope: values must be positive");
        sx += std::log(mesh[i]);
        sy += std::log(error[i]);
    }
    const double mx = sx / k, my = sy / k;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        const double dx = std::log(mesh[i]) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(error[i]) - my);
    }
    if (sxx == 0) throw InvalidArgument("fit_loglog_slope: all mesh sizes are equal");
    return sxy / sxx;
}

ConvergenceTable run_convergence(const RunConfig& cfg) {
    if (cfg.driver.depends_on_z && !cfg.exploratory)
        throw ConfigError(
            "convergence rates are asserted only for drivers that do not depend on z; "
            "set \"exploratory\": true to run without assertions");
    auto entries = cfg.sweep();
    if (entries.empty()) throw ConfigError("grid: no sweep entries");
    const auto key = [&](const std::pair<std::size_t, std::size_t>& e) {
        return cfg.study == Study::time ? e.first : e.second;
    };
    const auto ref_it = std::max_element(entries.begin(), entries.end(),
                                         [&](const auto& a, const auto& b) { return key(a) < key(b); });
    const auto reference = *ref_it;
    entries.erase(ref_it);
    for (const auto& e : entries)
        if (key(e) == key(reference))
            throw ConfigError("convergence sweep: the finest entry must be unique");
    if (entries.size() < 4)
        throw ConfigError("convergence sweep needs at least 4 grid sizes besides the reference, got " +
                          std::to_string(entries.size()));
    require_valid(cfg);

    auto solve_row = [&](std::size_t n, std::size_t kappa) {
        ConvergenceRow row;
        const auto start = std::chrono::steady_clock::now();
        const Problem p = cfg.problem(n, kappa);
        const auto engine = make_engine(cfg, p);
        const auto sol = backward_solve(p, *engine, SolveOptions{false});
        row.n = n;
        row.kappa = kappa;
        row.mesh = p.grid.mesh();
        row.reflection_mesh = p.grid.reflection_mesh();
        row.y0 = sol.y0();
        row.seconds = seconds_since(start);
        return row;
    };

    ConvergenceTable table;
    table.study = cfg.study;
    table.threshold = cfg.slope_threshold;
    table.asserted = !cfg.exploratory;
    table.reference = solve_row(reference.first, reference.second);
    table.rows.resize(entries.size());
    std::vector<std::exception_ptr> failures(entries.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < entries.size(); ++i) {
        try {
            table.rows[i] = solve_row(entries[i].first, entries[i].second);
        } catch (...) {
            failures[i] = std::current_exception();
        }
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);

    const std::size_t d = cfg.regimes;
    const auto& ref = table.reference.y0;
    for (auto& row : table.rows) {
        row.error.resize(d);
        for (std::size_t r = 0; r < d; ++r) row.error[r] = std::abs(row.y0[r] - ref[r]);
    }
    table.reference.error.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        std::vector<double> mesh, err;
        for (const auto& row : table.rows) {
            if (row.error[r] <= 1e-13 * std::max(1.0, std::abs(ref[r]))) continue;
            mesh.push_back(cfg.study == Study::time ? row.mesh : row.reflection_mesh);
            err.push_back(row.error[r]);
        }
        if (mesh.size() < 2 || *std::max_element(mesh.begin(), mesh.end()) == *std::min_element(mesh.begin(), mesh.end())) {
            table.slopes.push_back(std::numeric_limits<double>::quiet_NaN());
            table.degenerate.push_back(true);
        } else {
            table.slopes.push_back(fit_loglog_slope(mesh, err));
            table.degenerate.push_back(false);
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// Oracle comparison
// ---------------------------------------------------------------------------

double OracleCompareReport::max_discrepancy() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max({m, r.discrepancy, r.max_sampled_excess});
    return m;
}

bool OracleCompareReport::passed() const { return max_discrepancy() <= tolerance; }

Problem random_tiny_instance(std::uint64_t seed, std::uint64_t index) {
    CounterStream rng(seed, index);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    static constexpr std::pair<std::size_t, std::size_t> kShapes[] = {{4, 2}, {6, 2}, {6, 3}};
    const auto [n, kappa] = kShapes[rng.below(3)];

    const double sigma = uniform(0.2, 1.0);
    const double drift = uniform(-0.5, 0.5);
    const double x0 = uniform(-1.0, 1.0);
    auto sde = SdeModel::with_constant_coefficients({x0}, {drift}, {sigma}, 1);

    const double c12 = uniform(0.05, 0.5);
    const double c21 = uniform(0.05, 0.5);
    const CostMatrix costs(2, {0.0, c12, c21, 0.0});

    const double a[2] = {uniform(-1, 1), uniform(-1, 1)};
    const double b[2] = {uniform(-1, 1), uniform(-1, 1)};
    Terminal terminal;
    terminal.regimes = 2;
    terminal.lipschitz = std::max(std::abs(b[0]), std::abs(b[1])) * 2.0;
    terminal.eval = [costs, a0 = a[0], a1 = a[1], b0 = b[0], b1 = b[1]](std::span<const double> x,
                                                                        std::span<double> out) {
        const double raw[2] = {a0 + b0 * x[0], a1 + b1 * x[0]};
        project(costs, raw, out);
    };

    struct Coef {
        double alpha, beta, gamma, delta, theta;
    };
    Coef coef[2];
    double lipschitz = 0.0;
    for (auto& c : coef) {
        c = {uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
        lipschitz = std::max(lipschitz, std::abs(c.gamma) + std::abs(c.delta));
    }
    Driver driver;
    driver.regimes = 2;
    driver.lipschitz = lipschitz;
    driver.eval = [c0 = coef[0], c1 = coef[1]](std::span<const double> x, std::span<const double> y,
                                              std::span<const double>, std::span<double> out) {
        const Coef cs[2] = {c0, c1};
        for (std::size_t i = 0; i < 2; ++i) {
            const auto& c = cs[i];
            out[i] = c.alpha + c.beta * x[0] + c.gamma * y[i] + c.delta * std::max(y[i] - c.theta, 0.0);
        }
    };
    return Problem(std::move(sde), std::move(driver), std::move(terminal), CostModel::constant(costs),
                   build_uniform_grid(1.0, n, kappa));
}

OracleCompareRow oracle_compare_instance(const Problem& problem, const std::string& label,
                                         std::size_t sample_strategies, std::uint64_t seed) {
    const Lattice lat = build_lattice(problem.sde, problem.grid);
    const LatticeEngine engine(lat);
    const auto sol = backward_solve(problem, engine);
    const std::size_t d = problem.regimes();

    OracleCompareRow row;
    row.instance = label;
    const auto oracle = enumerate_strategies_oracle(lat, problem, 0);
    row.decision_points = oracle.decision_points;
    row.scheme = sol.tables.front().y_tilde;
    row.oracle = oracle.values;
    for (std::size_t r = 0; r < d; ++r) {
        const auto best = extract_optimal_strategy(sol, lat, problem, 0, r);
        row.extracted.push_back(evaluate_switched(lat, best, problem).value.front());
    }
    for (std::size_t r = 0; r < d; ++r) {
        row.discrepancy = std::max({row.discrepancy, std::abs(row.scheme[r] - row.oracle[r]),
                                    std::abs(row.scheme[r] - row.extracted[r]),
                                    std::abs(row.oracle[r] - row.extracted[r])});
    }
    const auto dom = domination_check(lat, problem, sol, sample_strategies, seed);
    row.max_sampled_excess = std::max(0.0, dom.max_excess);
    return row;
}

OracleCompareReport run_oracle_compare(const RunConfig& cfg) {
    require_valid(cfg);
    OracleCompareReport report;
    const auto [n, kappa] = cfg.sweep().front();
    const Problem p = cfg.problem(n, kappa);
    try {
        report.rows.push_back(oracle_compare_instance(p, cfg.name.empty() ? "config" : cfg.name,
                                                      cfg.oracle.sample_strategies, cfg.seed));
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("oracle comparison rejected: ") + e.what());
    }
    for (std::size_t i = 0; i < cfg.oracle.random_instances; ++i) {
        const Problem tiny = random_tiny_instance(cfg.seed, i);
        report.rows.push_back(oracle_compare_instance(tiny, "random-" + std::to_string(i),
                                                      cfg.oracle.sample_strategies, cfg.seed + i));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Engine comparison
// ---------------------------------------------------------------------------

bool EngineCompareRow::within_se() const {
    for (std::size_t r = 0; r < discrepancy.size(); ++r)
        if (!(discrepancy[r] <= 3.0 * standard_error[r])) return false;
    return true;
}

bool EngineCompareRow::within_band() const {
    for (std::size_t r = 0; r < discrepancy.size(); ++r)
        if (!(discrepancy[r] <= 3.0 * standard_error[r] + allowance[r])) return false;
    return true;
}

bool EngineCompareReport::passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const EngineCompareRow& r) { return r.within_se(); });
}

namespace {

PathBundle resample(const PathBundle& base, std::uint64_t seed, std::uint64_t replicate) {
    const std::size_t n_paths = base.paths();
    const std::size_t steps = base.grid().steps();
    PathBundle out(base.grid(), n_paths, base.state_dim(), base.brownian_dim(), base.seed());
    CounterStream rng(seed ^ 0xB0075712A9ULL, replicate);
    for (std::size_t j = 0; j < n_paths; ++j) {
        const std::size_t src = static_cast<std::size_t>(rng.below(n_paths));
        for (std::size_t step = 0; step <= steps; ++step) {
            const auto x = base.state(step, src);
            std::copy(x.begin(), x.end(), out.state(step, j).begin());
            if (step < steps) {
                const auto dw = base.increment(step, src);
                std::copy(dw.begin(), dw.end(), out.increment(step, j).begin());
            }
        }
    }
    return out;
}

}  // namespace

EngineCompareReport run_engine_compare(const RunConfig& cfg) {
    require_valid(cfg);
    const auto [n, kappa] = cfg.sweep().front();
    const Problem p = cfg.problem(n, kappa);
    const Problem fine = cfg.problem(2 * n, 2 * kappa);
    std::vector<double> lattice_y0, lattice_fine;
    try {
        lattice_y0 = backward_solve(p, LatticeEngine(build_lattice(p.sde, p.grid)), SolveOptions{false}).y0();
        lattice_fine =
            backward_solve(fine, LatticeEngine(build_lattice(fine.sde, fine.grid)), SolveOptions{false}).y0();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("engine comparison needs a problem that admits a lattice: ") + e.what());
    }
    const std::size_t d = p.regimes();
    RegressionOptions options;
    options.basis = BasisSpec{p.sde.state_dim, cfg.engine.degree};

    EngineCompareReport report;
    report.n = n;
    for (std::size_t paths : cfg.engine_compare.path_counts) {
        EngineCompareRow row;
        row.paths = paths;
        row.lattice = lattice_y0;
        auto base = simulate_euler(p.sde, p.grid, cfg.seed, paths);
        std::vector<std::vector<double>> replicates;
        for (std::size_t b = 0; b < cfg.engine_compare.bootstrap; ++b) {
            RegressionEngine engine(resample(base, cfg.seed, b), options);
            replicates.push_back(backward_solve(p, engine, SolveOptions{false}).y0());
        }
        RegressionEngine engine(std::move(base), options);
        row.regression = backward_solve(p, engine, SolveOptions{false}).y0();
        const double count = static_cast<double>(replicates.size());
        for (std::size_t r = 0; r < d; ++r) {
            double mean = 0.0;
            for (const auto& v : replicates) mean += v[r];
            mean /= count;
            double var = 0.0;
            for (const auto& v : replicates) var += (v[r] - mean) * (v[r] - mean);
            row.standard_error.push_back(std::sqrt(var / (count - 1.0)));
            row.allowance.push_back(std::abs(lattice_y0[r] - lattice_fine[r]));
            row.discrepancy.push_back(std::abs(lattice_y0[r] - row.regression[r]));
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_convergence_csv(const ConvergenceTable& table, std::ostream& out) {
    const std::size_t d = table.slopes.size();
    out << "n,kappa,mesh,reflection_mesh,reference";
    for (std::size_t r = 0; r < d; ++r) out << ",y0_" << r + 1;
    for (std::size_t r = 0; r < d; ++r) out << ",error_" << r + 1;
    out << '\n';
    out.precision(17);
    auto emit = [&](const ConvergenceRow& row, bool ref) {
        out << row.n << ',' << row.kappa << ',' << row.mesh << ',' << row.reflection_mesh << ',' << (ref ? 1 : 0);
        for (double v : row.y0) out << ',' << v;
        for (double v : row.error) out << ',' << v;
        out << '\n';
    };
    for (const auto& row : table.rows) emit(row, false);
    emit(table.reference, true);
    for (std::size_t r = 0; r < d; ++r) {
        out << "# slope_" << r + 1 << ' ';
        if (table.degenerate[r])
            out << "degenerate";
        else
            out << table.slopes[r];
        out << '\n';
    }
}

void write_oracle_csv(const OracleCompareReport& report, std::ostream& out) {
    out << "instance,decision_points,regime,scheme,oracle,extracted,discrepancy,sampled_excess\n";
    out.precision(17);
    for (const auto& row : report.rows)
        for (std::size_t r = 0; r < row.scheme.size(); ++r)
            out << row.instance << ',' << row.decision_points << ',' << r + 1 << ',' << row.scheme[r] << ','
                << row.oracle[r] << ',' << row.extracted[r] << ',' << row.discrepancy << ','
                << row.max_sampled_excess << '\n';
}

void write_engine_compare_csv(const EngineCompareReport& report, std::ostream& out) {
    out << "paths,component,lattice,regression,standard_error,allowance,discrepancy,within_se,within_band\n";
    out.precision(17);
    for (const auto& row : report.rows)
        for (std::size_t r = 0; r < row.lattice.size(); ++r)
            out << row.paths << ',' << r + 1 << ',' << row.lattice[r] << ',' << row.regression[r] << ','
                << row.standard_error[r] << ',' << row.allowance[r] << ',' << row.discrepancy[r] << ','
                << (row.discrepancy[r] <= 3.0 * row.standard_error[r] ? 1 : 0) << ','
                << (row.discrepancy[r] <= 3.0 * row.standard_error[r] + row.allowance[r] ? 1 : 0) << '\n';
}

}  // namespace rbsde
