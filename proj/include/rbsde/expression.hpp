#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rbsde {

/// Names an expression may use. Variables are 1-based: x1..xm for the state,
/// y1..yd for the value vector, y for the own component, z1..zq for the own
/// row of z. y and z are only available when `allow_yz` is set.
struct ExpressionSymbols {
    std::size_t state_dim = 1;
    std::size_t regimes = 0;
    std::size_t brownian_dim = 0;
    std::size_t own = 0;  // 0-based component the expression belongs to
    bool allow_yz = false;
};

/// Compiled arithmetic over {+, -, *, min, max, constants, variables}.
///
///   expr    := term (('+' | '-') term)*
///   term    := unary ('*' unary)*
///   unary   := '-' unary | primary
///   primary := number | variable | ('min' | 'max') '(' expr (',' expr)+ ')' | '(' expr ')'
class Expression {
public:
    Expression() = default;

    /// Throws ConfigError with the offending position on bad input.
    static Expression parse(std::string_view source, const ExpressionSymbols& symbols);
    static Expression constant(double value);

    /// z is the full d x q matrix, row-major; only row `own` is read.
    double operator()(std::span<const double> x, std::span<const double> y = {},
                      std::span<const double> z = {}) const;

    const std::string& source() const noexcept { return source_; }
    bool is_constant() const noexcept { return !reads_x_ && !reads_y_ && !reads_z_; }
    bool reads_x() const noexcept { return reads_x_; }
    bool reads_y() const noexcept { return reads_y_; }
    bool reads_z() const noexcept { return reads_z_; }
    /// Reads y^j for some j other than the own component.
    bool reads_other_y() const noexcept { return reads_other_y_; }

private:
    enum class Op : unsigned char { push, x, y, z, neg, add, sub, mul, min, max };
    struct Instr {
        Op op;
        std::size_t arg = 0;  // variable index or operand count for min/max
        double value = 0.0;
    };
    struct Term {
        Op var;
        std::size_t arg;
        double coef;
    };
    friend class ExpressionParser;

    /// Rewrites code_ as constant + sum coef * variable when it is affine.
    void fold_affine();

    std::string source_;
    std::vector<Instr> code_;
    bool affine_ = false;
    double affine_const_ = 0.0;
    std::vector<Term> affine_terms_;
    std::size_t own_ = 0;
    std::size_t brownian_dim_ = 0;
    std::size_t max_depth_ = 0;
    bool reads_x_ = false;
    bool reads_y_ = false;
    bool reads_z_ = false;
    bool reads_other_y_ = false;
};

}  // namespace rbsde
