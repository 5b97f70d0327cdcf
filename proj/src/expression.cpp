#include "rbsde/expression.hpp"

#include "rbsde/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace rbsde {

namespace {
constexpr std::size_t kMaxStack = 64;
}

class ExpressionParser {
public:
    ExpressionParser(std::string_view src, const ExpressionSymbols& sym) : src_(src), sym_(sym) {}

    Expression run() {
        out_.source_ = std::string(src_);
        out_.own_ = sym_.own;
        out_.brownian_dim_ = sym_.brownian_dim;
        skip();
        if (pos_ == src_.size()) fail("empty expression");
        expr();
        skip();
        if (pos_ != src_.size()) fail("unexpected '" + std::string(1, src_[pos_]) + "'");
        out_.fold_affine();
        return std::move(out_);
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("expression \"" + std::string(src_) + "\" at column " + std::to_string(pos_ + 1) +
                          ": " + what);
    }

    void skip() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    void emit(Expression::Op op, std::size_t arg = 0, double value = 0.0) {
        out_.code_.push_back({op, arg, value});
        switch (op) {
            case Expression::Op::push:
            case Expression::Op::x:
            case Expression::Op::y:
            case Expression::Op::z:
                ++depth_;
                break;
            case Expression::Op::neg:
                break;
            case Expression::Op::min:
            case Expression::Op::max:
                depth_ -= arg - 1;
                break;
            default:
                --depth_;
        }
        out_.max_depth_ = std::max(out_.max_depth_, depth_);
        if (out_.max_depth_ > kMaxStack) fail("expression nests too deeply");
    }

    void expr() {
        term();
        for (;;) {
            if (accept('+')) {
                term();
                emit(Expression::Op::add);
            } else if (accept('-')) {
                term();
                emit(Expression::Op::sub);
            } else {
                return;
            }
        }
    }

    void term() {
        unary();
        while (accept('*')) {
            unary();
            emit(Expression::Op::mul);
        }
    }

    void unary() {
        if (accept('-')) {
            unary();
            emit(Expression::Op::neg);
            return;
        }
        primary();
    }

    void primary() {
        skip();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            expr();
            expect(')');
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            number();
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            identifier();
            return;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    void number() {
        double v = 0.0;
        const char* first = src_.data() + pos_;
        const auto [ptr, ec] = std::from_chars(first, src_.data() + src_.size(), v);
        if (ec != std::errc()) fail("malformed number");
        pos_ += static_cast<std::size_t>(ptr - first);
        emit(Expression::Op::push, 0, v);
    }

    void identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && std::isalpha(static_cast<unsigned char>(src_[pos_]))) ++pos_;
        const std::string name(src_.substr(start, pos_ - start));
        if (name == "min" || name == "max") {
            expect('(');
            std::size_t count = 0;
            do {
                expr();
                ++count;
            } while (accept(','));
            expect(')');
            if (count < 2) fail(name + " needs at least two arguments");
            emit(name == "min" ? Expression::Op::min : Expression::Op::max, count);
            return;
        }
        std::size_t index = 0;
        bool has_index = false;
        const std::size_t digits = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
            index = index * 10 + static_cast<std::size_t>(src_[pos_] - '0');
            ++pos_;
            has_index = true;
        }
        if (has_index && index == 0) {
            pos_ = digits;
            fail("variable indices start at 1");
        }
        if (name == "x") {
            if (!has_index) fail("state variables are written x1..x" + std::to_string(sym_.state_dim));
            if (index > sym_.state_dim) fail("x" + std::to_string(index) + " exceeds state dimension " +
                                             std::to_string(sym_.state_dim));
            out_.reads_x_ = true;
            emit(Expression::Op::x, index - 1);
        } else if (name == "y") {
            if (!sym_.allow_yz) fail("y is only available in driver expressions");
            const std::size_t j = has_index ? index - 1 : sym_.own;
            if (j >= sym_.regimes) fail("y" + std::to_string(index) + " exceeds regime count " +
                                        std::to_string(sym_.regimes));
            out_.reads_y_ = true;
            if (j != sym_.own) out_.reads_other_y_ = true;
            emit(Expression::Op::y, j);
        } else if (name == "z") {
            if (!sym_.allow_yz) fail("z is only available in driver expressions");
            if (!has_index) fail("z variables are written z1..z" + std::to_string(sym_.brownian_dim));
            if (index > sym_.brownian_dim) fail("z" + std::to_string(index) + " exceeds Brownian dimension " +
                                                std::to_string(sym_.brownian_dim));
            out_.reads_z_ = true;
            emit(Expression::Op::z, index - 1);
        } else {
            pos_ = start;
            fail("unknown name '" + name + "'");
        }
    }

    std::string_view src_;
    const ExpressionSymbols& sym_;
    std::size_t pos_ = 0;
    std::size_t depth_ = 0;
    Expression out_;
};

Expression Expression::parse(std::string_view source, const ExpressionSymbols& symbols) {
    return ExpressionParser(source, symbols).run();
}

Expression Expression::constant(double value) {
    Expression e;
    e.source_ = std::to_string(value);
    e.code_.push_back({Op::push, 0, value});
    e.max_depth_ = 1;
    e.fold_affine();
    return e;
}

void Expression::fold_affine() {
    struct Form {
        double c = 0.0;
        std::vector<Term> terms;
    };
    auto add_into = [](Form& into, const Form& from, double sign) {
        into.c += sign * from.c;
        for (const Term& t : from.terms) {
            auto it = std::find_if(into.terms.begin(), into.terms.end(),
                                   [&](const Term& u) { return u.var == t.var && u.arg == t.arg; });
            if (it == into.terms.end())
                into.terms.push_back({t.var, t.arg, sign * t.coef});
            else
                it->coef += sign * t.coef;
        }
    };
    std::vector<Form> stack;
    for (const Instr& in : code_) {
        switch (in.op) {
            case Op::push:
                stack.push_back({in.value, {}});
                break;
            case Op::x:
            case Op::y:
            case Op::z:
                stack.push_back({0.0, {{in.op, in.arg, 1.0}}});
                break;
            case Op::neg:
                stack.back().c = -stack.back().c;
                for (Term& t : stack.back().terms) t.coef = -t.coef;
                break;
            case Op::add:
            case Op::sub: {
                Form rhs = std::move(stack.back());
                stack.pop_back();
                add_into(stack.back(), rhs, in.op == Op::add ? 1.0 : -1.0);
                break;
            }
            case Op::mul: {
                Form rhs = std::move(stack.back());
                stack.pop_back();
                Form& lhs = stack.back();
                if (!rhs.terms.empty() && !lhs.terms.empty()) return;
                if (lhs.terms.empty()) std::swap(lhs, rhs);
                lhs.c *= rhs.c;
                for (Term& t : lhs.terms) t.coef *= rhs.c;
                break;
            }
            case Op::min:
            case Op::max: {
                const std::size_t base = stack.size() - in.arg;
                for (std::size_t k = base; k < stack.size(); ++k)
                    if (!stack[k].terms.empty()) return;
                double v = stack[base].c;
                for (std::size_t k = base + 1; k < stack.size(); ++k)
                    v = in.op == Op::min ? std::min(v, stack[k].c) : std::max(v, stack[k].c);
                stack.resize(base);
                stack.push_back({v, {}});
                break;
            }
        }
    }
    affine_ = true;
    affine_const_ = stack.back().c;
    affine_terms_.clear();
    for (const Term& t : stack.back().terms)
        if (t.coef != 0.0) affine_terms_.push_back(t);
}

double Expression::operator()(std::span<const double> x, std::span<const double> y,
                              std::span<const double> z) const {
    if (affine_) {
        double v = affine_const_;
        for (const Term& t : affine_terms_) {
            const double u = t.var == Op::x ? x[t.arg] : t.var == Op::y ? y[t.arg] : z[own_ * brownian_dim_ + t.arg];
            v += t.coef * u;
        }
        return v;
    }
    std::array<double, kMaxStack> stack;
    std::size_t top = 0;
    for (const Instr& in : code_) {
        switch (in.op) {
            case Op::push:
                stack[top++] = in.value;
                break;
            case Op::x:
                stack[top++] = x[in.arg];
                break;
            case Op::y:
                stack[top++] = y[in.arg];
                break;
            case Op::z:
                stack[top++] = z[own_ * brownian_dim_ + in.arg];
                break;
            case Op::neg:
                stack[top - 1] = -stack[top - 1];
                break;
            case Op::add:
                --top;
                stack[top - 1] += stack[top];
                break;
            case Op::sub:
                --top;
                stack[top - 1] -= stack[top];
                break;
            case Op::mul:
                --top;
                stack[top - 1] *= stack[top];
                break;
            case Op::min:
            case Op::max: {
                const std::size_t base = top - in.arg;
                double v = stack[base];
                for (std::size_t k = base + 1; k < top; ++k)
                    v = in.op == Op::min ? std::min(v, stack[k]) : std::max(v, stack[k]);
                top = base;
                stack[top++] = v;
                break;
            }
        }
    }
    return stack[0];
}

}  // namespace rbsde
