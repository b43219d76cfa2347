#include "symplex/expr.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

namespace symplex {

namespace {

struct OpInfo {
    std::string_view symbol;
    Op op;
};

constexpr std::array<OpInfo, 14> kOperators{{
    {"+", Op::Add},
    {"-", Op::Sub},
    {"*", Op::Mul},
    {"/", Op::Div},
    {"sin", Op::Sin},
    {"cos", Op::Cos},
    {"exp", Op::Exp},
    {"sqrt", Op::Sqrt},
    {"square", Op::Square},
    {"neg", Op::Neg},
    {"abs", Op::Abs},
    {"relu", Op::Relu},
    {"step", Op::Step},
    {"sign", Op::Sign},
}};

constexpr std::string_view kConstantSymbol = "const";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::optional<double> parse_number(std::string_view text) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && text.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
    return value;
}

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) words.push_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

double apply_unary(Op op, double a) {
    switch (op) {
        case Op::Sin: return std::sin(a);
        case Op::Cos: return std::cos(a);
        case Op::Exp: return std::exp(a);
        case Op::Sqrt: return std::sqrt(a);
        case Op::Square: return a * a;
        case Op::Neg: return -a;
        case Op::Abs: return std::abs(a);
        case Op::Relu: return a < 0.0 ? 0.0 : a;
        case Op::Step: return std::isnan(a) ? kNaN : (a > 0.0 ? 1.0 : 0.0);
        case Op::Sign: return std::isnan(a) ? kNaN : (a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0));
        default: break;
    }
    throw UnsupportedOperator("not a unary operator");
}

double apply_binary(Op op, double a, double b) {
    switch (op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div: return std::abs(b) < kDivisionGuard ? kNaN : a / b;
        default: break;
    }
    throw UnsupportedOperator("not a binary operator");
}

Eigen::ArrayXd apply_unary(Op op, const Eigen::ArrayXd& a) {
    switch (op) {
        case Op::Sin: return a.sin();
        case Op::Cos: return a.cos();
        case Op::Exp: return a.exp();
        case Op::Sqrt: return a.sqrt();
        case Op::Square: return a.square();
        case Op::Neg: return -a;
        case Op::Abs: return a.abs();
        case Op::Relu: return (a < 0.0).select(0.0, a);
        case Op::Step:
            return a.isNaN().select(kNaN, (a > 0.0).cast<double>());
        case Op::Sign:
            return a.isNaN().select(kNaN, (a > 0.0).cast<double>() - (a < 0.0).cast<double>());
        default: break;
    }
    throw UnsupportedOperator("not a unary operator");
}

Eigen::ArrayXd apply_binary(Op op, const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    switch (op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div: return (b.abs() < kDivisionGuard).select(kNaN, a / b);
        default: break;
    }
    throw UnsupportedOperator("not a binary operator");
}

}  // namespace

int op_arity(Op op) noexcept {
    switch (op) {
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div: return 2;
        case Op::Variable:
        case Op::Constant:
        case Op::Literal: return 0;
        default: return 1;
    }
}

TokenKind Token::kind() const noexcept {
    switch (arity()) {
        case 2: return TokenKind::Binary;
        case 1: return TokenKind::Unary;
        default: return TokenKind::Terminal;
    }
}

int token_arity(const Token& token) noexcept { return token.arity(); }

bool is_operator_symbol(std::string_view symbol) {
    return std::any_of(kOperators.begin(), kOperators.end(),
                       [&](const OpInfo& info) { return info.symbol == symbol; });
}

Token make_operator(std::string_view symbol) {
    for (const auto& info : kOperators) {
        if (info.symbol == symbol) return Token{std::string(symbol), info.op, -1, 0.0};
    }
    throw VocabularyError("unknown operator '" + std::string(symbol) + "'");
}

Token make_variable(std::string name, int index) {
    return Token{std::move(name), Op::Variable, index, 0.0};
}

Token make_constant(int slot) { return Token{std::string(kConstantSymbol), Op::Constant, slot, 0.0}; }

Token make_literal(double value) { return Token{format_number(value), Op::Literal, -1, value}; }

std::string format_number(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) return "nan";
    return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> operators, std::vector<std::string> variables,
                       bool with_constant)
    : variables_(std::move(variables)) {
    std::set<std::string, std::less<>> seen;
    auto claim = [&](const std::string& symbol) {
        if (!seen.insert(symbol).second) {
            throw VocabularyError("duplicate vocabulary symbol '" + symbol + "'");
        }
    };
    for (const auto& symbol : operators) {
        claim(symbol);
        tokens_.push_back(make_operator(symbol));
    }
    for (std::size_t i = 0; i < variables_.size(); ++i) {
        const auto& name = variables_[i];
        if (name.empty() || is_operator_symbol(name) || name == kConstantSymbol ||
            parse_number(name)) {
            throw VocabularyError("invalid variable name '" + name + "'");
        }
        claim(name);
        tokens_.push_back(make_variable(name, static_cast<int>(i)));
    }
    if (with_constant) {
        claim(std::string(kConstantSymbol));
        constant_index_ = static_cast<int>(tokens_.size());
        tokens_.push_back(make_constant());
    }
    if (std::none_of(tokens_.begin(), tokens_.end(), [](const Token& t) { return t.is_terminal(); })) {
        throw VocabularyError("vocabulary needs at least one terminal");
    }
}

std::optional<int> Vocabulary::find(std::string_view symbol) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].symbol == symbol) return static_cast<int>(i);
    }
    return std::nullopt;
}

int Vocabulary::index_of(std::string_view symbol) const {
    if (auto i = find(symbol)) return *i;
    throw VocabularyError("symbol '" + std::string(symbol) + "' is not in the vocabulary");
}

std::vector<bool> Vocabulary::view(std::span<const std::string> variables) const {
    std::vector<bool> mask(tokens_.size(), false);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.op != Op::Variable) {
            mask[i] = true;
        } else {
            mask[i] = std::find(variables.begin(), variables.end(), t.symbol) != variables.end();
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------

int ExprTree::depth() const {
    int best = 0;
    std::vector<int> pending{1};
    for (const auto& tok : prefix) {
        if (pending.empty()) break;
        const int d = pending.back();
        pending.pop_back();
        best = std::max(best, d);
        for (int k = 0; k < tok.arity(); ++k) pending.push_back(d + 1);
    }
    return best;
}

int ExprTree::constant_count() const {
    return static_cast<int>(std::count_if(prefix.begin(), prefix.end(),
                                          [](const Token& t) { return t.op == Op::Constant; }));
}

ParseResult parse_prefix(std::vector<Token> tokens, std::vector<double> constants) {
    if (tokens.empty()) throw MalformedSequence("empty token sequence", -1);
    int budget = 1;
    int slot = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (budget == 0) {
            throw MalformedSequence("token '" + tokens[i].symbol + "' at index " + std::to_string(i) +
                                        " follows a complete expression",
                                    static_cast<int>(i));
        }
        budget += tokens[i].arity() - 1;
        if (tokens[i].op == Op::Constant) tokens[i].index = slot++;
    }
    if (budget > 0) return Incomplete{budget};
    if (constants.empty()) {
        constants.assign(static_cast<std::size_t>(slot), 1.0);
    } else if (static_cast<int>(constants.size()) != slot) {
        throw MalformedSequence("expected " + std::to_string(slot) + " constants, got " +
                                    std::to_string(constants.size()),
                                -1);
    }
    return ExprTree{std::move(tokens), std::move(constants)};
}

ExprTree parse_complete(std::vector<Token> tokens, std::vector<double> constants) {
    const auto n = static_cast<int>(tokens.size());
    auto result = parse_prefix(std::move(tokens), std::move(constants));
    if (auto* open = std::get_if<Incomplete>(&result)) {
        throw MalformedSequence("incomplete expression: " + std::to_string(open->open_slots) +
                                    " open slot(s) after token " + std::to_string(n - 1),
                                n);
    }
    return std::get<ExprTree>(std::move(result));
}

std::size_t subtree_end(std::span<const Token> prefix, std::size_t begin) {
    int need = 1;
    std::size_t i = begin;
    while (need > 0) {
        if (i >= prefix.size()) throw MalformedSequence("subtree runs past the sequence", static_cast<int>(i));
        need += prefix[i].arity() - 1;
        ++i;
    }
    return i;
}

// ---------------------------------------------------------------------------

namespace {

ExprTree parse_words(std::string_view text, std::vector<std::string>& symbols, bool open,
                     NumberMode mode) {
    const auto words = split_words(text);
    std::vector<Token> tokens;
    std::vector<double> constants;
    tokens.reserve(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto w = words[i];
        if (is_operator_symbol(w)) {
            tokens.push_back(make_operator(w));
        } else if (auto number = parse_number(w)) {
            if (mode == NumberMode::Constant) {
                tokens.push_back(make_constant());
                constants.push_back(*number);
            } else {
                tokens.push_back(make_literal(*number));
            }
        } else if (w == kConstantSymbol) {
            tokens.push_back(make_constant());
            constants.push_back(1.0);
        } else {
            auto it = std::find(symbols.begin(), symbols.end(), w);
            if (it == symbols.end()) {
                if (!open) {
                    throw MalformedSequence("unknown symbol '" + std::string(w) + "' at token index " +
                                                std::to_string(i),
                                            static_cast<int>(i));
                }
                symbols.emplace_back(w);
                it = symbols.end() - 1;
            }
            tokens.push_back(make_variable(std::string(w), static_cast<int>(it - symbols.begin())));
        }
    }
    return parse_complete(std::move(tokens), std::move(constants));
}

}  // namespace

ExprTree parse_expression(std::string_view text, std::span<const std::string> variables,
                          NumberMode mode) {
    std::vector<std::string> symbols(variables.begin(), variables.end());
    return parse_words(text, symbols, false, mode);
}

ExprTree parse_template(std::string_view text, std::vector<std::string>& symbols) {
    return parse_words(text, symbols, true, NumberMode::Literal);
}

std::string to_prefix_string(const ExprTree& tree) {
    std::string out;
    for (const auto& tok : tree.prefix) {
        if (!out.empty()) out += ' ';
        if (tok.op == Op::Constant) {
            out += format_number(tree.constants.at(static_cast<std::size_t>(tok.index)));
        } else {
            out += tok.symbol;
        }
    }
    return out;
}

namespace {

std::string infix_at(const ExprTree& tree, std::size_t& i) {
    const Token& tok = tree.prefix[i++];
    switch (tok.arity()) {
        case 0:
            if (tok.op == Op::Constant) return format_number(tree.constants.at(static_cast<std::size_t>(tok.index)));
            return tok.symbol;
        case 1: {
            std::string a = infix_at(tree, i);
            if (tok.op == Op::Neg) return "(-" + a + ")";
            if (tok.op == Op::Square) return "(" + a + ")^2";
            return tok.symbol + "(" + a + ")";
        }
        default: {
            std::string a = infix_at(tree, i);
            std::string b = infix_at(tree, i);
            return "(" + a + " " + tok.symbol + " " + b + ")";
        }
    }
}

}  // namespace

std::string to_infix_string(const ExprTree& tree) {
    std::size_t i = 0;
    return infix_at(tree, i);
}

// ---------------------------------------------------------------------------

std::optional<double> eval_expr(const ExprTree& tree, const PointAssignment& point) {
    std::vector<double> stack;
    stack.reserve(tree.prefix.size());
    for (auto it = tree.prefix.rbegin(); it != tree.prefix.rend(); ++it) {
        const Token& tok = *it;
        switch (tok.arity()) {
            case 0: {
                if (tok.op == Op::Variable) {
                    auto found = point.find(tok.symbol);
                    if (found == point.end()) throw MissingBinding("no value bound for '" + tok.symbol + "'");
                    stack.push_back(found->second);
                } else if (tok.op == Op::Constant) {
                    stack.push_back(tree.constants.at(static_cast<std::size_t>(tok.index)));
                } else {
                    stack.push_back(tok.value);
                }
                break;
            }
            case 1: stack.back() = apply_unary(tok.op, stack.back()); break;
            default: {
                const double a = stack.back();
                stack.pop_back();
                stack.back() = apply_binary(tok.op, a, stack.back());
                break;
            }
        }
    }
    const double v = stack.back();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

Eigen::ArrayXd evaluate(const ExprTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& points) {
    return evaluate(tree, points, tree.constants);
}

Eigen::ArrayXd evaluate(const ExprTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& points,
                        std::span<const double> constants) {
    const Eigen::Index n = points.rows();
    std::vector<Eigen::ArrayXd> stack;
    stack.reserve(tree.prefix.size());
    for (auto it = tree.prefix.rbegin(); it != tree.prefix.rend(); ++it) {
        const Token& tok = *it;
        switch (tok.arity()) {
            case 0:
                if (tok.op == Op::Variable) {
                    if (tok.index < 0 || tok.index >= points.cols()) {
                        throw MissingBinding("no column bound for '" + tok.symbol + "'");
                    }
                    stack.emplace_back(points.col(tok.index).array());
                } else if (tok.op == Op::Constant) {
                    if (tok.index < 0 || static_cast<std::size_t>(tok.index) >= constants.size()) {
                        throw MissingBinding("constant slot out of range");
                    }
                    stack.emplace_back(Eigen::ArrayXd::Constant(n, constants[static_cast<std::size_t>(tok.index)]));
                } else {
                    stack.emplace_back(Eigen::ArrayXd::Constant(n, tok.value));
                }
                break;
            case 1: stack.back() = apply_unary(tok.op, stack.back()); break;
            default: {
                Eigen::ArrayXd a = std::move(stack.back());
                stack.pop_back();
                stack.back() = apply_binary(tok.op, a, stack.back());
                break;
            }
        }
    }
    Eigen::ArrayXd out = std::move(stack.back());
    return out.isFinite().select(out, kNaN);
}

ExprTree rebind(const ExprTree& tree, std::span<const std::string> names) {
    ExprTree out = tree;
    for (auto& tok : out.prefix) {
        if (tok.op != Op::Variable) continue;
        auto it = std::find(names.begin(), names.end(), tok.symbol);
        if (it == names.end()) throw MissingBinding("variable '" + tok.symbol + "' is not bound");
        tok.index = static_cast<int>(it - names.begin());
    }
    return out;
}

std::vector<std::string> free_variables(const ExprTree& tree) {
    std::set<std::string> names;
    for (const auto& tok : tree.prefix) {
        if (tok.op == Op::Variable) names.insert(tok.symbol);
    }
    return {names.begin(), names.end()};
}

// ---------------------------------------------------------------------------
// Differentiation on prefix sequences. The helpers fold literal 0/1 so that
// repeated derivatives stay small.

namespace {

using Seq = std::vector<Token>;

bool is_literal(const Seq& s) { return s.size() == 1 && s[0].op == Op::Literal; }
bool is_literal(const Seq& s, double v) { return is_literal(s) && s[0].value == v; }

Seq lit(double v) { return Seq{make_literal(v)}; }

Seq join(Token head, const Seq& a) {
    Seq out;
    out.reserve(a.size() + 1);
    out.push_back(std::move(head));
    out.insert(out.end(), a.begin(), a.end());
    return out;
}

Seq join(Token head, const Seq& a, const Seq& b) {
    Seq out;
    out.reserve(a.size() + b.size() + 1);
    out.push_back(std::move(head));
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

Seq neg(const Seq& a) {
    if (is_literal(a)) return lit(-a[0].value);
    if (a[0].op == Op::Neg) return Seq(a.begin() + 1, a.end());
    return join(make_operator("neg"), a);
}

Seq add(const Seq& a, const Seq& b) {
    if (is_literal(a, 0.0)) return b;
    if (is_literal(b, 0.0)) return a;
    if (is_literal(a) && is_literal(b)) return lit(a[0].value + b[0].value);
    return join(make_operator("+"), a, b);
}

Seq sub(const Seq& a, const Seq& b) {
    if (is_literal(b, 0.0)) return a;
    if (is_literal(a, 0.0)) return neg(b);
    if (is_literal(a) && is_literal(b)) return lit(a[0].value - b[0].value);
    return join(make_operator("-"), a, b);
}

Seq mul(const Seq& a, const Seq& b) {
    if (is_literal(a, 0.0) || is_literal(b, 0.0)) return lit(0.0);
    if (is_literal(a, 1.0)) return b;
    if (is_literal(b, 1.0)) return a;
    if (is_literal(a) && is_literal(b)) return lit(a[0].value * b[0].value);
    if (is_literal(a, -1.0)) return neg(b);
    if (is_literal(b, -1.0)) return neg(a);
    // c * (d * x) -> (c*d) * x
    if (is_literal(a) && b.size() > 2 && b[0].op == Op::Mul && b[1].op == Op::Literal) {
        return mul(lit(a[0].value * b[1].value), Seq(b.begin() + 2, b.end()));
    }
    if (is_literal(b) && !is_literal(a)) return mul(b, a);
    return join(make_operator("*"), a, b);
}

Seq div(const Seq& a, const Seq& b) {
    if (is_literal(a, 0.0)) return lit(0.0);
    if (is_literal(b, 1.0)) return a;
    if (is_literal(a) && is_literal(b) && std::abs(b[0].value) >= kDivisionGuard) {
        return lit(a[0].value / b[0].value);
    }
    return join(make_operator("/"), a, b);
}

Seq unary(std::string_view symbol, const Seq& a) { return join(make_operator(symbol), a); }

template <typename IsTarget>
class Differentiator {
public:
    Differentiator(std::span<const Token> prefix, IsTarget is_target)
        : p_(prefix), is_target_(std::move(is_target)) {}

    Seq d(std::size_t i) const {
        const Token& tok = p_[i];
        switch (tok.op) {
            case Op::Variable:
            case Op::Constant: return lit(is_target_(tok) ? 1.0 : 0.0);
            case Op::Literal: return lit(0.0);
            default: break;
        }
        if (tok.arity() == 1) {
            const Seq a = sub_at(i + 1);
            const Seq da = d(i + 1);
            if (is_literal(da, 0.0)) return lit(0.0);
            switch (tok.op) {
                case Op::Sin: return mul(unary("cos", a), da);
                case Op::Cos: return mul(neg(unary("sin", a)), da);
                case Op::Exp: return mul(unary("exp", a), da);
                case Op::Sqrt: return div(da, mul(lit(2.0), unary("sqrt", a)));
                case Op::Square: return mul(mul(lit(2.0), a), da);
                case Op::Neg: return neg(da);
                case Op::Abs: return mul(unary("sign", a), da);
                case Op::Relu: return mul(unary("step", a), da);
                case Op::Step:
                case Op::Sign: return lit(0.0);
                default: throw UnsupportedOperator("no derivative rule for '" + tok.symbol + "'");
            }
        }
        const std::size_t j = subtree_end(p_, i + 1);
        const Seq a = sub_range(i + 1, j);
        const Seq b = sub_at(j);
        const Seq da = d(i + 1);
        const Seq db = d(j);
        switch (tok.op) {
            case Op::Add: return add(da, db);
            case Op::Sub: return sub(da, db);
            case Op::Mul: return add(mul(da, b), mul(a, db));
            case Op::Div:
                if (is_literal(db, 0.0)) return div(da, b);
                return div(sub(mul(da, b), mul(a, db)), unary("square", b));
            default: throw UnsupportedOperator("no derivative rule for '" + tok.symbol + "'");
        }
    }

private:
    Seq sub_at(std::size_t i) const { return sub_range(i, subtree_end(p_, i)); }
    Seq sub_range(std::size_t i, std::size_t j) const {
        return Seq(p_.begin() + static_cast<std::ptrdiff_t>(i), p_.begin() + static_cast<std::ptrdiff_t>(j));
    }

    std::span<const Token> p_;
    IsTarget is_target_;
};

template <typename IsTarget>
ExprTree differentiate(const ExprTree& tree, IsTarget is_target) {
    if (tree.prefix.empty()) throw MalformedSequence("empty expression", -1);
    Differentiator<IsTarget> differ(tree.prefix, std::move(is_target));
    return ExprTree{differ.d(0), tree.constants};
}

}  // namespace

ExprTree diff(const ExprTree& tree, std::string_view variable) {
    return differentiate(tree, [variable](const Token& t) {
        return t.op == Op::Variable && t.symbol == variable;
    });
}

ExprTree diff_constant(const ExprTree& tree, int slot) {
    return differentiate(tree, [slot](const Token& t) { return t.op == Op::Constant && t.index == slot; });
}

// ---------------------------------------------------------------------------

namespace {

using Words = std::vector<std::string>;

std::string joined(const Words& w) {
    std::string out;
    for (const auto& s : w) {
        if (!out.empty()) out += ' ';
        out += s;
    }
    return out;
}

struct CanonicalWalk {
    std::span<const Token> p;
    bool degenerate = false;

    struct Result {
        Words words;
        bool has_variable = false;
    };

    Result at(std::size_t& i) {
        const Token& tok = p[i++];
        Result r;
        switch (tok.arity()) {
            case 0:
                r.words.push_back(tok.op == Op::Constant ? std::string(kConstantSymbol) : tok.symbol);
                r.has_variable = tok.op == Op::Variable;
                return r;
            case 1: {
                Result a = at(i);
                r.words.push_back(tok.symbol);
                r.words.insert(r.words.end(), a.words.begin(), a.words.end());
                r.has_variable = a.has_variable;
                break;
            }
            default: {
                Result a = at(i);
                Result b = at(i);
                if ((tok.op == Op::Sub || tok.op == Op::Div) && a.words == b.words) degenerate = true;
                if ((tok.op == Op::Add || tok.op == Op::Mul) && joined(b.words) < joined(a.words)) {
                    std::swap(a, b);
                }
                r.words.push_back(tok.symbol);
                r.words.insert(r.words.end(), a.words.begin(), a.words.end());
                r.words.insert(r.words.end(), b.words.begin(), b.words.end());
                r.has_variable = a.has_variable || b.has_variable;
                break;
            }
        }
        if (!r.has_variable) degenerate = true;
        return r;
    }
};

}  // namespace

std::vector<std::string> canonicalize(const ExprTree& tree) {
    CanonicalWalk walk{tree.prefix};
    std::size_t i = 0;
    return walk.at(i).words;
}

std::string canonical_string(const ExprTree& tree) { return joined(canonicalize(tree)); }

bool is_degenerate(const ExprTree& tree) {
    CanonicalWalk walk{tree.prefix};
    std::size_t i = 0;
    walk.at(i);
    return walk.degenerate;
}

int levenshtein(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<int> prev(b.size() + 1);
    std::vector<int> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const int substitute = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, substitute});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

int levenshtein(std::span<const Token> a, std::span<const Token> b) {
    Words wa;
    Words wb;
    for (const auto& t : a) wa.push_back(t.symbol);
    for (const auto& t : b) wb.push_back(t.symbol);
    return levenshtein(wa, wb);
}

}  // namespace symplex
