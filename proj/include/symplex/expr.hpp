#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace symplex {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A token sequence that cannot be a prefix traversal. `index` names the
/// offending token (or -1 when the problem is the sequence as a whole).
class MalformedSequence : public Error {
public:
    MalformedSequence(const std::string& what, int index) : Error(what), index_(index) {}
    int index() const noexcept { return index_; }

private:
    int index_;
};

class MissingBinding : public Error {
public:
    using Error::Error;
};

class UnsupportedOperator : public Error {
public:
    using Error::Error;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Square,
    Neg,
    Abs,
    Relu,
    Step,  // internal: derivative of relu, step(0) = 0
    Sign,  // internal: derivative of abs, sign(0) = 0
    Variable,
    Constant,  // trainable placeholder, value lives in ExprTree::constants
    Literal,   // fixed number (templates, derivative coefficients)
};

enum class TokenKind : std::uint8_t { Binary, Unary, Terminal };

int op_arity(Op op) noexcept;

struct Token {
    std::string symbol;
    Op op = Op::Literal;
    int index = -1;  // variable column, or constant slot
    double value = 0.0;

    int arity() const noexcept { return op_arity(op); }
    TokenKind kind() const noexcept;
    bool is_terminal() const noexcept { return arity() == 0; }

    bool operator==(const Token&) const = default;
};

int token_arity(const Token& token) noexcept;

/// Operator token from its symbol ("+", "sin", ...). Throws VocabularyError.
Token make_operator(std::string_view symbol);
Token make_variable(std::string name, int index);
Token make_constant(int slot = -1);
Token make_literal(double value);

/// True for symbols make_operator accepts (including the internal step/sign).
bool is_operator_symbol(std::string_view symbol);

/// Ordered token set. Indices are stable; curriculum stages select subsets
/// through masks over the same index space.
class Vocabulary {
public:
    Vocabulary(std::vector<std::string> operators, std::vector<std::string> variables,
               bool with_constant = true);

    const std::vector<Token>& tokens() const noexcept { return tokens_; }
    std::size_t size() const noexcept { return tokens_.size(); }
    const Token& operator[](std::size_t i) const { return tokens_[i]; }

    const std::vector<std::string>& variables() const noexcept { return variables_; }
    std::optional<int> find(std::string_view symbol) const;
    int index_of(std::string_view symbol) const;
    int constant_index() const noexcept { return constant_index_; }

    /// Mask of tokens usable when only `variables` (plus the constant and all
    /// operators) are active.
    std::vector<bool> view(std::span<const std::string> variables) const;
    std::vector<bool> full_view() const { return std::vector<bool>(tokens_.size(), true); }

private:
    std::vector<Token> tokens_;
    std::vector<std::string> variables_;
    int constant_index_ = -1;
};

// ---------------------------------------------------------------------------
// Expression trees
// ---------------------------------------------------------------------------

/// A complete expression in prefix order. Constant tokens refer to
/// `constants` through their slot index; trees produced by parse_prefix use
/// slots 0..k-1 in prefix order, derived trees (diff) may repeat slots.
struct ExprTree {
    std::vector<Token> prefix;
    std::vector<double> constants;

    int depth() const;
    int size() const noexcept { return static_cast<int>(prefix.size()); }
    int constant_count() const;
};

struct Incomplete {
    int open_slots = 0;
};

using ParseResult = std::variant<ExprTree, Incomplete>;

/// Rebuilds a tree from arities. Constant tokens get slots in prefix order and
/// value 1.0 unless `constants` supplies them. Throws MalformedSequence on
/// overrun or on an empty sequence.
ParseResult parse_prefix(std::vector<Token> tokens, std::vector<double> constants = {});

/// parse_prefix that insists on a complete tree.
ExprTree parse_complete(std::vector<Token> tokens, std::vector<double> constants = {});

/// Index one past the end of the subtree rooted at `begin`.
std::size_t subtree_end(std::span<const Token> prefix, std::size_t begin);

// ---------------------------------------------------------------------------
// Text forms
// ---------------------------------------------------------------------------

enum class NumberMode : std::uint8_t {
    Constant,  // numbers become trainable placeholders carrying that value
    Literal,   // numbers are fixed
};

/// Parses a whitespace-separated prefix string. Identifiers must be in
/// `variables`; their column is the position in that list.
ExprTree parse_expression(std::string_view text, std::span<const std::string> variables,
                          NumberMode mode = NumberMode::Constant);

/// As parse_expression but unknown identifiers are appended to `symbols`.
ExprTree parse_template(std::string_view text, std::vector<std::string>& symbols);

/// Space separated prefix tokens, constants inlined as round-trip decimals.
std::string to_prefix_string(const ExprTree& tree);

/// Parenthesised infix rendering, e.g. (sin(x) * exp((-2 * t))).
std::string to_infix_string(const ExprTree& tree);

std::string format_number(double value);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

using PointAssignment = std::map<std::string, double, std::less<>>;

/// Divisors with magnitude below this produce the non-finite marker.
inline constexpr double kDivisionGuard = 1e-12;

/// Scalar evaluation. nullopt is the non-finite marker; unbound variables
/// throw MissingBinding.
std::optional<double> eval_expr(const ExprTree& tree, const PointAssignment& point);

/// Evaluates at every row of `points` (one column per variable index). Rows
/// with a non-finite result hold NaN.
Eigen::ArrayXd evaluate(const ExprTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& points);
Eigen::ArrayXd evaluate(const ExprTree& tree, const Eigen::Ref<const Eigen::MatrixXd>& points,
                        std::span<const double> constants);

/// Renumbers variable tokens to positions in `names`; throws MissingBinding
/// for a variable that is not listed.
ExprTree rebind(const ExprTree& tree, std::span<const std::string> names);

/// Sorted, de-duplicated variable symbols the tree reads.
std::vector<std::string> free_variables(const ExprTree& tree);

// ---------------------------------------------------------------------------
// Symbolic calculus
// ---------------------------------------------------------------------------

/// Exact derivative with respect to a variable symbol.
/// Kinks: abs'(0) = 0, relu'(0) = 0.
ExprTree diff(const ExprTree& tree, std::string_view variable);

/// Derivative with respect to the constant in `slot`.
ExprTree diff_constant(const ExprTree& tree, int slot);

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

/// Prefix tokens with the operands of + and * ordered by their rendered
/// canonical strings. Constants render as "const".
std::vector<std::string> canonicalize(const ExprTree& tree);
std::string canonical_string(const ExprTree& tree);

/// x-x, x/x (identical canonical operands) or an operator subtree that reads
/// no variable.
bool is_degenerate(const ExprTree& tree);

int levenshtein(std::span<const std::string> a, std::span<const std::string> b);
int levenshtein(std::span<const Token> a, std::span<const Token> b);

/// Skeleton under light algebraic normalisation: sums and products are
/// flattened and expanded, numeric subexpressions are folded, coefficients
/// within 1e-6 of an integer are snapped and every remaining coefficient is
/// rendered as the wildcard "c".
std::string skeleton(const ExprTree& tree);

}  // namespace symplex
