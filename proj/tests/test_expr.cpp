#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "symplex/expr.hpp"

#include <cmath>
#include <random>

using namespace symplex;

namespace {

const std::vector<std::string> kXyt{"x", "y", "t"};

ExprTree P(std::string_view text, std::span<const std::string> vars = kXyt) {
    return parse_expression(text, vars);
}

// Random tree over smooth operators, depth <= max_depth.
void grow(std::mt19937_64& rng, int depth, int max_depth, std::vector<Token>& out) {
    static const std::vector<std::string> binary{"+", "-", "*"};
    static const std::vector<std::string> unary{"sin", "cos", "exp", "square", "neg"};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool leaf = depth >= max_depth || u(rng) < 0.3;
    if (leaf) {
        const int k = static_cast<int>(u(rng) * 4);
        if (k == 3) {
            out.push_back(make_constant());
        } else {
            out.push_back(make_variable(kXyt[static_cast<std::size_t>(k)], k));
        }
        return;
    }
    if (u(rng) < 0.5) {
        out.push_back(make_operator(binary[static_cast<std::size_t>(u(rng) * 3)]));
        grow(rng, depth + 1, max_depth, out);
        grow(rng, depth + 1, max_depth, out);
    } else {
        out.push_back(make_operator(unary[static_cast<std::size_t>(u(rng) * 5)]));
        grow(rng, depth + 1, max_depth, out);
    }
}

ExprTree random_tree(std::mt19937_64& rng, int max_depth) {
    std::vector<Token> toks;
    grow(rng, 1, max_depth, toks);
    auto tree = parse_complete(std::move(toks));
    std::uniform_real_distribution<double> c(-1.5, 1.5);
    for (auto& v : tree.constants) v = c(rng);
    return tree;
}

}  // namespace

TEST_CASE("token arity") {
    CHECK(token_arity(make_operator("+")) == 2);
    CHECK(token_arity(make_operator("sin")) == 1);
    CHECK(token_arity(make_variable("x", 0)) == 0);
    CHECK(make_operator("sin").kind() == TokenKind::Unary);
    CHECK_THROWS_AS(make_operator("tan"), VocabularyError);
}

TEST_CASE("parse_prefix") {
    Vocabulary v({"+", "sin"}, {"x", "y", "t"});
    auto tok = [&](const char* s) { return v[static_cast<std::size_t>(v.index_of(s))]; };

    auto full = parse_prefix({tok("+"), tok("x"), tok("y")});
    REQUIRE(std::holds_alternative<ExprTree>(full));
    CHECK(std::get<ExprTree>(full).depth() == 2);

    auto part = parse_prefix({tok("+"), tok("x")});
    REQUIRE(std::holds_alternative<Incomplete>(part));
    CHECK(std::get<Incomplete>(part).open_slots == 1);

    auto st = parse_prefix({tok("sin"), tok("+"), tok("x"), tok("t")});
    CHECK(std::get<ExprTree>(st).depth() == 3);

    try {
        parse_prefix({tok("x"), tok("y")});
        FAIL("expected overrun");
    } catch (const MalformedSequence& e) {
        CHECK(e.index() == 1);
    }
    CHECK_THROWS_AS(parse_prefix({}), MalformedSequence);
}

TEST_CASE("eval_expr") {
    CHECK(*eval_expr(P("* x x"), {{"x", 3.0}}) == doctest::Approx(9.0));
    CHECK(*eval_expr(P("+ 2.5 x"), {{"x", 1.0}}) == doctest::Approx(3.5));
    const auto heat = P("* * sin x cos y exp * -2 t");
    const double want = std::sin(0.5) * std::cos(0.3) * std::exp(-0.4);
    CHECK(*eval_expr(heat, {{"x", 0.5}, {"y", 0.3}, {"t", 0.2}}) == doctest::Approx(want).epsilon(1e-14));
    CHECK(want == doctest::Approx(0.3070).epsilon(1e-3));

    CHECK_FALSE(eval_expr(P("/ x - x x"), {{"x", 1.0}}).has_value());
    CHECK_FALSE(eval_expr(P("sqrt neg square x"), {{"x", 2.0}}).has_value());
    CHECK_FALSE(eval_expr(P("exp exp exp x"), {{"x", 10.0}}).has_value());
    CHECK_THROWS_AS(eval_expr(P("+ x y"), {{"x", 1.0}}), MissingBinding);
}

TEST_CASE("vectorised evaluation matches scalar evaluation") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const auto tree = random_tree(rng, 5);
        Eigen::MatrixXd pts(8, 3);
        for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = u(rng);
        const auto values = evaluate(tree, pts);
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            auto s = eval_expr(tree, {{"x", pts(i, 0)}, {"y", pts(i, 1)}, {"t", pts(i, 2)}});
            REQUIRE(s.has_value());
            CHECK(values(i) == doctest::Approx(*s).epsilon(1e-13));
        }
    }
}

TEST_CASE("diff") {
    const auto d = diff(P("square x"), "x");
    CHECK(*eval_expr(d, {{"x", 1.7}}) == doctest::Approx(3.4));

    const auto ds = diff(P("sin * x t"), "x");
    for (double x : {0.1, -0.7}) {
        for (double t : {0.3, 1.2}) {
            CHECK(*eval_expr(ds, {{"x", x}, {"t", t}}) == doctest::Approx(t * std::cos(x * t)));
        }
    }
    const auto da = diff(P("abs x"), "x");
    CHECK(*eval_expr(da, {{"x", 2.0}}) == doctest::Approx(1.0));
    CHECK(*eval_expr(da, {{"x", -2.0}}) == doctest::Approx(-1.0));
    CHECK(*eval_expr(da, {{"x", 0.0}}) == 0.0);
    CHECK(*eval_expr(diff(P("relu x"), "x"), {{"x", 0.0}}) == 0.0);

    const auto dxx = diff(diff(P("* x * x x"), "x"), "x");
    CHECK(*eval_expr(dxx, {{"x", 0.5}}) == doctest::Approx(3.0));
}

TEST_CASE("diff agrees with central differences on random smooth trees") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto tree = random_tree(rng, 5);
        const std::string var = kXyt[static_cast<std::size_t>(trial % 3)];
        const auto d = diff(tree, var);
        PointAssignment p{{"x", u(rng)}, {"y", u(rng)}, {"t", u(rng)}};
        auto lo = p;
        auto hi = p;
        lo[var] -= h;
        hi[var] += h;
        const auto a = eval_expr(d, p);
        const auto f_lo = eval_expr(tree, lo);
        const auto f_hi = eval_expr(tree, hi);
        if (!a || !f_lo || !f_hi) continue;
        const double fd = (*f_hi - *f_lo) / (2 * h);
        const double scale = std::max({1.0, std::abs(*a), std::abs(*f_hi)});
        CHECK(std::abs(*a - fd) / scale < 1e-5);
        ++checked;
    }
    CHECK(checked > 150);
}

TEST_CASE("diff_constant") {
    auto tree = P("* 3 square x");
    const auto d = diff_constant(tree, 0);
    CHECK(*eval_expr(d, {{"x", 2.0}}) == doctest::Approx(4.0));
}

TEST_CASE("canonicalize") {
    CHECK(canonicalize(P("+ x y")) == canonicalize(P("+ y x")));
    CHECK(canonicalize(P("- x y")) != canonicalize(P("- y x")));
    const auto c = P("* + y x sin + t x");
    const auto once = canonicalize(c);
    std::vector<Token> toks;
    for (const auto& s : once) toks.push_back(is_operator_symbol(s) ? make_operator(s) : make_variable(s, 0));
    CHECK(canonicalize(parse_complete(toks)) == once);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        auto tree = random_tree(rng, 5);
        auto swapped = tree;
        // swap operands of every commutative node by rebuilding recursively
        std::function<std::vector<Token>(std::size_t&)> rebuild = [&](std::size_t& i) {
            const Token head = tree.prefix[i++];
            std::vector<Token> out{head};
            if (head.arity() == 0) return out;
            auto a = rebuild(i);
            if (head.arity() == 1) {
                out.insert(out.end(), a.begin(), a.end());
                return out;
            }
            auto b = rebuild(i);
            if (head.op == Op::Add || head.op == Op::Mul) std::swap(a, b);
            out.insert(out.end(), a.begin(), a.end());
            out.insert(out.end(), b.begin(), b.end());
            return out;
        };
        std::size_t i = 0;
        swapped.prefix = rebuild(i);
        CHECK(canonicalize(swapped) == canonicalize(tree));
    }
}

TEST_CASE("is_degenerate") {
    CHECK(is_degenerate(P("- x x")));
    CHECK(is_degenerate(P("/ + x y + y x")));
    CHECK(is_degenerate(P("+ const const")));
    CHECK(is_degenerate(P("sin const")));
    CHECK_FALSE(is_degenerate(P("+ x y")));
    CHECK_FALSE(is_degenerate(P("* const x")));
    CHECK_FALSE(is_degenerate(P("const")));
}

TEST_CASE("levenshtein") {
    auto words = [](std::initializer_list<std::string> w) { return std::vector<std::string>(w); };
    CHECK(levenshtein(words({"+", "x", "y"}), words({"+", "x", "x"})) == 1);
    CHECK(levenshtein(words({"+", "x", "y"}), words({"+", "x", "y"})) == 0);
    CHECK(levenshtein(words({"x"}), words({"+", "x", "y"})) == 2);
    CHECK(levenshtein(words({}), words({"a", "b"})) == 2);
}

TEST_CASE("text forms round trip") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto tree = random_tree(rng, 5);
        const auto text = to_prefix_string(tree);
        const auto back = parse_expression(text, kXyt);
        CHECK(to_prefix_string(back) == text);
        CHECK(back.constants == tree.constants);
    }
    CHECK(to_infix_string(P("* sin x cos y")) == "(sin(x) * cos(y))");
}

TEST_CASE("skeleton folds constants") {
    const std::vector<std::string> xyt{"x", "y", "t"};
    const auto burgers_pred = P("+ abs y - + -0.0 abs x * -0.2436 / t 0.2436", xyt);
    const auto burgers = P("+ + abs x abs y t", xyt);
    CHECK(skeleton(burgers_pred) == skeleton(burgers));
    CHECK(skeleton(P("+ x y")) == skeleton(P("+ * 2 y x")));
    CHECK(skeleton(P("* x x")) != skeleton(P("+ * x x y")));
}
