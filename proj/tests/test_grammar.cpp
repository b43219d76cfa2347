#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "symplex/grammar.hpp"

#include <random>

using namespace symplex;

namespace {

const Vocabulary kVocab({"+", "-", "*", "/", "sin", "exp"}, {"x", "y"});

std::vector<Token> toks(std::initializer_list<const char*> symbols) {
    std::vector<Token> out;
    for (const char* s : symbols) out.push_back(kVocab[static_cast<std::size_t>(kVocab.index_of(s))]);
    return out;
}

std::vector<std::string> symbols_of(const std::vector<bool>& mask) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.push_back(kVocab[i].symbol);
    }
    return out;
}

}  // namespace

TEST_CASE("build_partial_ast") {
    auto a = build_partial_ast(toks({"+", "x"}));
    CHECK(a.parent() == std::vector<int>{-1, 0});
    REQUIRE(a.open_slots().size() == 1);
    CHECK(a.open_slots()[0] == OpenSlot{0, 1, 2});

    auto s = build_partial_ast(toks({"sin"}));
    REQUIRE(s.open_slots().size() == 1);
    CHECK(s.open_slots()[0].depth == 2);

    auto c = build_partial_ast(toks({"+", "sin", "x", "y"}));
    CHECK(c.parent() == std::vector<int>{-1, 0, 1, 0});
    CHECK(c.complete());
    CHECK(c.depth() == std::vector<int>{1, 2, 3, 2});

    CHECK_THROWS_AS(build_partial_ast(toks({"x", "y"})), MalformedSequence);

    auto open = build_partial_ast(toks({"+", "-"}));
    CHECK(open.open_slots() == std::vector<OpenSlot>{{1, 0, 3}, {1, 1, 3}, {0, 1, 2}});
}

TEST_CASE("valid_next_tokens") {
    const int d_max = 7;
    auto root = valid_next_tokens(PartialAst{}, kVocab, d_max);
    CHECK(std::all_of(root.begin(), root.end(), [](bool b) { return b; }));

    auto deep = valid_next_tokens(build_partial_ast(toks({"sin", "sin"})), kVocab, 3);
    CHECK(symbols_of(deep) == std::vector<std::string>{"x", "y", "const"});

    auto sub = valid_next_tokens(build_partial_ast(toks({"-", "x"})), kVocab, 2);
    CHECK(symbols_of(sub) == std::vector<std::string>{"y", "const"});

    auto div_ok = valid_next_tokens(build_partial_ast(toks({"/", "x"})), kVocab, 7);
    CHECK_FALSE(div_ok[static_cast<std::size_t>(kVocab.index_of("x"))]);
    CHECK(div_ok[static_cast<std::size_t>(kVocab.index_of("sin"))]);

    // single-terminal vocabulary keeps x rather than emptying the set
    Vocabulary tiny({"-"}, {"x"}, false);
    PartialAst p;
    p.push(tiny[0]);
    p.push(tiny[1]);
    auto only = valid_next_tokens(p, tiny, 2);
    CHECK(only[1]);

    auto active = kVocab.view(std::vector<std::string>{"x"});
    auto restricted = valid_next_tokens(PartialAst{}, kVocab, 1, active);
    CHECK(symbols_of(restricted) == std::vector<std::string>{"x", "const"});
}

TEST_CASE("relation_matrix") {
    auto r = relation_matrix(build_partial_ast(toks({"+", "x", "y"})));
    CHECK(r(0, 1) == kParent);
    CHECK(r(1, 0) == kChild);
    CHECK(r(1, 2) == kSibling);
    CHECK(r(2, 1) == kSibling);
    CHECK(r(0, 0) == kSelf);

    auto a = relation_matrix(build_partial_ast(toks({"sin", "sin", "x"})));
    CHECK(a(0, 2) == kAncestor);
    CHECK(a(2, 0) == kOther);

    auto one = relation_matrix(build_partial_ast(toks({"x"})));
    CHECK(one.rows() == 1);
    CHECK(one(0, 0) == kSelf);
}

TEST_CASE("structural isomorphism") {
    CHECK(is_structurally_isomorphic(toks({"+", "x"}), toks({"+", "y"})));
    CHECK_FALSE(is_structurally_isomorphic(toks({"+", "x"}), toks({"sin", "x"})));
    CHECK(is_structurally_isomorphic(toks({"+", "x", "y"}), toks({"+", "y", "x"})));
    CHECK_FALSE(is_structurally_isomorphic(toks({"+", "x", "y"}), toks({"-", "x", "y"})));
    CHECK_FALSE(is_structurally_isomorphic(toks({"+", "x", "y"}), toks({"+", "sin", "x"})));
}

TEST_CASE("random rollouts under the mask are sound") {
    std::mt19937_64 rng(1);
    for (int d_max : {1, 3, 7, 10}) {
        for (int trial = 0; trial < 2500; ++trial) {
            PartialAst p;
            while (!p.complete()) {
                auto mask = valid_next_tokens(p, kVocab, d_max);
                std::vector<int> choices;
                for (std::size_t i = 0; i < mask.size(); ++i) {
                    if (mask[i]) choices.push_back(static_cast<int>(i));
                }
                REQUIRE_FALSE(choices.empty());
                if (p.next_slot().depth == d_max) {
                    for (int c : choices) REQUIRE(kVocab[static_cast<std::size_t>(c)].is_terminal());
                }
                p.push(kVocab[static_cast<std::size_t>(choices[rng() % choices.size()])]);
            }
            auto tree = parse_complete(p.tokens());
            REQUIRE(tree.depth() <= d_max);

            auto r = relation_matrix(p);
            for (Eigen::Index i = 0; i < r.rows(); ++i) {
                REQUIRE(r(i, i) == kSelf);
                for (Eigen::Index j = 0; j < r.cols(); ++j) {
                    REQUIRE((r(i, j) == kParent) == (r(j, i) == kChild));
                    REQUIRE((r(i, j) == kSibling) == (r(j, i) == kSibling));
                }
            }
            for (std::size_t i = 1; i < p.size(); ++i) {
                REQUIRE(p.parent()[i] < static_cast<int>(i));
                REQUIRE(p.depth()[i] == p.depth()[static_cast<std::size_t>(p.parent()[i])] + 1);
            }
        }
    }
}
