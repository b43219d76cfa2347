#include "symplex/expr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

// Light normal form for skeleton comparison. An expression becomes a sum of
// terms coefficient * (product of factor^power). Factors are variables or
// opaque function applications whose argument is itself in normal form.
// Every factor carries two keys: `exact` (coefficients printed) decides
// merging and ordering, `wild` (coefficients replaced by "c") is what the
// skeleton compares.

namespace symplex {

namespace {

constexpr double kSnap = 1e-6;

struct Factor {
    std::string exact;
    std::string wild;
    int power = 1;
};

struct Term {
    double coef = 0.0;
    std::vector<Factor> factors;  // sorted by exact key, unique
};

using Poly = std::map<std::string, Term>;  // keyed by monomial exact key

double snap(double c) {
    const double r = std::round(c);
    if (std::abs(c - r) < kSnap * std::max(1.0, std::abs(c))) return r == 0.0 ? 0.0 : r;
    return c;
}

std::string coef_text(double c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", c);
    return buf;
}

std::string power_suffix(int p) { return p == 1 ? std::string() : "^" + std::to_string(p); }

std::string monomial_exact(const std::vector<Factor>& fs) {
    std::string key;
    for (const auto& f : fs) {
        if (!key.empty()) key += '*';
        key += f.exact + power_suffix(f.power);
    }
    return key;
}

std::string monomial_wild(const std::vector<Factor>& fs) {
    std::vector<std::string> parts;
    for (const auto& f : fs) parts.push_back(f.wild + power_suffix(f.power));
    std::sort(parts.begin(), parts.end());
    std::string key;
    for (const auto& p : parts) {
        if (!key.empty()) key += '*';
        key += p;
    }
    return key;
}

void accumulate(Poly& poly, Term term) {
    term.coef = snap(term.coef);
    if (term.coef == 0.0) return;
    const std::string key = monomial_exact(term.factors);
    auto it = poly.find(key);
    if (it == poly.end()) {
        poly.emplace(key, std::move(term));
        return;
    }
    it->second.coef = snap(it->second.coef + term.coef);
    if (it->second.coef == 0.0) poly.erase(it);
}

Poly constant_poly(double v) {
    Poly p;
    accumulate(p, Term{v, {}});
    return p;
}

Poly factor_poly(Factor f) {
    Poly p;
    accumulate(p, Term{1.0, {std::move(f)}});
    return p;
}

std::optional<double> as_constant(const Poly& p) {
    if (p.empty()) return 0.0;
    if (p.size() == 1 && p.begin()->first.empty()) return p.begin()->second.coef;
    return std::nullopt;
}

std::string exact_text(const Poly& p) {
    if (p.empty()) return "0";
    std::string out;
    for (const auto& [key, term] : p) {
        if (!out.empty()) out += " + ";
        out += coef_text(term.coef);
        if (!key.empty()) out += "*" + key;
    }
    return out;
}

std::string wild_text(const Poly& p) {
    if (p.empty()) return "0";
    std::vector<std::string> parts;
    for (const auto& [key, term] : p) {
        parts.push_back(key.empty() ? std::string("c") : "c*" + monomial_wild(term.factors));
    }
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (const auto& s : parts) {
        if (!out.empty()) out += " + ";
        out += s;
    }
    return out;
}

Poly add(const Poly& a, const Poly& b) {
    Poly out = a;
    for (const auto& [key, term] : b) accumulate(out, term);
    return out;
}

Poly scale(const Poly& a, double s) {
    Poly out;
    for (const auto& [key, term] : a) accumulate(out, Term{term.coef * s, term.factors});
    return out;
}

std::vector<Factor> merge_factors(const std::vector<Factor>& a, const std::vector<Factor>& b) {
    std::map<std::string, Factor> merged;
    for (const auto* side : {&a, &b}) {
        for (const auto& f : *side) {
            auto [it, inserted] = merged.emplace(f.exact, f);
            if (!inserted) it->second.power += f.power;
        }
    }
    std::vector<Factor> out;
    for (auto& [key, f] : merged) {
        if (f.power != 0) out.push_back(std::move(f));
    }
    return out;
}

Poly mul(const Poly& a, const Poly& b) {
    Poly out;
    for (const auto& [ka, ta] : a) {
        for (const auto& [kb, tb] : b) accumulate(out, Term{ta.coef * tb.coef, merge_factors(ta.factors, tb.factors)});
    }
    return out;
}

Poly function_of(std::string_view name, Op op, const Poly& arg) {
    if (auto c = as_constant(arg)) {
        Token tok = make_operator(name);
        ExprTree t{{tok, make_literal(*c)}, {}};
        if (auto v = eval_expr(t, {})) return constant_poly(*v);
    }
    const Poly* inner = &arg;
    Poly flipped;
    if (op == Op::Abs && !arg.empty() && arg.begin()->second.coef < 0.0) {
        flipped = scale(arg, -1.0);
        inner = &flipped;
    }
    std::string n(name);
    return factor_poly(Factor{n + "(" + exact_text(*inner) + ")", n + "(" + wild_text(*inner) + ")", 1});
}

Poly divide(const Poly& a, const Poly& b) {
    if (auto c = as_constant(b)) {
        if (std::abs(*c) < kDivisionGuard) {
            return factor_poly(Factor{"inv(0)", "inv(0)", 1});
        }
        return scale(a, 1.0 / *c);
    }
    if (b.size() == 1) {
        const Term& t = b.begin()->second;
        Term inverse{1.0 / t.coef, t.factors};
        for (auto& f : inverse.factors) f.power = -f.power;
        Poly inv;
        accumulate(inv, inverse);
        return mul(a, inv);
    }
    return mul(a, factor_poly(Factor{"inv(" + exact_text(b) + ")", "inv(" + wild_text(b) + ")", 1}));
}

Poly normalize(const ExprTree& tree, std::size_t& i) {
    const Token& tok = tree.prefix[i++];
    switch (tok.op) {
        case Op::Variable: return factor_poly(Factor{tok.symbol, tok.symbol, 1});
        case Op::Constant: return constant_poly(tree.constants.at(static_cast<std::size_t>(tok.index)));
        case Op::Literal: return constant_poly(tok.value);
        default: break;
    }
    if (tok.arity() == 1) {
        Poly a = normalize(tree, i);
        switch (tok.op) {
            case Op::Neg: return scale(a, -1.0);
            case Op::Square: return mul(a, a);
            default: return function_of(tok.symbol, tok.op, a);
        }
    }
    Poly a = normalize(tree, i);
    Poly b = normalize(tree, i);
    switch (tok.op) {
        case Op::Add: return add(a, b);
        case Op::Sub: return add(a, scale(b, -1.0));
        case Op::Mul: return mul(a, b);
        default: return divide(a, b);
    }
}

}  // namespace

std::string skeleton(const ExprTree& tree) {
    std::size_t i = 0;
    return wild_text(normalize(tree, i));
}

}  // namespace symplex
