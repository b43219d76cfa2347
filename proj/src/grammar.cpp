#include "symplex/grammar.hpp"

#include <stdexcept>

namespace symplex {

PartialAst::PartialAst() { frontier_.push_back(OpenSlot{-1, 0, 1}); }

void PartialAst::push(const Token& token) {
    if (frontier_.empty()) {
        throw MalformedSequence("token '" + token.symbol + "' at index " + std::to_string(tokens_.size()) +
                                    " has no open slot",
                                static_cast<int>(tokens_.size()));
    }
    const OpenSlot slot = frontier_.back();
    frontier_.pop_back();
    const int node = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    parent_.push_back(slot.parent);
    child_slot_.push_back(slot.slot);
    depth_.push_back(slot.depth);
    for (int k = token.arity() - 1; k >= 0; --k) frontier_.push_back(OpenSlot{node, k, slot.depth + 1});
}

std::vector<OpenSlot> PartialAst::open_slots() const { return {frontier_.rbegin(), frontier_.rend()}; }

const OpenSlot& PartialAst::next_slot() const {
    if (frontier_.empty()) throw std::logic_error("complete tree has no open slot");
    return frontier_.back();
}

std::vector<int> PartialAst::parents_with_frontier() const {
    std::vector<int> out = parent_;
    if (!frontier_.empty()) out.push_back(frontier_.back().parent);
    return out;
}

PartialAst build_partial_ast(std::span<const Token> prefix) {
    PartialAst ast;
    for (const auto& tok : prefix) ast.push(tok);
    return ast;
}

int min_subtree_height(const Token& token) noexcept { return token.is_terminal() ? 1 : 2; }

std::vector<bool> valid_next_tokens(const PartialAst& partial, const Vocabulary& vocab, int d_max,
                                    const std::vector<bool>& active) {
    const OpenSlot& slot = partial.next_slot();
    std::vector<bool> mask(vocab.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        if (!active.empty() && !active[i]) continue;
        mask[i] = slot.depth + min_subtree_height(vocab[i]) - 1 <= d_max;
        any = any || mask[i];
    }
    if (!any) throw std::logic_error("no grammar-valid token for the next slot");

    if (slot.slot == 1 && slot.parent >= 0) {
        const auto& toks = partial.tokens();
        const Op parent_op = toks[static_cast<std::size_t>(slot.parent)].op;
        const Token& first = toks[static_cast<std::size_t>(slot.parent) + 1];
        if ((parent_op == Op::Sub || parent_op == Op::Div) && first.is_terminal()) {
            if (auto same = vocab.find(first.symbol); same && mask[static_cast<std::size_t>(*same)]) {
                mask[static_cast<std::size_t>(*same)] = false;
                bool left = false;
                for (bool m : mask) left = left || m;
                if (!left) mask[static_cast<std::size_t>(*same)] = true;
            }
        }
    }
    return mask;
}

int relation_code(std::span<const int> parent, int i, int j) {
    if (i == j) return kSelf;
    const auto pi = parent[static_cast<std::size_t>(i)];
    const auto pj = parent[static_cast<std::size_t>(j)];
    if (pj == i) return kParent;
    if (pi == j) return kChild;
    if (pi == pj && pi != -1) return kSibling;
    for (int a = pj; a != -1; a = parent[static_cast<std::size_t>(a)]) {
        if (a == i) return kAncestor;
    }
    return kOther;
}

RelationMatrix relation_matrix(std::span<const int> parent) {
    const auto n = static_cast<Eigen::Index>(parent.size());
    RelationMatrix r(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) r(i, j) = relation_code(parent, static_cast<int>(i), static_cast<int>(j));
    }
    return r;
}

RelationMatrix relation_matrix(const PartialAst& partial) { return relation_matrix(partial.parent()); }

bool is_structurally_isomorphic(std::span<const Token> a, std::span<const Token> b) {
    if (a.size() != b.size()) return false;
    const PartialAst pa = build_partial_ast(a);
    const PartialAst pb = build_partial_ast(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].arity() != b[i].arity()) return false;
        if (a[i].arity() > 0 && a[i].op != b[i].op) return false;
        if (pa.parent()[i] != pb.parent()[i] || pa.child_slot()[i] != pb.child_slot()[i]) return false;
    }
    return pa.open_slots() == pb.open_slots();
}

}  // namespace symplex
