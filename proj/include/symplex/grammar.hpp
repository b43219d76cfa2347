#pragma once

#include "symplex/expr.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace symplex {

/// Argument position awaiting a token.
struct OpenSlot {
    int parent = -1;  // -1 for the root slot
    int slot = 0;     // argument position within the parent
    int depth = 1;    // depth the filling token will have

    bool operator==(const OpenSlot&) const = default;
};

/// Tree induced by a (possibly incomplete) prefix. Slots are filled leftmost
/// first, which is what prefix order forces.
class PartialAst {
public:
    PartialAst();

    /// Places `token` in the next open slot. Throws MalformedSequence when the
    /// tree is already complete.
    void push(const Token& token);

    std::size_t size() const noexcept { return tokens_.size(); }
    bool complete() const noexcept { return frontier_.empty(); }

    const std::vector<Token>& tokens() const noexcept { return tokens_; }
    const std::vector<int>& parent() const noexcept { return parent_; }
    const std::vector<int>& child_slot() const noexcept { return child_slot_; }
    const std::vector<int>& depth() const noexcept { return depth_; }

    /// Open slots left to right; the first one is filled next.
    std::vector<OpenSlot> open_slots() const;
    const OpenSlot& next_slot() const;

    /// Parent array extended by the node that would fill next_slot().
    std::vector<int> parents_with_frontier() const;

private:
    std::vector<Token> tokens_;
    std::vector<int> parent_;
    std::vector<int> child_slot_;
    std::vector<int> depth_;
    std::vector<OpenSlot> frontier_;  // stack, back() is next
};

PartialAst build_partial_ast(std::span<const Token> prefix);

/// 1 for terminals, 2 for any operator.
int min_subtree_height(const Token& token) noexcept;

/// Grammar- and depth-valid tokens for the next slot, as a mask over
/// `vocab`. `active` restricts to a curriculum view (empty = all tokens).
/// The second operand of - or / excludes the terminal already used as the
/// first operand, unless that would leave nothing to choose.
std::vector<bool> valid_next_tokens(const PartialAst& partial, const Vocabulary& vocab, int d_max,
                                    const std::vector<bool>& active = {});

enum Relation : int { kSelf = 0, kParent = 1, kChild = 2, kSibling = 3, kAncestor = 4, kOther = 5 };
inline constexpr int kRelationTypes = 6;

/// r(i, j) under parent array `parent`.
int relation_code(std::span<const int> parent, int i, int j);

using RelationMatrix = Eigen::MatrixXi;

RelationMatrix relation_matrix(std::span<const int> parent);
RelationMatrix relation_matrix(const PartialAst& partial);

/// Ordered-tree isomorphism ignoring terminal identities.
bool is_structurally_isomorphic(std::span<const Token> a, std::span<const Token> b);

}  // namespace symplex
