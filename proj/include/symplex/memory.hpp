#pragma once

#include "symplex/expr.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace symplex {

struct MemoryEntry {
    std::vector<Token> prefix;
    std::vector<double> constants;
    double reward = 0.0;
    Eigen::ArrayXd fingerprint;          // values at the memory's test points
    std::vector<std::string> canonical;  // canonicalize() of the tree
    int stage = 1;

    ExprTree tree() const { return ExprTree{prefix, constants}; }
};

struct MemoryConfig {
    int capacity = 10;
    int delta_s = 3;          // minimum edit distance between canonical forms
    double delta_b = 1e-3;    // minimum mean absolute fingerprint difference
};

/// Reward-sorted archive of structurally and behaviourally distinct
/// expressions. Test points carry one column per problem variable.
class TopKMemory {
public:
    TopKMemory(MemoryConfig config, Eigen::MatrixXd test_points);

    const MemoryConfig& config() const noexcept { return config_; }
    const Eigen::MatrixXd& test_points() const noexcept { return points_; }
    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    /// Highest reward, 0 when empty.
    double best_reward() const noexcept;

    /// Entry for `tree` with fingerprint and canonical form filled in.
    MemoryEntry make_entry(const ExprTree& tree, double reward, int stage) const;

    /// Rejects non-finite rewards or fingerprints. Otherwise let D be the
    /// entries the candidate is too close to: with D empty it is inserted
    /// (evicting the lowest reward beyond capacity); if it beats every member
    /// of D they are replaced by it; else it is rejected.
    bool insert(MemoryEntry entry);

    /// Swaps in new constants and reward for entry i if the new fingerprint
    /// keeps behavioural separation from every other entry. Does not re-sort.
    bool update_constants(std::size_t i, std::vector<double> constants, double reward);
    void set_reward(std::size_t i, double reward);
    /// Stable sort by reward, descending.
    void sort();

    void clear() noexcept { entries_.clear(); }

    Eigen::ArrayXd fingerprint(const ExprTree& tree) const;
    static double behavioral_distance(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b);
    int structural_distance(const MemoryEntry& a, const MemoryEntry& b) const;
    bool too_close(const MemoryEntry& a, const MemoryEntry& b) const;

    /// Checks size, order and pairwise separation.
    bool invariants_hold() const;

private:
    MemoryConfig config_;
    Eigen::MatrixXd points_;
    std::vector<MemoryEntry> entries_;
};

}  // namespace symplex
