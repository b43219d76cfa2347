#include "symplex/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace symplex {

TopKMemory::TopKMemory(MemoryConfig config, Eigen::MatrixXd test_points)
    : config_(config), points_(std::move(test_points)) {
    if (config_.capacity < 1) throw Error("memory capacity must be positive");
    if (config_.delta_s < 0 || !(config_.delta_b >= 0.0)) throw Error("memory thresholds must be non-negative");
    if (points_.rows() < 1) throw Error("memory needs at least one test point");
}

double TopKMemory::best_reward() const noexcept { return entries_.empty() ? 0.0 : entries_.front().reward; }

Eigen::ArrayXd TopKMemory::fingerprint(const ExprTree& tree) const { return evaluate(tree, points_); }

MemoryEntry TopKMemory::make_entry(const ExprTree& tree, double reward, int stage) const {
    MemoryEntry e;
    e.prefix = tree.prefix;
    e.constants = tree.constants;
    e.reward = reward;
    e.fingerprint = fingerprint(tree);
    e.canonical = canonicalize(tree);
    e.stage = stage;
    return e;
}

double TopKMemory::behavioral_distance(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    if (a.size() != b.size() || a.size() == 0) return std::numeric_limits<double>::infinity();
    return (a - b).abs().mean();
}

int TopKMemory::structural_distance(const MemoryEntry& a, const MemoryEntry& b) const {
    return levenshtein(std::span<const std::string>(a.canonical), std::span<const std::string>(b.canonical));
}

bool TopKMemory::too_close(const MemoryEntry& a, const MemoryEntry& b) const {
    return structural_distance(a, b) < config_.delta_s ||
           behavioral_distance(a.fingerprint, b.fingerprint) < config_.delta_b;
}

bool TopKMemory::insert(MemoryEntry entry) {
    if (!std::isfinite(entry.reward) || !entry.fingerprint.allFinite() ||
        entry.fingerprint.size() != points_.rows())
        return false;
    if (entry.canonical.empty()) entry.canonical = canonicalize(entry.tree());

    std::vector<std::size_t> close;
    double close_best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (too_close(entry, entries_[i])) {
            close.push_back(i);
            close_best = std::max(close_best, entries_[i].reward);
        }
    }
    if (!close.empty()) {
        if (!(entry.reward > close_best)) return false;
        for (auto it = close.rbegin(); it != close.rend(); ++it)
            entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(*it));
    } else if (entries_.size() >= static_cast<std::size_t>(config_.capacity) &&
               !(entry.reward > entries_.back().reward)) {
        return false;
    }

    // Insert after equal rewards so earlier entries keep precedence.
    auto pos = std::upper_bound(entries_.begin(), entries_.end(), entry.reward,
                                [](double r, const MemoryEntry& e) { return r > e.reward; });
    entries_.insert(pos, std::move(entry));
    if (entries_.size() > static_cast<std::size_t>(config_.capacity)) entries_.pop_back();
    return true;
}

bool TopKMemory::update_constants(std::size_t i, std::vector<double> constants, double reward) {
    MemoryEntry& e = entries_.at(i);
    ExprTree tree{e.prefix, constants};
    Eigen::ArrayXd fp = fingerprint(tree);
    if (!fp.allFinite() || !std::isfinite(reward)) return false;
    for (std::size_t j = 0; j < entries_.size(); ++j) {
        if (j != i && behavioral_distance(fp, entries_[j].fingerprint) < config_.delta_b) return false;
    }
    e.constants = std::move(constants);
    e.fingerprint = std::move(fp);
    e.reward = reward;
    return true;
}

void TopKMemory::set_reward(std::size_t i, double reward) { entries_.at(i).reward = reward; }

void TopKMemory::sort() {
    std::stable_sort(entries_.begin(), entries_.end(),
                     [](const MemoryEntry& a, const MemoryEntry& b) { return a.reward > b.reward; });
}

bool TopKMemory::invariants_hold() const {
    if (entries_.size() > static_cast<std::size_t>(config_.capacity)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (i > 0 && entries_[i - 1].reward < entries_[i].reward) return false;
        for (std::size_t j = i + 1; j < entries_.size(); ++j) {
            if (too_close(entries_[i], entries_[j])) return false;
        }
    }
    return true;
}

}  // namespace symplex
