#pragma once

#include "symplex/expr.hpp"
#include "symplex/memory.hpp"
#include "symplex/pde.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace symplex {

struct ConstOptConfig {
    int steps = 50;
    double lr = 0.02;
};

struct ConstFit {
    std::vector<double> constants;
    EnergyReport report;  // at `constants`, on the optimisation draw
    int steps = 0;        // Adam updates taken
};

/// Adam on the constants of `model.tree()` against a fixed collocation draw.
/// Returns the best constants seen (initial point included). A constant-free
/// tree or a non-finite initial energy returns `init` without any update.
ConstFit optimize_constants(const EnergyModel& model, std::vector<double> init, const CollocationSet& points,
                            const ConstOptConfig& config);

/// As above with one collocation draw taken from `rng`.
ConstFit optimize_constants(const ExprTree& tree, std::vector<double> init, const PdeProblem& problem, int stage,
                            const ConstOptConfig& config, std::mt19937_64& rng);

/// Re-optimises every entry's constants (entry i draws from stream
/// (seed, i)), re-scores all entries on `reward_points` and re-sorts. New
/// constants are kept only if they score at least as well there and preserve
/// behavioural separation.
void refine_memory(TopKMemory& memory, const PdeProblem& problem, int stage, const ConstOptConfig& config,
                   const CollocationSet& reward_points, std::uint64_t seed, int workers = 1);

}  // namespace symplex
