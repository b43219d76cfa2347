#include "symplex/optimizer.hpp"

#include "symplex/autodiff.hpp"
#include "symplex/parallel.hpp"
#include "symplex/policy.hpp"

#include <cmath>

namespace symplex {

ConstFit optimize_constants(const EnergyModel& model, std::vector<double> init, const CollocationSet& points,
                            const ConstOptConfig& config) {
    if (config.steps <= 0) throw Error("constant optimisation needs steps > 0");
    if (!(config.lr > 0.0)) throw Error("constant optimisation needs lr > 0");

    ConstFit best;
    best.constants = init;
    if (model.constant_count() == 0) {
        best.report = model.energy(init, points);
        return best;
    }

    Eigen::VectorXd grad;
    best.report = model.energy_and_gradient(init, points, grad);
    if (!best.report.finite) return best;

    const auto n = static_cast<Eigen::Index>(init.size());
    ad::Matrix c = Eigen::Map<const Eigen::VectorXd>(init.data(), n);
    ad::AdamMoments moments{ad::Matrix::Zero(n, 1), ad::Matrix::Zero(n, 1)};
    const ad::AdamConfig adam{config.lr, 0.9, 0.999, 1e-8};

    for (int step = 1; step <= config.steps; ++step) {
        ad::adam_update(c, grad, moments, step, adam);
        best.steps = step;
        std::vector<double> current(c.data(), c.data() + n);
        EnergyReport rep = model.energy_and_gradient(current, points, grad);
        if (rep.finite && rep.energy < best.report.energy) {
            best.report = rep;
            best.constants = std::move(current);
        }
        // A non-finite step leaves a zero gradient; momentum carries Adam on.
    }
    return best;
}

ConstFit optimize_constants(const ExprTree& tree, std::vector<double> init, const PdeProblem& problem, int stage,
                            const ConstOptConfig& config, std::mt19937_64& rng) {
    const EnergyModel model(problem, tree, stage);
    const CollocationSet points = sample_collocation(problem, stage, rng);
    return optimize_constants(model, std::move(init), points, config);
}

void refine_memory(TopKMemory& memory, const PdeProblem& problem, int stage, const ConstOptConfig& config,
                   const CollocationSet& reward_points, std::uint64_t seed, int workers) {
    const std::size_t n = memory.size();
    if (n == 0) return;
    struct Outcome {
        std::vector<double> refined;
        double refined_reward = 0.0;
        double kept_reward = 0.0;
    };
    std::vector<Outcome> out(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const MemoryEntry& e = memory.entries()[i];
        const ExprTree tree = e.tree();
        const EnergyModel model(problem, tree, stage);
        out[i].kept_reward = model.energy(e.constants, reward_points).reward;
        out[i].refined = e.constants;
        out[i].refined_reward = out[i].kept_reward;
        if (model.constant_count() == 0) return;
        auto rng = rollout_stream(seed, i);
        const CollocationSet draw = sample_collocation(problem, stage, rng);
        ConstFit fit = optimize_constants(model, e.constants, draw, config);
        out[i].refined = std::move(fit.constants);
        out[i].refined_reward = model.energy(out[i].refined, reward_points).reward;
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (out[i].refined != memory.entries()[i].constants && out[i].refined_reward >= out[i].kept_reward &&
            memory.update_constants(i, out[i].refined, out[i].refined_reward))
            continue;
        memory.set_reward(i, out[i].kept_reward);
    }
    memory.sort();
}

}  // namespace symplex
