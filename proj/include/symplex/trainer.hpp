#pragma once

#include "symplex/autodiff.hpp"
#include "symplex/memory.hpp"
#include "symplex/optimizer.hpp"
#include "symplex/pde.hpp"
#include "symplex/policy.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace symplex {

struct TrainerConfig {
    int batch = 64;
    double lambda_ent = 0.3;
    double tau = 0.1;                  // imitation temperature
    double imitation_threshold = 0.8;  // best memory reward that switches imitation on
    double lambda_imit = 1.0;
    double lr = 5e-4;
    double plateau_factor = 0.9;
    int patience = 10;
    double clip = 5.0;
    int refine_period = 10;
    int stage_max_epochs = 500;   // final stage
    double advance_reward = 0.99;
    int fallback_epochs = 200;    // earlier stages
    MemoryConfig memory;
    int n_test = 64;
    ConstOptConfig const_opt{50, 0.02};
    ConstOptConfig refine{200, 0.02};
    double const_init = 1.0;
    std::uint64_t seed = 0;
    int workers = 1;
    std::optional<int> epochs_cap;    // per-stage limit overriding the schedule
    std::optional<int> forced_stage;  // run this stage alone

    /// Throws Error naming the first invalid field.
    void validate() const;
};

/// r_i = 1 - rank(E_i) / (N - 1), smallest energy first, ties by index;
/// non-finite energies rank last. N = 1 gives {1}.
std::vector<double> rank_rewards_raw(std::span<const double> energies);
/// rank_rewards_raw standardised to zero mean and unit variance when N > 1
/// and the standard deviation exceeds 1e-8.
std::vector<double> rank_rewards(std::span<const double> energies);
std::vector<double> depth_weights(std::span<const int> depths);
/// softmax(r / tau).
std::vector<double> imitation_weights(std::span<const double> rewards, double tau);

/// -(1/N) sum w_i r_i log pi(T_i) - lambda_ent * (sum of step entropies / total steps).
ad::Var policy_loss(ad::Tape& tape, std::span<const SymFormer::Score> scores, std::span<const double> weights,
                    std::span<const double> rewards, double lambda_ent);

struct ImitationTerm {
    std::optional<ad::Var> loss;  // empty when inactive or every entry was skipped
    int used = 0;
    int skipped = 0;              // entries the current masks reject
};

/// sum_j alpha_j * (-log pi(T_j)) / |T_j| over memory entries, active only
/// when the best memory reward exceeds `threshold`.
ImitationTerm imitation_loss(ad::Tape& tape, const SymFormer& policy, const SymFormer::Bound& bound,
                             const TopKMemory& memory, double tau, double threshold);

// ---------------------------------------------------------------------------
// Curriculum

enum class StageAction { Continue, Advance, Stop };

/// Decision after `epochs` epochs of a stage whose best reward is `best`.
/// Non-final stages advance once best > advance_reward or at the fallback
/// epoch; the final stage stops on the reward or at stage_max_epochs. An
/// epochs cap ends any stage.
StageAction stage_action(const TrainerConfig& config, int epochs, double best, bool final_stage);

struct StageRun {
    int stage = 1;
    int epochs = 0;
    bool reached_reward = false;
};

/// Runs `epoch(stage, epoch_in_stage)` (returning the stage's best reward so
/// far) through `stages` under stage_action. `begin_stage(stage, index)` runs
/// before a stage's first epoch.
std::vector<StageRun> drive_curriculum(std::span<const int> stages, const TrainerConfig& config,
                                       const std::function<double(int, int)>& epoch,
                                       const std::function<void(int, std::size_t)>& begin_stage = {});

/// Vocabulary masks per stage; each contains the previous one.
std::vector<std::vector<bool>> stage_masks(const Vocabulary& vocab, const PdeProblem& problem,
                                           std::span<const int> stages);

// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;           // 1-based over the whole run
    int stage = 1;
    int stage_epoch = 0;     // 1-based within the stage
    double best_reward = 0;  // best so far in this stage
    double batch_best = 0;
    double mean_reward = 0;
    double mean_entropy = 0;
    double lr = 0;
    double loss = 0;
    double grad_norm = 0;    // before clipping
    int memory_size = 0;
    int imitation_used = 0;
    int imitation_skipped = 0;
    std::string best_expression;  // prefix form
};

struct RunResult {
    std::string problem;
    std::uint64_t seed = 0;
    bool found = false;
    std::string prefix;           // constants inlined
    std::string prefix_template;  // constants as "const", see `constants`
    std::string infix;
    std::vector<double> constants;
    double reward = 0.0;
    std::optional<double> mse;
    bool srr = false;
    std::vector<StageRun> stages;
    int total_epochs = 0;
};

/// Owns the policy, its optimiser and the memory for one run.
class Trainer {
public:
    Trainer(const PdeProblem& problem, std::vector<std::string> operators, PolicyConfig policy_config,
            TrainerConfig config);

    RunResult run(const std::function<void(const EpochRecord&)>& on_epoch = {});

    /// One training epoch of `stage`; `stage_epoch` counts from 1.
    EpochRecord run_epoch(int stage, int stage_epoch);
    /// Refinement plus revalidation on entering `stage`.
    void begin_stage(int stage);

    std::vector<int> stages() const;
    const PdeProblem& problem() const noexcept { return *problem_; }
    const TrainerConfig& config() const noexcept { return config_; }
    SymFormer& policy() noexcept { return policy_; }
    const SymFormer& policy() const noexcept { return policy_; }
    TopKMemory& memory() noexcept { return memory_; }
    const TopKMemory& memory() const noexcept { return memory_; }
    ad::Adam& optimizer() noexcept { return adam_; }

private:
    CollocationSet shared_draw(int stage, int epoch) const;
    void revalidate();

    const PdeProblem* problem_;
    TrainerConfig config_;
    SymFormer policy_;
    ad::Adam adam_;
    ad::PlateauScheduler plateau_;
    TopKMemory memory_;
    int epoch_ = 0;
    int stage_ = 0;
    double stage_best_ = 0.0;
};

/// Mixes run seed, purpose tag and counter into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter);

}  // namespace symplex
