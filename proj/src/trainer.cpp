#include "symplex/trainer.hpp"

#include "symplex/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

namespace symplex {

namespace {

enum : std::uint64_t { kTagSample = 1, kTagCandidate = 2, kTagDraw = 3, kTagRefine = 4, kTagTestPoints = 5 };

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter) {
    return rollout_stream(derive_seed(seed, tag, counter), 0);
}

std::string prefix_key(std::span<const Token> prefix) {
    std::string key;
    for (const auto& t : prefix) {
        key += t.symbol;
        key += ' ';
    }
    return key;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter) {
    // splitmix64 finaliser over a combined word
    std::uint64_t z = seed ^ (tag * 0x9e3779b97f4a7c15ULL) ^ (counter * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void TrainerConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw Error(std::string("invalid trainer config: ") + what);
    };
    require(batch >= 1, "batch must be positive");
    require(lambda_ent >= 0.0, "lambda_ent must be non-negative");
    require(tau > 0.0, "tau must be positive");
    require(imitation_threshold > 0.0 && imitation_threshold < 1.0, "imitation threshold must lie in (0, 1)");
    require(lambda_imit >= 0.0, "lambda_imit must be non-negative");
    require(lr > 0.0, "lr must be positive");
    require(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau factor must lie in (0, 1)");
    require(patience >= 0, "patience must be non-negative");
    require(clip > 0.0, "clip must be positive");
    require(refine_period >= 1, "refine period must be positive");
    require(stage_max_epochs >= 1 && fallback_epochs >= 1, "stage epochs must be positive");
    require(advance_reward > 0.0 && advance_reward < 1.0, "advance reward must lie in (0, 1)");
    require(n_test >= 1, "n_test must be positive");
    require(const_opt.steps >= 1 && refine.steps >= 1, "optimisation steps must be positive");
    require(const_opt.lr > 0.0 && refine.lr > 0.0, "optimisation lr must be positive");
    require(workers >= 1, "workers must be positive");
    require(!epochs_cap || *epochs_cap >= 1, "epochs cap must be positive");
    require(!forced_stage || (*forced_stage >= 1 && *forced_stage <= 3), "stage must be 1, 2 or 3");
}

// ---------------------------------------------------------------------------
// Loss pieces

std::vector<double> rank_rewards_raw(std::span<const double> energies) {
    const std::size_t n = energies.size();
    if (n == 0) return {};
    if (n == 1) return {1.0};
    auto key = [&](std::size_t i) {
        const double e = energies[i];
        return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
    };
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    std::vector<double> r(n);
    for (std::size_t rank = 0; rank < n; ++rank)
        r[order[rank]] = 1.0 - static_cast<double>(rank) / static_cast<double>(n - 1);
    return r;
}

std::vector<double> rank_rewards(std::span<const double> energies) {
    std::vector<double> r = rank_rewards_raw(energies);
    if (r.size() < 2) return r;
    const Eigen::Map<const Eigen::ArrayXd> a(r.data(), static_cast<Eigen::Index>(r.size()));
    const double mu = a.mean();
    const double sd = std::sqrt((a - mu).square().mean());
    if (sd <= 1e-8) return r;
    for (double& v : r) v = (v - mu) / sd;
    return r;
}

std::vector<double> depth_weights(std::span<const int> depths) {
    std::vector<double> w;
    w.reserve(depths.size());
    for (int d : depths) {
        if (d < 1) throw Error("depth must be at least 1");
        w.push_back(1.0 / (d + 1.0));
    }
    return w;
}

std::vector<double> imitation_weights(std::span<const double> rewards, double tau) {
    if (rewards.empty()) return {};
    if (!(tau > 0.0)) throw Error("imitation temperature must be positive");
    const double top = *std::max_element(rewards.begin(), rewards.end());
    std::vector<double> w;
    double total = 0.0;
    for (double r : rewards) {
        w.push_back(std::exp((r - top) / tau));
        total += w.back();
    }
    for (double& v : w) v /= total;
    return w;
}

ad::Var policy_loss(ad::Tape& tape, std::span<const SymFormer::Score> scores, std::span<const double> weights,
                    std::span<const double> rewards, double lambda_ent) {
    const std::size_t n = scores.size();
    if (n == 0) throw Error("policy loss needs at least one rollout");
    if (weights.size() != n || rewards.size() != n) throw Error("policy loss inputs differ in length");
    std::vector<ad::Var> terms;
    std::vector<ad::Var> entropies;
    int steps = 0;
    for (std::size_t i = 0; i < n; ++i) {
        terms.push_back(ad::scale(scores[i].log_prob, -weights[i] * rewards[i] / static_cast<double>(n)));
        entropies.push_back(scores[i].entropy_sum);
        steps += scores[i].steps;
    }
    ad::Var loss = ad::sum_all(terms);
    if (lambda_ent != 0.0 && steps > 0)
        loss = ad::add(loss, ad::scale(ad::sum_all(entropies), -lambda_ent / steps));
    (void)tape;
    return loss;
}

ImitationTerm imitation_loss(ad::Tape& tape, const SymFormer& policy, const SymFormer::Bound& bound,
                             const TopKMemory& memory, double tau, double threshold) {
    ImitationTerm out;
    if (memory.empty() || !(memory.best_reward() > threshold)) return out;
    std::vector<SymFormer::Score> scores;
    std::vector<double> rewards;
    for (const auto& e : memory.entries()) {
        try {
            scores.push_back(policy.score(tape, bound, e.prefix));
            rewards.push_back(e.reward);
        } catch (const InvalidTrajectory& err) {
            ++out.skipped;
            std::cerr << "warning: memory entry skipped for imitation: " << err.what() << '\n';
        } catch (const VocabularyError& err) {
            ++out.skipped;
            std::cerr << "warning: memory entry skipped for imitation: " << err.what() << '\n';
        }
    }
    if (scores.empty()) return out;
    const std::vector<double> alpha = imitation_weights(rewards, tau);
    std::vector<ad::Var> terms;
    for (std::size_t j = 0; j < scores.size(); ++j)
        terms.push_back(ad::scale(scores[j].log_prob, -alpha[j] / std::max(1, scores[j].steps)));
    out.loss = ad::sum_all(terms);
    out.used = static_cast<int>(scores.size());
    return out;
}

// ---------------------------------------------------------------------------
// Curriculum

StageAction stage_action(const TrainerConfig& config, int epochs, double best, bool final_stage) {
    const StageAction done = final_stage ? StageAction::Stop : StageAction::Advance;
    if (best > config.advance_reward) return done;
    if (config.epochs_cap && epochs >= *config.epochs_cap) return done;
    if (!final_stage && epochs >= config.fallback_epochs) return done;
    if (epochs >= config.stage_max_epochs) return done;
    return StageAction::Continue;
}

std::vector<StageRun> drive_curriculum(std::span<const int> stages, const TrainerConfig& config,
                                       const std::function<double(int, int)>& epoch,
                                       const std::function<void(int, std::size_t)>& begin_stage) {
    std::vector<StageRun> runs;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const bool final_stage = s + 1 == stages.size();
        StageRun run;
        run.stage = stages[s];
        if (begin_stage) begin_stage(run.stage, s);
        for (;;) {
            const double best = epoch(run.stage, run.epochs + 1);
            ++run.epochs;
            const StageAction action = stage_action(config, run.epochs, best, final_stage);
            if (action == StageAction::Continue) continue;
            run.reached_reward = best > config.advance_reward;
            break;
        }
        runs.push_back(run);
    }
    return runs;
}

std::vector<std::vector<bool>> stage_masks(const Vocabulary& vocab, const PdeProblem& problem,
                                           std::span<const int> stages) {
    std::vector<std::vector<bool>> masks;
    for (int s : stages) masks.push_back(vocab.view(problem.stage_spec(s).variables));
    return masks;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

SymFormer make_policy(const PdeProblem& problem, std::vector<std::string> operators, PolicyConfig config,
                      std::uint64_t seed) {
    return SymFormer(Vocabulary(std::move(operators), problem.variables(), true), config, seed);
}

}  // namespace

Trainer::Trainer(const PdeProblem& problem, std::vector<std::string> operators, PolicyConfig policy_config,
                 TrainerConfig config)
    : problem_(&problem),
      config_((config.validate(), config)),
      policy_(make_policy(problem, std::move(operators), policy_config, config.seed)),
      adam_(policy_.parameters(), ad::AdamConfig{config.lr, 0.9, 0.999, 1e-8}),
      plateau_(config.plateau_factor, config.patience),
      memory_(config.memory, [&] {
          auto rng = stream(config.seed, kTagTestPoints, 0);
          return sample_box(problem, config.n_test, rng);
      }()) {}

std::vector<int> Trainer::stages() const {
    if (config_.forced_stage) {
        const auto all = problem_->stages();
        if (std::find(all.begin(), all.end(), *config_.forced_stage) == all.end())
            throw Error("problem " + problem_->name() + " has no stage " + std::to_string(*config_.forced_stage));
        return {*config_.forced_stage};
    }
    return problem_->stages();
}

CollocationSet Trainer::shared_draw(int stage, int epoch) const {
    auto rng = stream(config_.seed, kTagDraw, static_cast<std::uint64_t>(epoch));
    return sample_collocation(*problem_, stage, rng);
}

void Trainer::revalidate() {
    const auto& active = policy_.active();
    std::vector<MemoryEntry> keep;
    for (const auto& e : memory_.entries()) {
        bool ok = e.tree().depth() <= policy_.config().d_max;
        try {
            for (int id : policy_.encode(e.prefix)) ok = ok && active[static_cast<std::size_t>(id)];
        } catch (const VocabularyError&) {
            ok = false;
        }
        if (ok) keep.push_back(e);
        else std::cerr << "warning: memory entry " << to_prefix_string(e.tree()) << " invalid for stage " << stage_
                       << ", dropped\n";
    }
    if (keep.size() == memory_.size()) return;
    memory_.clear();
    for (auto& e : keep) memory_.insert(std::move(e));
}

void Trainer::begin_stage(int stage) {
    const bool transition = stage_ != 0;
    stage_ = stage;
    policy_.set_active(policy_.vocab().view(problem_->stage_spec(stage).variables));
    plateau_ = ad::PlateauScheduler(config_.plateau_factor, config_.patience);
    revalidate();
    if (transition && !memory_.empty()) {
        refine_memory(memory_, *problem_, stage, config_.refine, shared_draw(stage, epoch_ + 1),
                      derive_seed(config_.seed, kTagRefine, static_cast<std::uint64_t>(epoch_)), config_.workers);
    }
    stage_best_ = memory_.best_reward();
}

EpochRecord Trainer::run_epoch(int stage, int stage_epoch) {
    if (stage != stage_) begin_stage(stage);
    ++epoch_;
    const auto epoch = static_cast<std::uint64_t>(epoch_);
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.stage = stage;
    rec.stage_epoch = stage_epoch;

    const std::vector<Rollout> rollouts =
        policy_.sample_batch(config_.batch, derive_seed(config_.seed, kTagSample, epoch), config_.workers);
    const CollocationSet draw = shared_draw(stage, epoch_);

    // Distinct candidates in first-seen order; duplicates share the result.
    std::map<std::string, std::size_t> seen;
    std::vector<std::size_t> slot(rollouts.size());
    std::vector<std::size_t> first;
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
        auto [it, fresh] = seen.emplace(prefix_key(rollouts[i].prefix), first.size());
        if (fresh) first.push_back(i);
        slot[i] = it->second;
    }

    struct Candidate {
        ExprTree tree;
        EnergyReport report;
    };
    std::vector<Candidate> cands(first.size());
    const std::uint64_t cand_seed = derive_seed(config_.seed, kTagCandidate, epoch);
    parallel_for(first.size(), config_.workers, [&](std::size_t k) {
        const std::size_t i = first[k];
        ExprTree tree = parse_complete(rollouts[i].prefix);
        for (double& c : tree.constants) c = config_.const_init;
        const EnergyModel model(*problem_, tree, stage);
        if (model.constant_count() > 0) {
            auto rng = rollout_stream(cand_seed, i);
            const CollocationSet own = sample_collocation(*problem_, stage, rng);
            tree.constants = optimize_constants(model, tree.constants, own, config_.const_opt).constants;
        }
        cands[k].report = model.energy(tree.constants, draw);
        cands[k].tree = std::move(tree);
    });

    // Memory update in sample order.
    for (std::size_t k = 0; k < cands.size(); ++k) {
        if (!cands[k].report.finite) continue;
        memory_.insert(memory_.make_entry(cands[k].tree, cands[k].report.reward, stage));
    }

    std::vector<double> energies(rollouts.size());
    std::vector<int> depths(rollouts.size());
    double reward_sum = 0.0;
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
        const EnergyReport& rep = cands[slot[i]].report;
        energies[i] = rep.finite ? rep.energy : std::numeric_limits<double>::infinity();
        depths[i] = rollouts[i].depth;
        reward_sum += rep.reward;
        rec.batch_best = std::max(rec.batch_best, rep.reward);
    }
    rec.mean_reward = reward_sum / static_cast<double>(rollouts.size());
    const std::vector<double> ranked = rank_rewards(energies);
    const std::vector<double> weights = depth_weights(depths);

    ad::Tape tape;
    const SymFormer::Bound bound = policy_.bind(tape);
    std::vector<SymFormer::Score> scores;
    scores.reserve(rollouts.size());
    double entropy_sum = 0.0;
    int steps = 0;
    for (const auto& r : rollouts) {
        scores.push_back(policy_.score(tape, bound, r.prefix));
        entropy_sum += scores.back().entropy_sum.scalar();
        steps += scores.back().steps;
    }
    rec.mean_entropy = steps > 0 ? entropy_sum / steps : 0.0;
    ad::Var loss = policy_loss(tape, scores, weights, ranked, config_.lambda_ent);
    const ImitationTerm imit =
        imitation_loss(tape, policy_, bound, memory_, config_.tau, config_.imitation_threshold);
    if (imit.loss) loss = ad::add(loss, ad::scale(*imit.loss, config_.lambda_imit));
    rec.imitation_used = imit.used;
    rec.imitation_skipped = imit.skipped;
    rec.loss = loss.scalar();

    adam_.zero_grad();
    tape.backward(loss);
    rec.grad_norm = ad::clip_grad_norm(adam_.params(), config_.clip);
    adam_.step();

    if (stage_epoch % config_.refine_period == 0) {
        refine_memory(memory_, *problem_, stage, config_.refine, draw,
                      derive_seed(config_.seed, kTagRefine, epoch), config_.workers);
    }

    stage_best_ = std::max({stage_best_, rec.batch_best, memory_.best_reward()});
    plateau_.step(stage_best_, adam_);

    rec.best_reward = stage_best_;
    rec.lr = adam_.lr();
    rec.memory_size = static_cast<int>(memory_.size());
    if (!memory_.empty()) rec.best_expression = to_prefix_string(memory_.entries().front().tree());
    return rec;
}

RunResult Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
    RunResult result;
    result.problem = problem_->name();
    result.seed = config_.seed;
    const std::vector<int> plan = stages();
    result.stages = drive_curriculum(
        plan, config_,
        [&](int stage, int stage_epoch) {
            EpochRecord rec = run_epoch(stage, stage_epoch);
            if (on_epoch) on_epoch(rec);
            return rec.best_reward;
        },
        [&](int stage, std::size_t) { begin_stage(stage); });
    for (const auto& s : result.stages) result.total_epochs += s.epochs;

    if (!memory_.empty()) {
        // Final polish of the surviving constants on the last stage.
        const int last = plan.back();
        refine_memory(memory_, *problem_, last, config_.refine, shared_draw(last, epoch_ + 1),
                      derive_seed(config_.seed, kTagRefine, static_cast<std::uint64_t>(epoch_ + 1)),
                      config_.workers);
        const MemoryEntry& best = memory_.entries().front();
        const ExprTree tree = best.tree();
        result.found = true;
        result.prefix = to_prefix_string(tree);
        for (const auto& t : tree.prefix) {
            if (!result.prefix_template.empty()) result.prefix_template += ' ';
            result.prefix_template += t.op == Op::Constant ? std::string("const") : t.symbol;
        }
        result.infix = to_infix_string(tree);
        result.constants = best.constants;
        result.reward = best.reward;
        if (problem_->solution()) {
            result.mse = mse(tree, tree.constants, *problem_);
            result.srr = srr_check(tree, tree.constants, *problem_);
        }
    }
    return result;
}

}  // namespace symplex
