#pragma once

#include "symplex/autodiff.hpp"
#include "symplex/expr.hpp"
#include "symplex/grammar.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace symplex {

struct PolicyConfig {
    int d_model = 64;
    int ffn_hidden = 128;
    int layers = 4;
    int heads = 8;
    int relation_types = kRelationTypes;
    int d_max = 7;
    double temperature = 1.0;
    int max_resamples = 10;  // retries for degenerate trees before keeping one
};

/// A sequence the current masks would never produce.
class InvalidTrajectory : public Error {
public:
    InvalidTrajectory(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

struct Rollout {
    std::vector<Token> prefix;
    std::vector<int> actions;        // vocabulary indices
    std::vector<double> log_probs;   // per step, chosen token
    std::vector<double> entropies;   // per step, over the valid set
    int depth = 0;
    int resamples = 0;

    double log_prob() const;
};

/// Sinusoidal table, row i = position i: (sin, cos) pairs with base 10000.
Eigen::MatrixXd positional_encoding(int length, int d_model);

/// Stream for rollout `index` of a batch drawn with `seed`.
std::mt19937_64 rollout_stream(std::uint64_t seed, std::uint64_t index);

/// Decoder-only transformer over expression prefixes with tree-relative
/// attention.
///
/// Position i stands for node i of the prefix. Its input is the embedding of
/// the previous token (a begin token at i = 0) plus PosEnc(i); its parent is
/// already fixed by the partial tree, so relation codes r(i, j), j <= i, are
/// known before node i is chosen. The output row at i gives the distribution
/// of token i. Sampling reuses per-layer key/value caches; scoring builds the
/// whole sequence on a tape. Both compute the same function.
class SymFormer {
public:
    struct Layer {
        ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Parameter relation;  // relation_types x d_model, head h owns columns [h*d_head, (h+1)*d_head)
        ad::Parameter ln1_gain, ln1_bias;
        ad::Parameter w1, b1, w2, b2;
        ad::Parameter ln2_gain, ln2_bias;
    };

    SymFormer(Vocabulary vocab, PolicyConfig config, std::uint64_t seed);

    const Vocabulary& vocab() const noexcept { return vocab_; }
    const PolicyConfig& config() const noexcept { return config_; }
    int d_head() const noexcept { return config_.d_model / config_.heads; }
    int begin_token() const noexcept { return static_cast<int>(vocab_.size()); }

    /// Curriculum view: tokens outside the mask are never valid.
    void set_active(std::vector<bool> active);
    const std::vector<bool>& active() const noexcept { return active_; }
    void set_d_max(int d_max);

    std::vector<ad::Parameter*> parameters();
    std::vector<const ad::Parameter*> parameters() const;

    ad::Parameter& embedding() noexcept { return embedding_; }
    std::vector<Layer>& layers() noexcept { return layers_; }

    /// Vocabulary indices of `prefix`; throws VocabularyError.
    std::vector<int> encode(std::span<const Token> prefix) const;

    /// H0 for the given input ids (begin token allowed). Throws on empty input.
    Eigen::MatrixXd embed(std::span<const int> inputs) const;

    /// Final hidden states (one row per position) for prefix tokens, computed
    /// without a tape. Position i sees tokens < i.
    Eigen::MatrixXd hidden_states(std::span<const Token> prefix) const;

    /// Masked distribution for the token that fills the next open slot of
    /// `prefix` (empty = root).
    Eigen::VectorXd next_token_distribution(std::span<const Token> prefix) const;

    Rollout sample(std::mt19937_64& rng) const;
    std::vector<Rollout> sample_batch(int n, std::uint64_t seed, int workers = 1) const;

    /// Tape handles for every parameter; create once per tape.
    struct Bound {
        ad::Var embedding;
        std::vector<std::vector<ad::Var>> layers;  // order as in Layer
        ad::Var out_w, out_b;
    };
    Bound bind(ad::Tape& tape);

    struct Score {
        ad::Var log_prob;       // sum over steps
        ad::Var entropy_sum;    // sum over steps of H(p)
        int steps = 0;
    };
    /// Differentiable log-probability of a complete prefix under the masks.
    /// Throws InvalidTrajectory if some token is not valid at its step.
    Score score(ad::Tape& tape, const Bound& bound, std::span<const Token> prefix) const;

    /// Value of score().log_prob without keeping the tape.
    double sequence_log_prob(std::span<const Token> prefix);

private:
    struct Cache;

    Eigen::RowVectorXd step(Cache& cache, int input, int position, std::span<const int> parents) const;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> step_masks(std::span<const Token> prefix,
                                                                 std::vector<int>& parents) const;

    Vocabulary vocab_;
    PolicyConfig config_;
    std::vector<bool> active_;
    ad::Parameter embedding_;  // (|V| + 1) x d_model, last row = begin token
    std::vector<Layer> layers_;
    ad::Parameter out_w_, out_b_;
};

}  // namespace symplex
