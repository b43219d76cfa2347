#include "symplex/policy.hpp"

#include "symplex/parallel.hpp"

#include <cmath>
#include <numeric>

namespace symplex {

namespace {

using Matrix = Eigen::MatrixXd;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

constexpr double kLayerNormEps = 1e-5;

Matrix xavier(std::mt19937_64& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(fan_in, fan_out);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Matrix uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Eigen::RowVectorXd layer_norm_row(const Eigen::RowVectorXd& x, const Matrix& gain, const Matrix& bias) {
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    return ((x.array() - mu) * inv * gain.row(0).array() + bias.row(0).array()).matrix();
}

// Masked softmax of a logit row; entries outside `mask` are exactly 0.
Eigen::VectorXd masked_probs(const Eigen::RowVectorXd& logits, const std::vector<bool>& mask) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) m = std::max(m, logits(static_cast<Eigen::Index>(k)));
    }
    Eigen::VectorXd p = Eigen::VectorXd::Zero(logits.size());
    double z = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        const auto i = static_cast<Eigen::Index>(k);
        p(i) = std::exp(logits(i) - m);
        z += p(i);
    }
    return p / z;
}

double masked_log_prob(const Eigen::RowVectorXd& logits, const std::vector<bool>& mask, int pick) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) m = std::max(m, logits(static_cast<Eigen::Index>(k)));
    }
    double z = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) z += std::exp(logits(static_cast<Eigen::Index>(k)) - m);
    }
    return logits(pick) - m - std::log(z);
}

double entropy_of(const Eigen::VectorXd& p) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        if (p(k) > 0.0) h -= p(k) * std::log(p(k));
    }
    return std::max(0.0, h);
}

}  // namespace

double Rollout::log_prob() const { return std::accumulate(log_probs.begin(), log_probs.end(), 0.0); }

Eigen::MatrixXd positional_encoding(int length, int d_model) {
    if (length <= 0) throw std::invalid_argument("positional encoding needs a positive length");
    if (d_model <= 0 || d_model % 2 != 0) throw std::invalid_argument("positional encoding needs an even width");
    Matrix pe(length, d_model);
    for (int i = 0; i < length; ++i) {
        for (int k = 0; k < d_model / 2; ++k) {
            const double angle = i / std::pow(10000.0, 2.0 * k / d_model);
            pe(i, 2 * k) = std::sin(angle);
            pe(i, 2 * k + 1) = std::cos(angle);
        }
    }
    return pe;
}

std::mt19937_64 rollout_stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------

SymFormer::SymFormer(Vocabulary vocab, PolicyConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config), active_(vocab_.full_view()) {
    if (config_.heads <= 0 || config_.d_model % config_.heads != 0) {
        throw std::invalid_argument("d_model must be divisible by heads");
    }
    if (config_.relation_types != kRelationTypes) throw std::invalid_argument("relation_types must be 6");
    if (config_.d_max < 1) throw std::invalid_argument("d_max must be positive");
    if (!(config_.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");

    std::mt19937_64 rng(seed);
    const Eigen::Index d = config_.d_model;
    const Eigen::Index f = config_.ffn_hidden;
    const auto v = static_cast<Eigen::Index>(vocab_.size());
    embedding_ = ad::Parameter("embedding", xavier(rng, v + 1, d));
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        layers_.push_back(Layer{
            {p + "wq", xavier(rng, d, d)},
            {p + "bq", Matrix::Zero(1, d)},
            {p + "wk", xavier(rng, d, d)},
            {p + "bk", Matrix::Zero(1, d)},
            {p + "wv", xavier(rng, d, d)},
            {p + "bv", Matrix::Zero(1, d)},
            {p + "wo", xavier(rng, d, d)},
            {p + "bo", Matrix::Zero(1, d)},
            {p + "relation", uniform(rng, config_.relation_types, d, 0.05)},
            {p + "ln1_gain", Matrix::Ones(1, d)},
            {p + "ln1_bias", Matrix::Zero(1, d)},
            {p + "w1", xavier(rng, d, f)},
            {p + "b1", Matrix::Zero(1, f)},
            {p + "w2", xavier(rng, f, d)},
            {p + "b2", Matrix::Zero(1, d)},
            {p + "ln2_gain", Matrix::Ones(1, d)},
            {p + "ln2_bias", Matrix::Zero(1, d)},
        });
    }
    out_w_ = ad::Parameter("out_w", xavier(rng, d, v));
    out_b_ = ad::Parameter("out_b", Matrix::Zero(1, v));
}

void SymFormer::set_active(std::vector<bool> active) {
    if (active.size() != vocab_.size()) throw std::invalid_argument("active mask size must match the vocabulary");
    active_ = std::move(active);
}

void SymFormer::set_d_max(int d_max) {
    if (d_max < 1) throw std::invalid_argument("d_max must be positive");
    config_.d_max = d_max;
}

std::vector<ad::Parameter*> SymFormer::parameters() {
    std::vector<ad::Parameter*> out{&embedding_};
    for (auto& L : layers_) {
        for (auto* p : {&L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo, &L.relation, &L.ln1_gain,
                        &L.ln1_bias, &L.w1, &L.b1, &L.w2, &L.b2, &L.ln2_gain, &L.ln2_bias}) {
            out.push_back(p);
        }
    }
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
}

std::vector<const ad::Parameter*> SymFormer::parameters() const {
    auto mut = const_cast<SymFormer*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<int> SymFormer::encode(std::span<const Token> prefix) const {
    std::vector<int> ids;
    ids.reserve(prefix.size());
    for (const auto& tok : prefix) ids.push_back(vocab_.index_of(tok.symbol));
    return ids;
}

Eigen::MatrixXd SymFormer::embed(std::span<const int> inputs) const {
    const auto n = static_cast<int>(inputs.size());
    Matrix h = positional_encoding(n, config_.d_model);
    for (int i = 0; i < n; ++i) {
        const int id = inputs[static_cast<std::size_t>(i)];
        if (id < 0 || id > begin_token()) throw VocabularyError("token id out of range");
        h.row(i) += embedding_.value.row(id);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Incremental inference

struct SymFormer::Cache {
    std::vector<Matrix> keys;    // per layer, rows = positions so far (capacity may exceed)
    std::vector<Matrix> values;
    int length = 0;
    Eigen::MatrixXd pe;
};

Eigen::RowVectorXd SymFormer::step(Cache& cache, int input, int position, std::span<const int> parents) const {
    const int d = config_.d_model;
    const int dh = d_head();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    if (cache.keys.empty()) {
        cache.keys.assign(layers_.size(), Matrix(16, d));
        cache.values.assign(layers_.size(), Matrix(16, d));
    }
    if (position >= cache.pe.rows()) cache.pe = positional_encoding(std::max(2 * position + 2, 16), d);
    if (position >= cache.keys[0].rows()) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            cache.keys[l].conservativeResize(2 * position + 2, d);
            cache.values[l].conservativeResize(2 * position + 2, d);
        }
    }

    std::vector<int> rel(static_cast<std::size_t>(position) + 1);
    for (int j = 0; j <= position; ++j) rel[static_cast<std::size_t>(j)] = relation_code(parents, position, j);

    Eigen::RowVectorXd x = embedding_.value.row(input) + cache.pe.row(position);
    Eigen::VectorXd scores(position + 1);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& L = layers_[l];
        const Eigen::RowVectorXd q = x * L.wq.value + L.bq.value;
        cache.keys[l].row(position) = x * L.wk.value + L.bk.value;
        cache.values[l].row(position) = x * L.wv.value + L.bv.value;
        const auto K = cache.keys[l].topRows(position + 1);
        const auto V = cache.values[l].topRows(position + 1);

        Eigen::RowVectorXd attended(d);
        for (int h = 0; h < config_.heads; ++h) {
            const auto qh = q.segment(h * dh, dh);
            const Eigen::VectorXd rq = L.relation.value.middleCols(h * dh, dh) * qh.transpose();
            scores = K.middleCols(h * dh, dh) * qh.transpose();
            for (int j = 0; j <= position; ++j) {
                scores(j) = (scores(j) + rq(rel[static_cast<std::size_t>(j)])) * inv_sqrt;
            }
            const double m = scores.maxCoeff();
            Eigen::VectorXd p = (scores.array() - m).exp().matrix();
            p /= p.sum();
            attended.segment(h * dh, dh) = p.transpose() * V.middleCols(h * dh, dh);
        }
        const Eigen::RowVectorXd a = attended * L.wo.value + L.bo.value;
        x = layer_norm_row(x + a, L.ln1_gain.value, L.ln1_bias.value);
        const Eigen::RowVectorXd hidden = (x * L.w1.value + L.b1.value).cwiseMax(0.0);
        const Eigen::RowVectorXd ff = hidden * L.w2.value + L.b2.value;
        x = layer_norm_row(x + ff, L.ln2_gain.value, L.ln2_bias.value);
    }
    cache.length = position + 1;
    return x;
}

Eigen::MatrixXd SymFormer::hidden_states(std::span<const Token> prefix) const {
    if (prefix.empty()) throw std::invalid_argument("hidden_states needs a non-empty prefix");
    const auto ids = encode(prefix);
    const auto parents = build_partial_ast(prefix).parent();
    Cache cache;
    Matrix out(static_cast<Eigen::Index>(prefix.size()), config_.d_model);
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const int input = i == 0 ? begin_token() : ids[i - 1];
        out.row(static_cast<Eigen::Index>(i)) = step(cache, input, static_cast<int>(i), parents);
    }
    return out;
}

Eigen::VectorXd SymFormer::next_token_distribution(std::span<const Token> prefix) const {
    const auto ids = encode(prefix);
    PartialAst partial;
    Cache cache;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const int input = i == 0 ? begin_token() : ids[i - 1];
        step(cache, input, static_cast<int>(i), partial.parents_with_frontier());
        partial.push(prefix[i]);
    }
    if (partial.complete()) throw std::logic_error("next_token_distribution: prefix is already complete");
    const int input = prefix.empty() ? begin_token() : ids.back();
    const auto hidden = step(cache, input, static_cast<int>(prefix.size()), partial.parents_with_frontier());
    const Eigen::RowVectorXd logits = (hidden * out_w_.value + out_b_.value) / config_.temperature;
    return masked_probs(logits, valid_next_tokens(partial, vocab_, config_.d_max, active_));
}

Rollout SymFormer::sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Rollout r;
    for (int attempt = 0; attempt <= config_.max_resamples; ++attempt) {
        r = Rollout{};
        r.resamples = attempt;
        PartialAst partial;
        Cache cache;
        int input = begin_token();
        while (!partial.complete()) {
            const int position = static_cast<int>(partial.size());
            const auto hidden = step(cache, input, position, partial.parents_with_frontier());
            const Eigen::RowVectorXd logits = (hidden * out_w_.value + out_b_.value) / config_.temperature;
            const auto mask = valid_next_tokens(partial, vocab_, config_.d_max, active_);
            const Eigen::VectorXd p = masked_probs(logits, mask);

            const double u = unit(rng);
            double acc = 0.0;
            int pick = -1;
            for (Eigen::Index k = 0; k < p.size(); ++k) {
                if (!mask[static_cast<std::size_t>(k)]) continue;
                pick = static_cast<int>(k);
                acc += p(k);
                if (u < acc) break;
            }
            r.actions.push_back(pick);
            r.log_probs.push_back(masked_log_prob(logits, mask, pick));
            r.entropies.push_back(entropy_of(p));
            const Token& tok = vocab_[static_cast<std::size_t>(pick)];
            r.prefix.push_back(tok);
            partial.push(tok);
            input = pick;
        }
        const ExprTree tree = parse_complete(r.prefix);
        r.depth = tree.depth();
        if (!is_degenerate(tree)) break;
    }
    return r;
}

std::vector<Rollout> SymFormer::sample_batch(int n, std::uint64_t seed, int workers) const {
    std::vector<Rollout> out(static_cast<std::size_t>(std::max(0, n)));
    parallel_for(out.size(), workers, [&](std::size_t i) {
        auto rng = rollout_stream(seed, i);
        out[i] = sample(rng);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Tape forward

SymFormer::Bound SymFormer::bind(ad::Tape& tape) {
    Bound b;
    b.embedding = tape.parameter(embedding_);
    for (auto& L : layers_) {
        std::vector<ad::Var> vars;
        for (auto* p : {&L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo, &L.relation, &L.ln1_gain,
                        &L.ln1_bias, &L.w1, &L.b1, &L.w2, &L.b2, &L.ln2_gain, &L.ln2_bias}) {
            vars.push_back(tape.parameter(*p));
        }
        b.layers.push_back(std::move(vars));
    }
    b.out_w = tape.parameter(out_w_);
    b.out_b = tape.parameter(out_b_);
    return b;
}

BoolArray SymFormer::step_masks(std::span<const Token> prefix, std::vector<int>& parents) const {
    const auto n = static_cast<Eigen::Index>(prefix.size());
    BoolArray masks(n, static_cast<Eigen::Index>(vocab_.size()));
    PartialAst partial;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tok = prefix[static_cast<std::size_t>(i)];
        if (partial.complete()) {
            throw InvalidTrajectory("token '" + tok.symbol + "' follows a complete expression", static_cast<int>(i));
        }
        const auto mask = valid_next_tokens(partial, vocab_, config_.d_max, active_);
        for (std::size_t k = 0; k < mask.size(); ++k) masks(i, static_cast<Eigen::Index>(k)) = mask[k];
        const int id = vocab_.index_of(tok.symbol);
        if (!mask[static_cast<std::size_t>(id)]) {
            throw InvalidTrajectory("token '" + tok.symbol + "' is not valid at step " + std::to_string(i),
                                    static_cast<int>(i));
        }
        partial.push(tok);
    }
    if (!partial.complete()) throw InvalidTrajectory("sequence is incomplete", static_cast<int>(n));
    parents = partial.parent();
    return masks;
}

SymFormer::Score SymFormer::score(ad::Tape& tape, const Bound& bound, std::span<const Token> prefix) const {
    using namespace ad;
    if (prefix.empty()) throw InvalidTrajectory("empty sequence", 0);
    std::vector<int> parents;
    const BoolArray masks = step_masks(prefix, parents);
    const auto ids = encode(prefix);
    const auto n = static_cast<Eigen::Index>(prefix.size());
    const int d = config_.d_model;
    const int dh = d_head();

    std::vector<int> inputs{begin_token()};
    inputs.insert(inputs.end(), ids.begin(), ids.end() - 1);
    Var h = add(gather_rows(bound.embedding, inputs), tape.constant(positional_encoding(static_cast<int>(n), d)));

    const Eigen::MatrixXi rel = relation_matrix(parents);
    BoolArray causal(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) causal(i, j) = j <= i;
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    for (const auto& P : bound.layers) {
        const Var q = add_row(matmul(h, P[0]), P[1]);
        const Var k = add_row(matmul(h, P[2]), P[3]);
        const Var v = add_row(matmul(h, P[4]), P[5]);
        std::vector<Var> heads;
        for (int hd = 0; hd < config_.heads; ++hd) {
            const Var qh = col_block(q, hd * dh, dh);
            const Var kh = col_block(k, hd * dh, dh);
            const Var vh = col_block(v, hd * dh, dh);
            const Var rh = col_block(P[8], hd * dh, dh);
            const Var content = matmul(qh, transpose(kh));
            const Var structural = gather_cols(matmul(qh, transpose(rh)), rel);
            const Var attn = masked_softmax(scale(content + structural, inv_sqrt), causal);
            heads.push_back(matmul(attn, vh));
        }
        const Var a = add_row(matmul(concat_cols(heads), P[6]), P[7]);
        h = add_row(multiply_row(layer_norm(h + a, kLayerNormEps), P[9]), P[10]);
        const Var ff = add_row(matmul(relu(add_row(matmul(h, P[11]), P[12])), P[13]), P[14]);
        h = add_row(multiply_row(layer_norm(h + ff, kLayerNormEps), P[15]), P[16]);
    }
    const Var logits = scale(add_row(matmul(h, bound.out_w), bound.out_b), 1.0 / config_.temperature);
    const Var logp = masked_log_softmax(logits, masks);
    const Var probs = masked_softmax(logits, masks);

    Eigen::MatrixXi chosen(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) chosen(i, 0) = ids[static_cast<std::size_t>(i)];
    Score s;
    s.log_prob = sum(gather_cols(logp, chosen));
    s.entropy_sum = scale(sum(multiply(probs, logp)), -1.0);
    s.steps = static_cast<int>(n);
    return s;
}

double SymFormer::sequence_log_prob(std::span<const Token> prefix) {
    ad::Tape tape;
    const Bound b = bind(tape);
    return score(tape, b, prefix).log_prob.scalar();
}

}  // namespace symplex
