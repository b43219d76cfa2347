#pragma once

#include "symplex/expr.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

/// Define-by-run reverse-mode differentiation over dense double matrices.
///
/// A Tape records every operation of one forward pass; `backward` walks it
/// once in reverse creation order (a valid reverse topological order, since
/// inputs are always created before outputs) and accumulates into the
/// Parameters used as leaves. Tapes are single-use and single-threaded;
/// distinct tapes may run concurrently as long as they only read parameter
/// values.
namespace symplex::ad {

using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Trainable leaf. `grad` accumulates across backward passes until zeroed.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;

    Tape* tape() const noexcept { return tape_; }
    int id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Pullback = std::function<void(Tape&, int self)>;

    Var constant(Matrix value);
    Var parameter(Parameter& p);

    /// Seeds d(loss)/d(loss) = 1 and propagates. The loss must be 1x1 and a
    /// tape supports one backward pass.
    void backward(const Var& loss);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    /// Gradient of node `id`; zero-sized when nothing reached it.
    const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds a node. `pullback` runs during backward when the node needs a
    /// gradient; it reads grad(self) and calls accumulate on its inputs.
    Var record(Matrix value, std::initializer_list<Var> inputs, Pullback pullback);
    Var record(Matrix value, std::span<const Var> inputs, Pullback pullback);

    void accumulate(int id, const Matrix& g);
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Pullback pullback;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool spent_ = false;
};

// Elementary operations. All throw DimensionError on shape mismatch.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var multiply(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var transpose(const Var& a);
Var gather_rows(const Var& table, std::span<const int> rows);
Var add_row(const Var& a, const Var& row);       // broadcast a 1xC row over a
Var multiply_row(const Var& a, const Var& row);  // elementwise with a broadcast row
Var relu(const Var& a);
Var log(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_all(std::span<const Var> terms);  // elementwise sum of same-shaped vars
Var col_block(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> blocks);
Var element(const Var& a, Eigen::Index row, Eigen::Index col);
/// out(i, j) = a(i, index(i, j)).
Var gather_cols(const Var& a, const Eigen::MatrixXi& index);

/// Row-wise (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm(const Var& a, double eps = 1e-5);

/// Row-wise softmax restricted to entries where `keep` is true; other
/// entries get exactly zero probability and zero gradient.
Var masked_softmax(const Var& a, const Mask& keep);
/// Row-wise log-softmax over kept entries; masked entries are 0.
Var masked_log_softmax(const Var& a, const Mask& keep);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Optimisation

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Matrix m;
    Matrix v;
};

/// One bias-corrected Adam update of `value`; `step` counts from 1.
void adam_update(Eigen::Ref<Matrix> value, const Matrix& grad, AdamMoments& moments, long step,
                 const AdamConfig& config);

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig config = {});

    void step();
    void zero_grad();

    double lr() const noexcept { return config_.lr; }
    void set_lr(double lr);
    long steps() const noexcept { return step_; }
    const std::vector<Parameter*>& params() const noexcept { return params_; }

private:
    std::vector<Parameter*> params_;
    std::vector<AdamMoments> moments_;
    AdamConfig config_;
    long step_ = 0;
};

double global_grad_norm(std::span<Parameter* const> params);

/// Rescales all gradients so their joint l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// Multiplies the learning rate by `factor` once the tracked metric (higher
/// is better) has failed to improve for more than `patience` consecutive
/// checks. Improvement means exceeding best * (1 + threshold).
class PlateauScheduler {
public:
    PlateauScheduler(double factor = 0.9, int patience = 10, double threshold = 1e-4);

    /// Returns true when the learning rate was reduced.
    bool step(double metric, Adam& optimizer);

    double best() const noexcept { return best_; }
    int bad_checks() const noexcept { return bad_; }

private:
    double factor_;
    int patience_;
    double threshold_;
    double best_;
    int bad_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON {"format": "symplex-checkpoint", "version": 1,
// "parameters": [{"name", "shape": [rows, cols], "values": [row-major]}]}

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);

/// Loads values by name; every listed parameter must be present with a
/// matching shape.
void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

}  // namespace symplex::ad
