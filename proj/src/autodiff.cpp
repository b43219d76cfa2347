#include "symplex/autodiff.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace symplex::ad {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw DimensionError(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

Tape& tape_of(const Var& a) {
    if (a.tape() == nullptr) throw std::logic_error("variable is not attached to a tape");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
    if (a.tape() != b.tape()) throw std::logic_error("variables live on different tapes");
    return tape_of(a);
}

}  // namespace

const Matrix& Var::value() const { return tape_of(*this).value(id_); }

double Var::scalar() const {
    require(rows() == 1 && cols() == 1, "scalar(): variable is not 1x1");
    return value()(0, 0);
}

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, false});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& p) {
    nodes_.push_back(Node{p.value, Matrix(), nullptr, &p, true});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Pullback pullback) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(pullback));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Pullback pullback) {
    bool needs = false;
    for (const auto& in : inputs) {
        if (in.tape() != this) throw std::logic_error("input belongs to another tape");
        needs = needs || requires_grad(in.id());
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(pullback) : nullptr, nullptr, needs});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
        node.grad = g;
    } else {
        node.grad += g;
    }
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw std::logic_error("loss belongs to another tape");
    require(loss.rows() == 1 && loss.cols() == 1, "backward(): loss must be a 1x1 scalar");
    if (spent_) throw std::logic_error("backward(): tape was already differentiated");
    spent_ = true;
    if (!requires_grad(loss.id())) return;
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (int id = loss.id(); id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.grad.size() == 0) continue;
        if (node.pullback) node.pullback(*this, id);
        if (node.param != nullptr) {
            if (node.param->grad.rows() != node.grad.rows() || node.param->grad.cols() != node.grad.cols()) {
                node.param->zero_grad();
            }
            node.param->grad += node.grad;
        }
    }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                             std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    const int ia = a.id();
    const int ib = b.id();
    return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
    });
}

Var add(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a, b, "add");
    const int ia = a.id();
    const int ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, tp.grad(self));
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a, b, "sub");
    const int ia = a.id();
    const int ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, -tp.grad(self));
    });
}

Var multiply(const Var& a, const Var& b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a, b, "multiply");
    const int ia = a.id();
    const int ib = b.id();
    return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
        if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
    });
}

Var scale(const Var& a, double s) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.record(a.value() * s, {a}, [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self) * s); });
}

Var transpose(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.record(a.value().transpose(), {a},
                    [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self).transpose()); });
}

Var gather_rows(const Var& table, std::span<const int> rows) {
    Tape& t = tape_of(table);
    const Matrix& v = table.value();
    Matrix out(static_cast<Eigen::Index>(rows.size()), v.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] >= 0 && rows[k] < v.rows(), "gather_rows: row index out of range");
        out.row(static_cast<Eigen::Index>(k)) = v.row(rows[k]);
    }
    const int it = table.id();
    std::vector<int> idx(rows.begin(), rows.end());
    return t.record(std::move(out), {table}, [it, idx = std::move(idx)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix dt = Matrix::Zero(tp.value(it).rows(), tp.value(it).cols());
        for (std::size_t k = 0; k < idx.size(); ++k) dt.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
        tp.accumulate(it, dt);
    });
}

Var add_row(const Var& a, const Var& row) {
    Tape& t = tape_of(a, row);
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols(a)");
    const int ia = a.id();
    const int ir = row.id();
    Matrix out = a.value().rowwise() + row.value().row(0);
    return t.record(std::move(out), {a, row}, [ia, ir](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        tp.accumulate(ia, g);
        if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
    });
}

Var multiply_row(const Var& a, const Var& row) {
    Tape& t = tape_of(a, row);
    require(row.rows() == 1 && row.cols() == a.cols(), "multiply_row: row must be 1 x cols(a)");
    const int ia = a.id();
    const int ir = row.id();
    Matrix out = a.value().array().rowwise() * row.value().row(0).array();
    return t.record(std::move(out), {a, row}, [ia, ir](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            tp.accumulate(ia, (g.array().rowwise() * tp.value(ir).row(0).array()).matrix());
        }
        if (tp.requires_grad(ir)) tp.accumulate(ir, g.cwiseProduct(tp.value(ia)).colwise().sum());
    });
}

Var relu(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.record(a.value().cwiseMax(0.0), {a}, [ia](Tape& tp, int self) {
        tp.accumulate(ia, (tp.value(ia).array() > 0.0).select(tp.grad(self).array(), 0.0).matrix());
    });
}

Var log(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    return t.record(a.value().array().log().matrix(), {a}, [ia](Tape& tp, int self) {
        tp.accumulate(ia, tp.grad(self).cwiseQuotient(tp.value(ia)));
    });
}

Var sum(const Var& a) {
    Tape& t = tape_of(a);
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
        const Matrix& v = tp.value(ia);
        tp.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), tp.grad(self)(0, 0)));
    });
}

Var mean(const Var& a) {
    require(a.value().size() > 0, "mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_all(std::span<const Var> terms) {
    require(!terms.empty(), "sum_all: no terms");
    Tape& t = tape_of(terms[0]);
    Matrix out = terms[0].value();
    for (std::size_t k = 1; k < terms.size(); ++k) {
        require_same_shape(terms[0], terms[k], "sum_all");
        out += terms[k].value();
    }
    std::vector<int> ids;
    for (const auto& v : terms) ids.push_back(v.id());
    return t.record(std::move(out), terms, [ids = std::move(ids)](Tape& tp, int self) {
        for (int id : ids) tp.accumulate(id, tp.grad(self));
    });
}

Var col_block(const Var& a, Eigen::Index start, Eigen::Index count) {
    Tape& t = tape_of(a);
    require(start >= 0 && count >= 0 && start + count <= a.cols(), "col_block: range out of bounds");
    const int ia = a.id();
    return t.record(a.value().middleCols(start, count), {a}, [ia, start, count](Tape& tp, int self) {
        Matrix g = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
        g.middleCols(start, count) = tp.grad(self);
        tp.accumulate(ia, g);
    });
}

Var concat_cols(std::span<const Var> blocks) {
    require(!blocks.empty(), "concat_cols: no blocks");
    Tape& t = tape_of(blocks[0]);
    Eigen::Index cols = 0;
    for (const auto& b : blocks) {
        require(b.rows() == blocks[0].rows(), "concat_cols: row mismatch");
        cols += b.cols();
    }
    Matrix out(blocks[0].rows(), cols);
    std::vector<std::pair<int, Eigen::Index>> parts;
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.middleCols(at, b.cols()) = b.value();
        parts.emplace_back(b.id(), at);
        at += b.cols();
    }
    return t.record(std::move(out), blocks, [parts = std::move(parts)](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        for (const auto& [id, offset] : parts) tp.accumulate(id, g.middleCols(offset, tp.value(id).cols()));
    });
}

Var element(const Var& a, Eigen::Index row, Eigen::Index col) {
    Tape& t = tape_of(a);
    require(row >= 0 && row < a.rows() && col >= 0 && col < a.cols(), "element: index out of range");
    const int ia = a.id();
    Matrix out(1, 1);
    out(0, 0) = a.value()(row, col);
    return t.record(std::move(out), {a}, [ia, row, col](Tape& tp, int self) {
        Matrix g = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
        g(row, col) = tp.grad(self)(0, 0);
        tp.accumulate(ia, g);
    });
}

Var gather_cols(const Var& a, const Eigen::MatrixXi& index) {
    Tape& t = tape_of(a);
    require(index.rows() == a.rows(), "gather_cols: index rows must match");
    const Matrix& v = a.value();
    Matrix out(index.rows(), index.cols());
    for (Eigen::Index i = 0; i < index.rows(); ++i) {
        for (Eigen::Index j = 0; j < index.cols(); ++j) {
            require(index(i, j) >= 0 && index(i, j) < v.cols(), "gather_cols: column index out of range");
            out(i, j) = v(i, index(i, j));
        }
    }
    const int ia = a.id();
    return t.record(std::move(out), {a}, [ia, index](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix da = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
        for (Eigen::Index i = 0; i < index.rows(); ++i) {
            for (Eigen::Index j = 0; j < index.cols(); ++j) da(i, index(i, j)) += g(i, j);
        }
        tp.accumulate(ia, da);
    });
}

Var layer_norm(const Var& a, double eps) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    const auto n = static_cast<double>(x.cols());
    Matrix y(x.rows(), x.cols());
    Eigen::VectorXd inv(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().sum() / n;
        inv(i) = 1.0 / std::sqrt(var + eps);
        y.row(i) = (x.row(i).array() - mu) * inv(i);
    }
    const int ia = a.id();
    Matrix yc = y;
    return t.record(std::move(y), {a}, [ia, yc = std::move(yc), inv, n](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double gm = g.row(i).mean();
            const double gy = g.row(i).dot(yc.row(i)) / n;
            dx.row(i) = inv(i) * (g.row(i).array() - gm - yc.row(i).array() * gy);
        }
        tp.accumulate(ia, dx);
    });
}

namespace {

Matrix softmax_rows(const Matrix& x, const Mask& keep) {
    require(keep.rows() == x.rows() && keep.cols() == x.cols(), "masked softmax: mask shape mismatch");
    Matrix p = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (keep(i, j)) m = std::max(m, x(i, j));
        }
        require(std::isfinite(m), "masked softmax: row has no unmasked entry");
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (keep(i, j)) {
                p(i, j) = std::exp(x(i, j) - m);
                z += p(i, j);
            }
        }
        p.row(i) /= z;
    }
    return p;
}

}  // namespace

Var masked_softmax(const Var& a, const Mask& keep) {
    Tape& t = tape_of(a);
    Matrix p = softmax_rows(a.value(), keep);
    const int ia = a.id();
    return t.record(p, {a}, [ia, p](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double s = p.row(i).dot(g.row(i));
            dx.row(i) = p.row(i).array() * (g.row(i).array() - s);
        }
        tp.accumulate(ia, dx);
    });
}

Var masked_log_softmax(const Var& a, const Mask& keep) {
    Tape& t = tape_of(a);
    const Matrix& x = a.value();
    Matrix p = softmax_rows(x, keep);
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (keep(i, j)) m = std::max(m, x(i, j));
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (keep(i, j)) z += std::exp(x(i, j) - m);
        }
        const double lse = m + std::log(z);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (keep(i, j)) out(i, j) = x(i, j) - lse;
        }
    }
    const int ia = a.id();
    return t.record(std::move(out), {a}, [ia, p, keep](Tape& tp, int self) {
        const Matrix& g = tp.grad(self);
        Matrix dx = Matrix::Zero(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double gs = 0.0;
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                if (keep(i, j)) gs += g(i, j);
            }
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                if (keep(i, j)) dx(i, j) = g(i, j) - p(i, j) * gs;
            }
        }
        tp.accumulate(ia, dx);
    });
}

// ---------------------------------------------------------------------------

void adam_update(Eigen::Ref<Matrix> value, const Matrix& grad, AdamMoments& moments, long step,
                 const AdamConfig& config) {
    if (moments.m.rows() != value.rows() || moments.m.cols() != value.cols()) {
        moments.m = Matrix::Zero(value.rows(), value.cols());
        moments.v = Matrix::Zero(value.rows(), value.cols());
    }
    require(grad.rows() == value.rows() && grad.cols() == value.cols(), "adam: gradient shape mismatch");
    moments.m = config.beta1 * moments.m + (1.0 - config.beta1) * grad;
    moments.v = config.beta2 * moments.v + (1.0 - config.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    value.array() -= config.lr * (moments.m.array() / c1) / ((moments.v.array() / c2).sqrt() + config.eps);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {
    if (!(config_.lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
}

void Adam::step() {
    ++step_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (p.grad.size() == 0) p.zero_grad();
        adam_update(p.value, p.grad, moments_[k], step_, config_);
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void Adam::set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
    config_.lr = lr;
}

double global_grad_norm(std::span<Parameter* const> params) {
    double sq = 0.0;
    for (const auto* p : params) {
        if (p->grad.size() > 0) sq += p->grad.squaredNorm();
    }
    return std::sqrt(sq);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (auto* p : params) p->grad *= factor;
    }
    return norm;
}

PlateauScheduler::PlateauScheduler(double factor, int patience, double threshold)
    : factor_(factor), patience_(patience), threshold_(threshold), best_(-std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double metric, Adam& optimizer) {
    const double bar = std::isfinite(best_) ? best_ * (1.0 + threshold_) : best_;
    if (metric > bar) {
        best_ = metric;
        bad_ = 0;
        return false;
    }
    if (++bad_ > patience_) {
        optimizer.set_lr(optimizer.lr() * factor_);
        bad_ = 0;
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
    nlohmann::json doc;
    doc["format"] = "symplex-checkpoint";
    doc["version"] = 1;
    auto& list = doc["parameters"] = nlohmann::json::array();
    for (const auto* p : params) {
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(p->value.size()));
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) values.push_back(p->value(i, j));
        }
        list.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"values", values}});
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << doc.dump(1) << '\n';
}

void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read checkpoint " + path.string());
    const nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.value("format", "") != "symplex-checkpoint") throw Error("not a checkpoint: " + path.string());
    for (auto* p : params) {
        bool found = false;
        for (const auto& entry : doc.at("parameters")) {
            if (entry.at("name") != p->name) continue;
            const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
            const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
            if (rows != p->value.rows() || cols != p->value.cols()) {
                throw DimensionError("checkpoint shape mismatch for " + p->name);
            }
            const auto values = entry.at("values").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(values.size()) != rows * cols) throw Error("truncated parameter " + p->name);
            for (Eigen::Index i = 0; i < rows; ++i) {
                for (Eigen::Index j = 0; j < cols; ++j) p->value(i, j) = values[static_cast<std::size_t>(i * cols + j)];
            }
            found = true;
            break;
        }
        if (!found) throw Error("checkpoint lacks parameter " + p->name);
    }
}

}  // namespace symplex::ad
