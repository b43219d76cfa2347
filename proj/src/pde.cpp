#include "symplex/pde.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace symplex {

namespace {

using Json = nlohmann::json;
using Eigen::ArrayXd;
using Eigen::MatrixXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Built-in problems, in the same format accepted by --problem-file.
constexpr const char* kCatalog = R"json([
{
  "name": "poisson2d",
  "description": "-u_xx - u_yy = -12x^2 - 4.8y^2 (source printed with solution x^4 + 1.2y^4; not self-consistent)",
  "spatial": ["x", "y"],
  "residual": "+ - neg u_xx u_yy + * 12 square x * 4.8 square y",
  "solution": "+ square square x * 1.2 square square y",
  "self_consistent": false
},
{
  "name": "advection2d",
  "description": "u_t + u_x + u_y = 0, Gaussian bump",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "+ + u_t u_x u_y",
  "initial": "exp / neg + square x square y 0.5",
  "solution": "exp / neg + square - x t square - y t 0.5"
},
{
  "name": "heat2d",
  "description": "u_t - u_xx - u_yy = 0",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "- - u_t u_xx u_yy",
  "initial": "* sin x cos y",
  "solution": "* * sin x cos y exp * -2 t"
},
{
  "name": "eikonal2d",
  "description": "u_t + |grad u| = 0",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "+ u_t sqrt + square u_x square u_y",
  "hamiltonian": "sqrt + square px square py",
  "initial": "sqrt + square x square y",
  "solution": "relu - sqrt + square x square y t"
},
{
  "name": "burgers2d",
  "description": "u_t - (u_x^2 + u_y^2)/2 = 0",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "- u_t * 0.5 + square u_x square u_y",
  "hamiltonian": "* -0.5 + square px square py",
  "initial": "+ abs x abs y",
  "solution": "+ + abs x abs y t"
},
{
  "name": "param_advection2d",
  "description": "u_t + k(u_x + u_y) = 0, pyramid initial condition",
  "spatial": ["x", "y"],
  "time": true,
  "parameter": "k",
  "residual": "+ u_t * k + u_x u_y",
  "initial": "relu - - 1 abs x abs y",
  "solution": "relu - - 1 abs - x * k t abs - y * k t"
},
{
  "name": "param_heat2d",
  "description": "u_t - k(u_xx + u_yy) = 0, exponential initial condition",
  "spatial": ["x", "y"],
  "time": true,
  "parameter": "k",
  "residual": "- u_t * k + u_xx u_yy",
  "initial": "* exp neg x exp neg y",
  "solution": "* * exp neg x exp neg y exp * * 2 k t"
},
{
  "name": "poisson_exp2d",
  "description": "-u_xx - u_yy = -exp(x) - exp(y)",
  "spatial": ["x", "y"],
  "residual": "+ - neg u_xx u_yy + exp x exp y",
  "solution": "+ exp x exp y"
},
{
  "name": "advection_sin2d",
  "description": "u_t + u_x + u_y = 0 with printed solution sin(-1.5(x - y - 2t)) (not self-consistent)",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "+ + u_t u_x u_y",
  "initial": "sin * -1.5 - x y",
  "solution": "sin * -1.5 - - x y * 2 t",
  "self_consistent": false
},
{
  "name": "heat_source2d",
  "description": "u_t - u_xx - u_yy = 2.5x + 1 + 4cos(2y)",
  "spatial": ["x", "y"],
  "time": true,
  "residual": "- - - u_t u_xx u_yy + + * 2.5 x 1 * 4 cos * 2 y",
  "initial": "- cos * 2 y * 0.5 square x",
  "solution": "+ + cos * 2 y * * 2.5 x t neg * 0.5 square x"
},
{
  "name": "hj_convex1d",
  "description": "u_t + u_x^2/2 = 0",
  "spatial": ["x"],
  "time": true,
  "residual": "+ u_t * 0.5 square u_x",
  "hamiltonian": "* 0.5 square px",
  "initial": "neg relu neg x",
  "solution": "neg relu - * 0.5 t x"
},
{
  "name": "hj_concave1d",
  "description": "u_t - u_x^2/2 = 0",
  "spatial": ["x"],
  "time": true,
  "residual": "- u_t * 0.5 square u_x",
  "hamiltonian": "* -0.5 square px",
  "initial": "abs x",
  "solution": "+ abs x * 0.5 t"
},
{
  "name": "param_advection_sin2d",
  "description": "u_t + k(u_x + u_y) = 0, u = 2 sin(x - kt) sin(y - kt)",
  "spatial": ["x", "y"],
  "time": true,
  "parameter": "k",
  "residual": "+ u_t * k + u_x u_y",
  "initial": "* 2 * sin x sin y",
  "solution": "* * 2 sin - x * k t sin - y * k t"
},
{
  "name": "param_heat_sin2d",
  "description": "u_t - k(u_xx + u_yy) = 0, u = sin(x) cos(y) exp(-2kt)",
  "spatial": ["x", "y"],
  "time": true,
  "parameter": "k",
  "residual": "- u_t * k + u_xx u_yy",
  "initial": "* sin x cos y",
  "solution": "* * sin x cos y exp * * -2 k t"
}
])json";

ExprTree parse_over(const std::string& text, const std::vector<std::string>& variables, const std::string& what) {
    try {
        return parse_expression(text, variables, NumberMode::Literal);
    } catch (const Error& e) {
        throw CatalogError(what + ": " + e.what());
    }
}

// Columns of `points` the template symbols refer to, evaluated.
MatrixXd symbol_matrix(const PdeProblem& problem, const std::vector<ArrayXd>& derivative_values,
                       const MatrixXd& points) {
    const auto& syms = problem.residual_symbols();
    MatrixXd m(points.rows(), static_cast<Eigen::Index>(syms.size()));
    std::size_t d = 0;
    for (std::size_t k = 0; k < syms.size(); ++k) {
        if (syms[k].column >= 0) {
            m.col(static_cast<Eigen::Index>(k)) = points.col(syms[k].column);
        } else {
            m.col(static_cast<Eigen::Index>(k)) = derivative_values[d++].matrix();
        }
    }
    return m;
}

bool all_finite(const ArrayXd& a) { return a.allFinite(); }

double mean_square(const ArrayXd& a) { return a.size() == 0 ? 0.0 : a.square().mean(); }

}  // namespace

// ---------------------------------------------------------------------------

PdeProblem PdeProblem::from_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw CatalogError(std::string("problem file is not valid JSON: ") + e.what());
    }
    PdeProblem p;
    try {
        p.source_ = j.dump(2);
        p.name_ = j.at("name").get<std::string>();
        p.description_ = j.value("description", "");
        p.spatial_ = j.at("spatial").get<std::vector<std::string>>();
        if (p.spatial_.empty()) throw CatalogError("problem needs at least one spatial variable");
        p.variables_ = p.spatial_;
        for (const auto& v : p.spatial_) {
            if (v.size() != 1) throw CatalogError("spatial variable names must be single letters: '" + v + "'");
        }
        if (j.value("time", false)) {
            p.time_column_ = static_cast<int>(p.variables_.size());
            p.variables_.push_back("t");
        }
        if (j.contains("parameter")) {
            if (!p.time_dependent()) throw CatalogError("a parametric problem must be time dependent");
            p.kappa_symbol_ = j.at("parameter").get<std::string>();
            p.kappa_column_ = static_cast<int>(p.variables_.size());
            p.variables_.push_back(p.kappa_symbol_);
        }
        for (std::size_t c = 0; c < p.variables_.size(); ++c) {
            Interval iv{-1.0, 1.0};
            if (static_cast<int>(c) == p.time_column_) iv = {0.0, 1.0};
            if (static_cast<int>(c) == p.kappa_column_) iv = {0.5, 2.0};
            if (j.contains("domain") && j["domain"].contains(p.variables_[c])) {
                const auto b = j["domain"][p.variables_[c]].get<std::vector<double>>();
                if (b.size() != 2 || !(b[0] < b[1])) {
                    throw CatalogError("domain for '" + p.variables_[c] + "' must be [lo, hi] with lo < hi");
                }
                iv = {b[0], b[1]};
            }
            p.domain_.push_back(iv);
        }
        p.self_consistent_ = j.value("self_consistent", true);
        if (j.contains("weights")) {
            p.weight_bc_ = j["weights"].value("bc", p.weight_bc_);
            p.weight_ic_ = j["weights"].value("ic", p.weight_ic_);
        }
        if (j.contains("counts")) {
            p.n_pde_ = j["counts"].value("pde", p.n_pde_);
            p.n_bc_ = j["counts"].value("bc", p.n_bc_);
            p.n_ic_ = j["counts"].value("ic", p.n_ic_);
        }
        if (p.n_pde_ <= 0 || p.n_bc_ <= 0 || p.n_ic_ <= 0) throw CatalogError("collocation counts must be positive");

        // residual template
        std::vector<std::string> symbols;
        try {
            p.residual_.tree = parse_template(j.at("residual").get<std::string>(), symbols);
        } catch (const Error& e) {
            throw CatalogError(std::string("residual: ") + e.what());
        }
        p.residual_.symbols = symbols;
        for (const auto& s : symbols) {
            Symbol sym{s, -1, {}};
            auto it = std::find(p.variables_.begin(), p.variables_.end(), s);
            if (it != p.variables_.end()) {
                sym.column = static_cast<int>(it - p.variables_.begin());
            } else if (s == "u") {
            } else if (s.rfind("u_", 0) == 0 && s.size() > 2) {
                for (char c : s.substr(2)) {
                    const std::string v(1, c);
                    if (std::find(p.variables_.begin(), p.variables_.end(), v) == p.variables_.end()) {
                        throw CatalogError("residual symbol '" + s + "' differentiates by unknown variable '" + v + "'");
                    }
                    sym.orders.push_back(v);
                }
            } else {
                throw CatalogError("unknown residual symbol '" + s + "'");
            }
            p.symbols_.push_back(sym);
        }
        for (const auto& s : symbols) p.partials_.push_back(diff(p.residual_.tree, s));

        if (j.contains("solution")) p.solution_ = parse_over(j["solution"].get<std::string>(), p.variables_, "solution");

        auto at_time_zero = [&](const ExprTree& t) {
            std::vector<Token> toks;
            for (const auto& tok : t.prefix) {
                toks.push_back(tok.op == Op::Variable && tok.symbol == "t" ? make_literal(0.0) : tok);
            }
            return parse_complete(std::move(toks));
        };
        if (p.time_dependent()) {
            if (j.contains("initial")) {
                p.initial_ = parse_over(j["initial"].get<std::string>(), p.variables_, "initial");
            } else if (p.solution_) {
                p.initial_ = at_time_zero(*p.solution_);
            } else {
                throw CatalogError("time-dependent problem needs an initial condition");
            }
            for (const auto& v : free_variables(p.initial_)) {
                if (v == "t") throw CatalogError("initial condition must not read t");
            }
        } else {
            p.initial_ = parse_complete({make_literal(0.0)});
        }
        if (j.contains("boundary")) {
            p.boundary_ = parse_over(j["boundary"].get<std::string>(), p.variables_, "boundary");
        } else if (p.solution_) {
            p.boundary_ = *p.solution_;
        } else {
            throw CatalogError("problem needs boundary data or an analytic solution");
        }

        if (j.contains("hamiltonian")) {
            if (!p.time_dependent()) throw CatalogError("a Hamilton-Jacobi problem must be time dependent");
            std::vector<std::string> ps;
            for (const auto& v : p.spatial_) ps.push_back("p" + v);
            p.hamiltonian_ = parse_over(j["hamiltonian"].get<std::string>(), ps, "hamiltonian");
            for (const auto& a : ps) {
                p.h_grad_.push_back(diff(*p.hamiltonian_, a));
                std::vector<ExprTree> row;
                for (const auto& b : ps) row.push_back(diff(p.h_grad_.back(), b));
                p.h_hess_.push_back(std::move(row));
            }
            for (const auto& v : p.spatial_) p.u0_grad_.push_back(diff(p.initial_, v));
        }
    } catch (const Json::exception& e) {
        throw CatalogError(std::string("problem file: ") + e.what());
    }
    return p;
}

PdeProblem PdeProblem::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CatalogError("cannot read problem file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::vector<int> PdeProblem::stages() const {
    if (!time_dependent()) return {1};
    if (!parametric()) return {1, 2};
    return {1, 2, 3};
}

StageSpec PdeProblem::stage_spec(int stage) const {
    if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
    StageSpec s;
    s.stage = stage;
    s.variables = spatial_;
    if (!time_dependent()) {
        s.pde = true;
        s.bc = true;
        return s;
    }
    if (stage == 1) {
        s.ic = true;
        return s;
    }
    s.pde = s.bc = s.ic = true;
    s.variables.push_back("t");
    if (stage == 3 && parametric()) {
        s.variables.push_back(kappa_symbol_);
        s.sample_kappa = true;
    }
    return s;
}

const std::vector<PdeProblem>& catalog() {
    static const std::vector<PdeProblem> problems = [] {
        std::vector<PdeProblem> out;
        for (const auto& entry : Json::parse(kCatalog)) out.push_back(PdeProblem::from_json(entry.dump()));
        return out;
    }();
    return problems;
}

const PdeProblem& find_problem(std::string_view name) {
    for (const auto& p : catalog()) {
        if (p.name() == name) return p;
    }
    throw CatalogError("unknown problem '" + std::string(name) + "'");
}

std::vector<std::string> catalog_names() {
    std::vector<std::string> out;
    for (const auto& p : catalog()) out.push_back(p.name());
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void fill_uniform(MatrixXd& m, int column, const Interval& iv, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(iv.lo, iv.hi);
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, column) = u(rng);
}

void fill_parameter(const PdeProblem& p, MatrixXd& m, bool sample_kappa, std::mt19937_64& rng) {
    if (!p.parametric()) return;
    if (sample_kappa) {
        fill_uniform(m, p.kappa_column(), p.domain(p.kappa_column()), rng);
    } else {
        m.col(p.kappa_column()).setOnes();
    }
}

}  // namespace

MatrixXd sample_box(const PdeProblem& problem, int n, std::mt19937_64& rng, bool fixed_kappa) {
    const auto cols = static_cast<int>(problem.variables().size());
    MatrixXd m(n, cols);
    for (int c = 0; c < cols; ++c) {
        if (c == problem.kappa_column() && fixed_kappa) {
            m.col(c).setOnes();
        } else {
            fill_uniform(m, c, problem.domain(c), rng);
        }
    }
    return m;
}

CollocationSet sample_collocation(const PdeProblem& problem, int stage, std::mt19937_64& rng) {
    const StageSpec spec = problem.stage_spec(stage);
    const int dim = problem.dimension();
    const auto cols = static_cast<Eigen::Index>(problem.variables().size());
    CollocationSet set;
    set.interior.resize(0, cols);
    set.boundary.resize(0, cols);
    set.initial.resize(0, cols);

    if (spec.pde) {
        set.interior.resize(problem.n_pde(), cols);
        for (int c = 0; c < dim; ++c) fill_uniform(set.interior, c, problem.domain(c), rng);
        if (problem.time_dependent()) {
            fill_uniform(set.interior, problem.time_column(), problem.domain(problem.time_column()), rng);
        }
        fill_parameter(problem, set.interior, spec.sample_kappa, rng);
    }
    if (spec.bc) {
        set.boundary.resize(problem.n_bc(), cols);
        for (int c = 0; c < dim; ++c) fill_uniform(set.boundary, c, problem.domain(c), rng);
        std::uniform_int_distribution<int> face(0, 2 * dim - 1);
        for (Eigen::Index i = 0; i < set.boundary.rows(); ++i) {
            const int f = face(rng);
            const Interval& iv = problem.domain(f / 2);
            set.boundary(i, f / 2) = f % 2 == 0 ? iv.lo : iv.hi;
        }
        if (problem.time_dependent()) {
            fill_uniform(set.boundary, problem.time_column(), problem.domain(problem.time_column()), rng);
        }
        fill_parameter(problem, set.boundary, spec.sample_kappa, rng);
    }
    if (spec.ic) {
        set.initial.resize(problem.n_ic(), cols);
        for (int c = 0; c < dim; ++c) fill_uniform(set.initial, c, problem.domain(c), rng);
        set.initial.col(problem.time_column()).setConstant(problem.domain(problem.time_column()).lo);
        fill_parameter(problem, set.initial, spec.sample_kappa, rng);
    }
    return set;
}

double reward(double energy) {
    if (!std::isfinite(energy) || energy < 0.0) return 0.0;
    return 1.0 / (1.0 + std::sqrt(energy));
}

// ---------------------------------------------------------------------------

EnergyModel::EnergyModel(const PdeProblem& problem, const ExprTree& tree, int stage)
    : problem_(&problem), spec_(problem.stage_spec(stage)), u_(rebind(tree, problem.variables())) {
    n_const_ = static_cast<int>(u_.constants.size());
    for (const auto& tok : u_.prefix) {
        if (tok.op == Op::Constant && (tok.index < 0 || tok.index >= n_const_)) {
            throw MalformedSequence("constant slot out of range", -1);
        }
    }
}

const ExprTree& EnergyModel::derivative(const std::vector<std::string>& orders) const {
    auto it = derivs_.find(orders);
    if (it != derivs_.end()) return it->second;
    if (orders.empty()) return derivs_.emplace(orders, u_).first->second;
    std::vector<std::string> head(orders.begin(), orders.end() - 1);
    ExprTree d = diff(derivative(head), orders.back());
    return derivs_.emplace(orders, std::move(d)).first->second;
}

const std::vector<ExprTree>& EnergyModel::constant_derivatives(const std::vector<std::string>& orders) const {
    auto it = const_derivs_.find(orders);
    if (it != const_derivs_.end()) return it->second;
    std::vector<ExprTree> out;
    const ExprTree& base = derivative(orders);
    for (int k = 0; k < n_const_; ++k) out.push_back(diff_constant(base, k));
    return const_derivs_.emplace(orders, std::move(out)).first->second;
}

namespace {

MatrixXd evaluate_columns(const std::vector<ExprTree>& trees, const MatrixXd& points, std::span<const double> c) {
    MatrixXd m(points.rows(), static_cast<Eigen::Index>(trees.size()));
    for (std::size_t k = 0; k < trees.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = evaluate(trees[k], points, c).matrix();
    return m;
}

}  // namespace

Eigen::ArrayXd EnergyModel::residual(std::span<const double> c, const MatrixXd& x) const {
    const PdeProblem& p = *problem_;
    if (x.rows() == 0) return ArrayXd(0);
    if (!p.uses_implicit_hj_loss()) {
        std::vector<ArrayXd> values;
        for (const auto& s : p.residual_symbols()) {
            if (s.column < 0) values.push_back(evaluate(derivative(s.orders), x, c));
        }
        return evaluate(p.residual().tree, symbol_matrix(p, values, x));
    }
    const int dim = p.dimension();
    const ArrayXd u = evaluate(u_, x, c);
    MatrixXd grad(x.rows(), dim);
    for (int i = 0; i < dim; ++i) grad.col(i) = evaluate(derivative({p.spatial()[static_cast<std::size_t>(i)]}), x, c).matrix();
    const ArrayXd t = x.col(p.time_column()).array();
    const ArrayXd h = evaluate(*p.hamiltonian(), grad);
    MatrixXd g(x.rows(), dim);
    for (int i = 0; i < dim; ++i) g.col(i) = evaluate(p.hamiltonian_gradient()[static_cast<std::size_t>(i)], grad).matrix();
    MatrixXd z = x;
    for (int i = 0; i < dim; ++i) z.col(i) = (x.col(i).array() - t * g.col(i).array()).matrix();
    const ArrayXd u0 = evaluate(p.initial(), z);
    const ArrayXd pg = (grad.array() * g.array()).rowwise().sum();
    ArrayXd r = u + t * h - t * pg - u0;

    // Where grad H is undefined (e.g. |p| at p = 0) use u_t + H(p).
    bool need_fallback = false;
    for (Eigen::Index i = 0; i < x.rows(); ++i) need_fallback = need_fallback || !g.row(i).allFinite();
    if (need_fallback) {
        const ArrayXd ut = evaluate(derivative({"t"}), x, c);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            if (!g.row(i).allFinite()) r(i) = ut(i) + h(i);
        }
    }
    return r;
}

EnergyReport EnergyModel::energy(std::span<const double> constants, const CollocationSet& points) const {
    EnergyReport rep;
    const auto bad = [] {
        EnergyReport r;
        r.finite = false;
        r.energy = r.pde = r.bc = r.ic = kInf;
        r.reward = 0.0;
        return r;
    };
    if (spec_.pde) {
        const ArrayXd r = residual(constants, points.interior);
        if (!all_finite(r)) return bad();
        rep.pde = mean_square(r);
    }
    if (spec_.bc) {
        const ArrayXd r = evaluate(u_, points.boundary, constants) - evaluate(problem_->boundary(), points.boundary);
        if (!all_finite(r)) return bad();
        rep.bc = mean_square(r);
    }
    if (spec_.ic) {
        const ArrayXd r = evaluate(u_, points.initial, constants) - evaluate(problem_->initial(), points.initial);
        if (!all_finite(r)) return bad();
        rep.ic = mean_square(r);
    }
    const double w_bc = spec_.pde ? problem_->weight_bc() : 1.0;
    const double w_ic = spec_.pde ? problem_->weight_ic() : 1.0;
    rep.energy = rep.pde + w_bc * rep.bc + w_ic * rep.ic;
    if (!std::isfinite(rep.energy)) return bad();
    rep.reward = reward(rep.energy);
    return rep;
}

EnergyReport EnergyModel::energy_and_gradient(std::span<const double> c, const CollocationSet& points,
                                              Eigen::VectorXd& grad) const {
    grad = Eigen::VectorXd::Zero(n_const_);
    EnergyReport rep = energy(c, points);
    if (!rep.finite || n_const_ == 0) return rep;
    const PdeProblem& p = *problem_;
    const double w_bc = spec_.pde ? p.weight_bc() : 1.0;
    const double w_ic = spec_.pde ? p.weight_ic() : 1.0;

    auto accumulate = [&](const ArrayXd& r, const MatrixXd& dr, double weight) {
        if (r.size() == 0) return;
        grad += weight * (2.0 / static_cast<double>(r.size())) * (dr.transpose() * r.matrix());
    };

    if (spec_.pde) {
        const MatrixXd& x = points.interior;
        const ArrayXd r = residual(c, x);
        MatrixXd dr = MatrixXd::Zero(x.rows(), n_const_);
        if (!p.uses_implicit_hj_loss()) {
            std::vector<ArrayXd> values;
            for (const auto& s : p.residual_symbols()) {
                if (s.column < 0) values.push_back(evaluate(derivative(s.orders), x, c));
            }
            const MatrixXd sm = symbol_matrix(p, values, x);
            const auto& syms = p.residual_symbols();
            for (std::size_t k = 0; k < syms.size(); ++k) {
                if (syms[k].column >= 0) continue;
                const ArrayXd fs = evaluate(p.residual_partials()[k], sm);
                const MatrixXd ds = evaluate_columns(constant_derivatives(syms[k].orders), x, c);
                dr += (ds.array().colwise() * fs).matrix();
            }
        } else {
            const int dim = p.dimension();
            MatrixXd pgrad(x.rows(), dim);
            for (int i = 0; i < dim; ++i) {
                pgrad.col(i) = evaluate(derivative({p.spatial()[static_cast<std::size_t>(i)]}), x, c).matrix();
            }
            const ArrayXd t = x.col(p.time_column()).array();
            MatrixXd g(x.rows(), dim);
            for (int i = 0; i < dim; ++i) g.col(i) = evaluate(p.hamiltonian_gradient()[static_cast<std::size_t>(i)], pgrad).matrix();
            MatrixXd z = x;
            for (int i = 0; i < dim; ++i) z.col(i) = (x.col(i).array() - t * g.col(i).array()).matrix();
            MatrixXd u0g(x.rows(), dim);
            for (int i = 0; i < dim; ++i) u0g.col(i) = evaluate(p.initial_gradient()[static_cast<std::size_t>(i)], z).matrix();
            std::vector<MatrixXd> hess(static_cast<std::size_t>(dim * dim));
            for (int a = 0; a < dim; ++a) {
                for (int b = 0; b < dim; ++b) {
                    hess[static_cast<std::size_t>(a * dim + b)] =
                        evaluate(p.hamiltonian_hessian()[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)], pgrad).matrix();
                }
            }
            const MatrixXd uc = evaluate_columns(constant_derivatives({}), x, c);
            std::vector<MatrixXd> pc;  // d p_i / d c, points x constants
            for (int i = 0; i < dim; ++i) pc.push_back(evaluate_columns(constant_derivatives({p.spatial()[static_cast<std::size_t>(i)]}), x, c));
            MatrixXd utc;
            for (Eigen::Index n = 0; n < x.rows(); ++n) {
                if (!g.row(n).allFinite()) {
                    if (utc.size() == 0) utc = evaluate_columns(constant_derivatives({"t"}), x, c);
                    dr.row(n) = utc.row(n);
                    continue;
                }
                for (int k = 0; k < n_const_; ++k) {
                    double val = uc(n, k);
                    for (int a = 0; a < dim; ++a) {
                        double hp = 0.0;  // (Hess * p_c)_a
                        for (int b = 0; b < dim; ++b) hp += hess[static_cast<std::size_t>(a * dim + b)](n, 0) * pc[static_cast<std::size_t>(b)](n, k);
                        val += t(n) * (u0g(n, a) - pgrad(n, a)) * hp;
                    }
                    dr(n, k) = val;
                }
            }
        }
        if (!dr.allFinite()) return rep;
        accumulate(r, dr, 1.0);
    }
    if (spec_.bc) {
        const MatrixXd& x = points.boundary;
        const ArrayXd r = evaluate(u_, x, c) - evaluate(p.boundary(), x);
        accumulate(r, evaluate_columns(constant_derivatives({}), x, c), w_bc);
    }
    if (spec_.ic) {
        const MatrixXd& x = points.initial;
        const ArrayXd r = evaluate(u_, x, c) - evaluate(p.initial(), x);
        accumulate(r, evaluate_columns(constant_derivatives({}), x, c), w_ic);
    }
    if (!grad.allFinite()) grad.setZero();
    return rep;
}

EnergyReport energy(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem, int stage,
                    const CollocationSet& points) {
    return EnergyModel(problem, tree, stage).energy(constants, points);
}

double hj_implicit_residual(const PdeProblem& problem, const ExprTree& tree, std::span<const double> constants,
                            const MatrixXd& points) {
    if (!problem.uses_implicit_hj_loss()) throw CatalogError(problem.name() + " has no Hamiltonian");
    const EnergyModel model(problem, tree, problem.stages().back());
    const ArrayXd r = model.residual(constants, points);
    if (!all_finite(r)) return kInf;
    return mean_square(r);
}

// ---------------------------------------------------------------------------

MatrixXd evaluation_grid(const PdeProblem& problem) {
    std::vector<std::vector<double>> axes;
    auto linspace = [](const Interval& iv, int n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = iv.lo + (iv.hi - iv.lo) * i / (n - 1);
        return v;
    };
    for (int c = 0; c < static_cast<int>(problem.variables().size()); ++c) {
        int n = 64;
        if (c == problem.time_column()) n = 16;
        if (c == problem.kappa_column()) n = 8;
        axes.push_back(linspace(problem.domain(c), n));
    }
    Eigen::Index total = 1;
    for (const auto& a : axes) total *= static_cast<Eigen::Index>(a.size());
    MatrixXd grid(total, static_cast<Eigen::Index>(axes.size()));
    for (Eigen::Index r = 0; r < total; ++r) {
        Eigen::Index rest = r;
        for (std::size_t c = axes.size(); c-- > 0;) {
            const auto n = static_cast<Eigen::Index>(axes[c].size());
            grid(r, static_cast<Eigen::Index>(c)) = axes[c][static_cast<std::size_t>(rest % n)];
            rest /= n;
        }
    }
    return grid;
}

double mse(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem, const MatrixXd& grid) {
    if (!problem.solution()) throw CatalogError(problem.name() + " has no analytic solution");
    const ExprTree u = rebind(tree, problem.variables());
    const ArrayXd diff = evaluate(u, grid, constants) - evaluate(*problem.solution(), grid);
    if (!diff.allFinite()) return kInf;
    return diff.square().mean();
}

double mse(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem) {
    static thread_local std::map<std::string, MatrixXd> grids;
    auto it = grids.find(problem.name() + "\n" + problem.source());
    if (it == grids.end()) it = grids.emplace(problem.name() + "\n" + problem.source(), evaluation_grid(problem)).first;
    return mse(tree, constants, problem, it->second);
}

bool srr_check(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem) {
    if (!problem.solution()) throw CatalogError(problem.name() + " has no analytic solution");
    ExprTree folded = tree;
    folded.constants.assign(constants.begin(), constants.end());
    if (skeleton(folded) != skeleton(*problem.solution())) return false;
    return mse(tree, constants, problem) < 1e-8;
}

}  // namespace symplex
