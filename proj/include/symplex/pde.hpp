#pragma once

#include "symplex/expr.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace symplex {

class CatalogError : public Error {
public:
    using Error::Error;
};

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
};

/// Which loss terms a curriculum stage uses and which variables it may read.
struct StageSpec {
    int stage = 1;
    std::vector<std::string> variables;  // candidate vocabulary for this stage
    bool pde = false;
    bool bc = false;
    bool ic = false;
    bool sample_kappa = false;  // otherwise kappa = 1
};

/// A PDE with its side conditions. Point matrices always carry one column per
/// entry of variables(): spatial coordinates, then t (if time dependent),
/// then the parameter (if parametric).
///
/// The residual is a prefix template over "u", derivative symbols "u_x",
/// "u_xy", "u_t", ... and the problem variables; it must vanish for a
/// solution. Hamilton-Jacobi problems (u_t + H(grad u) = 0) additionally carry
/// H as a template over "px", "py", ... and use the implicit characteristic
/// loss instead of the residual.
class PdeProblem {
public:
    struct Template {
        ExprTree tree;
        std::vector<std::string> symbols;
    };

    /// A symbol of the residual template: a problem variable (column >= 0)
    /// or a derivative of u (orders lists the variables differentiated by).
    struct Symbol {
        std::string name;
        int column = -1;
        std::vector<std::string> orders;
    };

    /// Builds from a JSON problem definition. Throws CatalogError.
    static PdeProblem from_json(const std::string& text);
    static PdeProblem from_file(const std::filesystem::path& path);

    const std::string& name() const noexcept { return name_; }
    const std::string& description() const noexcept { return description_; }
    const std::vector<std::string>& spatial() const noexcept { return spatial_; }
    const std::vector<std::string>& variables() const noexcept { return variables_; }
    int dimension() const noexcept { return static_cast<int>(spatial_.size()); }
    bool time_dependent() const noexcept { return time_column_ >= 0; }
    bool parametric() const noexcept { return kappa_column_ >= 0; }
    int time_column() const noexcept { return time_column_; }
    int kappa_column() const noexcept { return kappa_column_; }
    const std::string& kappa_symbol() const noexcept { return kappa_symbol_; }
    const Interval& domain(int column) const { return domain_.at(static_cast<std::size_t>(column)); }
    bool uses_implicit_hj_loss() const noexcept { return hamiltonian_.has_value(); }
    bool self_consistent() const noexcept { return self_consistent_; }

    double weight_bc() const noexcept { return weight_bc_; }
    double weight_ic() const noexcept { return weight_ic_; }
    int n_pde() const noexcept { return n_pde_; }
    int n_bc() const noexcept { return n_bc_; }
    int n_ic() const noexcept { return n_ic_; }

    const Template& residual() const noexcept { return residual_; }
    const std::vector<Symbol>& residual_symbols() const noexcept { return symbols_; }
    /// d(residual template)/d(symbol k), same order as residual_symbols().
    const std::vector<ExprTree>& residual_partials() const noexcept { return partials_; }
    const ExprTree& initial() const noexcept { return initial_; }
    const ExprTree& boundary() const noexcept { return boundary_; }
    const std::optional<ExprTree>& solution() const noexcept { return solution_; }

    /// H over p columns (one per spatial variable), its gradient and Hessian.
    const std::optional<ExprTree>& hamiltonian() const noexcept { return hamiltonian_; }
    const std::vector<ExprTree>& hamiltonian_gradient() const noexcept { return h_grad_; }
    const std::vector<std::vector<ExprTree>>& hamiltonian_hessian() const noexcept { return h_hess_; }
    /// d u0 / d x_i over problem variables.
    const std::vector<ExprTree>& initial_gradient() const noexcept { return u0_grad_; }

    /// Stage indices this problem runs: {1} without time, {1, 2} without a
    /// parameter, {1, 2, 3} otherwise.
    std::vector<int> stages() const;
    StageSpec stage_spec(int stage) const;

    /// The JSON this problem was read from.
    const std::string& source() const noexcept { return source_; }

private:
    std::string name_;
    std::string description_;
    std::string source_;
    std::vector<std::string> spatial_;
    std::vector<std::string> variables_;
    std::vector<Interval> domain_;
    int time_column_ = -1;
    int kappa_column_ = -1;
    std::string kappa_symbol_;
    bool self_consistent_ = true;
    double weight_bc_ = 10.0;
    double weight_ic_ = 10.0;
    int n_pde_ = 200;
    int n_bc_ = 80;
    int n_ic_ = 80;
    Template residual_;
    std::vector<Symbol> symbols_;
    std::vector<ExprTree> partials_;
    ExprTree initial_;
    ExprTree boundary_;
    std::optional<ExprTree> solution_;
    std::optional<ExprTree> hamiltonian_;
    std::vector<ExprTree> h_grad_;
    std::vector<std::vector<ExprTree>> h_hess_;
    std::vector<ExprTree> u0_grad_;
};

/// Built-in problems, in catalog order.
const std::vector<PdeProblem>& catalog();
const PdeProblem& find_problem(std::string_view name);
std::vector<std::string> catalog_names();

// ---------------------------------------------------------------------------

struct CollocationSet {
    Eigen::MatrixXd interior;
    Eigen::MatrixXd boundary;
    Eigen::MatrixXd initial;
};

/// Uniform draws for the loss terms the stage uses; unused sets are empty.
CollocationSet sample_collocation(const PdeProblem& problem, int stage, std::mt19937_64& rng);

/// Uniform points in the full space-time-parameter box.
Eigen::MatrixXd sample_box(const PdeProblem& problem, int n, std::mt19937_64& rng, bool fixed_kappa = false);

struct EnergyReport {
    double energy = 0.0;
    double pde = 0.0;
    double bc = 0.0;
    double ic = 0.0;
    double reward = 0.0;
    bool finite = true;
};

/// 1 / (1 + sqrt(E)); non-finite or negative energy gives 0.
double reward(double energy);

/// Candidate compiled against a problem and stage: holds the symbolic
/// derivatives the loss needs and, on demand, their constant derivatives.
class EnergyModel {
public:
    /// `tree` may read any problem variable; it is rebound to the problem's
    /// columns. Throws MissingBinding for a foreign variable.
    EnergyModel(const PdeProblem& problem, const ExprTree& tree, int stage);

    const PdeProblem& problem() const noexcept { return *problem_; }
    const StageSpec& spec() const noexcept { return spec_; }
    const ExprTree& tree() const noexcept { return u_; }
    int constant_count() const noexcept { return n_const_; }

    EnergyReport energy(std::span<const double> constants, const CollocationSet& points) const;

    /// Energy and dE/dc. `grad` is resized to the constant count; it is left
    /// zero when the energy is non-finite.
    EnergyReport energy_and_gradient(std::span<const double> constants, const CollocationSet& points,
                                     Eigen::VectorXd& grad) const;

    /// Interior residual per point (implicit characteristic residual for HJ
    /// problems); NaN where evaluation fails.
    Eigen::ArrayXd residual(std::span<const double> constants, const Eigen::MatrixXd& points) const;

private:
    const ExprTree& derivative(const std::vector<std::string>& orders) const;
    const std::vector<ExprTree>& constant_derivatives(const std::vector<std::string>& orders) const;

    const PdeProblem* problem_;
    StageSpec spec_;
    ExprTree u_;
    int n_const_ = 0;
    std::vector<int> slots_;  // distinct constant slots
    mutable std::map<std::vector<std::string>, ExprTree> derivs_;
    mutable std::map<std::vector<std::string>, std::vector<ExprTree>> const_derivs_;
};

EnergyReport energy(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem, int stage,
                    const CollocationSet& points);

/// Mean squared implicit characteristic residual on interior points.
double hj_implicit_residual(const PdeProblem& problem, const ExprTree& tree, std::span<const double> constants,
                            const Eigen::MatrixXd& points);

/// Deterministic evaluation grid: 64 points per spatial axis, 16 time
/// slices and 8 parameter values where applicable.
Eigen::MatrixXd evaluation_grid(const PdeProblem& problem);

/// Mean squared error against the analytic solution on `grid`; +inf when
/// the candidate is non-finite anywhere. Throws CatalogError without a
/// registered solution.
double mse(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem,
           const Eigen::MatrixXd& grid);
double mse(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem);

/// Skeleton match with the analytic solution and MSE below 1e-8.
bool srr_check(const ExprTree& tree, std::span<const double> constants, const PdeProblem& problem);

}  // namespace symplex
