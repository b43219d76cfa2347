// Command-line entry point: solve, eval-expr, report, sample.

#include "symplex/runner.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

using namespace symplex;

namespace {

constexpr int kUsage = 2;
constexpr int kFailure = 3;

class UsageError : public Error {
public:
    using Error::Error;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

PdeProblem resolve_problem(const std::string& name, const std::string& file) {
    if (name.empty() && file.empty()) throw UsageError("one of --problem or --problem-file is required");
    if (!name.empty() && !file.empty()) throw UsageError("--problem and --problem-file are exclusive");
    try {
        return load_problem(name, file.empty() ? std::nullopt : std::optional<std::filesystem::path>(file));
    } catch (const CatalogError& e) {
        std::ostringstream msg;
        msg << e.what() << "\navailable problems:";
        for (const auto& n : catalog_names()) msg << "\n  " << n;
        throw UsageError(msg.str());
    }
}

struct Common {
    std::string problem;
    std::string problem_file;
    std::uint64_t seed = 0;
    int d_max = PolicyConfig{}.d_max;
    std::string ops;
    std::optional<int> stage;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--problem", c.problem, "catalog problem name");
    cmd->add_option("--problem-file", c.problem_file, "problem definition (JSON)");
    cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
    cmd->add_option("--d-max", c.d_max, "maximum expression depth")->check(CLI::Range(1, 32))->capture_default_str();
    cmd->add_option("--ops", c.ops, "comma-separated operators (default +,-,*,/,sin,cos,exp)");
    cmd->add_option("--stage", c.stage, "run a single curriculum stage")->check(CLI::Range(1, 3));
}

std::vector<std::string> operators_of(const Common& c) {
    return c.ops.empty() ? default_operators() : split_list(c.ops);
}

int run_solve(const Common& c, const std::string& out, std::optional<int> epochs_cap, int workers, int batch,
              bool quiet) {
    RunConfig config;
    const PdeProblem problem = resolve_problem(c.problem, c.problem_file);
    config.problem = c.problem;
    if (!c.problem_file.empty()) config.problem_file = c.problem_file;
    config.seed = c.seed;
    config.out = out;
    config.operators = operators_of(c);
    config.policy.d_max = c.d_max;
    config.trainer.epochs_cap = epochs_cap;
    config.trainer.forced_stage = c.stage;
    config.trainer.workers = workers;
    config.trainer.batch = batch;
    try {
        config.trainer.validate();
        Vocabulary(config.operators, problem.variables());
        if (c.stage) Trainer(problem, config.operators, config.policy, config.trainer).stages();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const RunResult r = solve(config, quiet ? nullptr : &std::cerr);
    std::cout << "problem   " << r.problem << "\n"
              << "seed      " << r.seed << "\n"
              << "epochs    " << r.total_epochs << "\n";
    if (r.found) {
        std::cout << "best      " << r.infix << "\n"
                  << "prefix    " << r.prefix << "\n"
                  << "reward    " << std::setprecision(10) << r.reward << "\n";
    } else {
        std::cout << "best      (none)\n";
    }
    if (r.mse) std::cout << "mse       " << *r.mse << "\n";
    std::cout << "srr       " << (r.srr ? "true" : "false") << "\n";
    return 0;
}

int run_eval(const Common& c, const std::string& text, int n_points, const std::vector<std::string>& at) {
    const PdeProblem problem = resolve_problem(c.problem, c.problem_file);
    ExprTree tree;
    try {
        tree = parse_expression(text, problem.variables());
    } catch (const MalformedSequence& e) {
        std::ostringstream msg;
        msg << "malformed expression";
        if (e.index() >= 0) msg << " at token " << e.index();
        msg << ": " << e.what();
        throw UsageError(msg.str());
    } catch (const Error& e) {
        throw UsageError(std::string("cannot parse expression: ") + e.what());
    }

    const auto& vars = problem.variables();
    Eigen::MatrixXd points;
    if (!at.empty()) {
        points.resize(static_cast<Eigen::Index>(at.size()), static_cast<Eigen::Index>(vars.size()));
        for (std::size_t r = 0; r < at.size(); ++r) {
            const auto values = split_list(at[r]);
            if (values.size() != vars.size())
                throw UsageError("--at needs " + std::to_string(vars.size()) + " comma-separated values");
            for (std::size_t k = 0; k < vars.size(); ++k) {
                try {
                    points(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = std::stod(values[k]);
                } catch (const std::exception&) {
                    throw UsageError("not a number in --at: " + values[k]);
                }
            }
        }
    } else {
        std::mt19937_64 rng(c.seed);
        points = sample_box(problem, n_points, rng);
    }

    const int stage = c.stage.value_or(problem.stages().back());
    const EnergyModel model(problem, tree, stage);
    const Eigen::ArrayXd value = evaluate(tree, points);
    const Eigen::ArrayXd residual = model.residual(tree.constants, points);
    Eigen::ArrayXd error;
    if (problem.solution()) error = value - evaluate(rebind(*problem.solution(), vars), points);
    Eigen::ArrayXd ic;
    if (problem.time_dependent()) {
        Eigen::MatrixXd at0 = points;
        at0.col(problem.time_column()).setConstant(problem.domain(problem.time_column()).lo);
        ic = evaluate(tree, at0) - evaluate(problem.initial(), at0);
    }

    std::cout << "expression " << to_infix_string(tree) << "\n";
    for (const auto& v : vars) std::cout << std::setw(12) << v;
    std::cout << std::setw(16) << "value" << std::setw(16) << "residual";
    if (ic.size()) std::cout << std::setw(16) << "ic_residual";
    if (error.size()) std::cout << std::setw(16) << "error";
    std::cout << "\n";
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
        for (Eigen::Index k = 0; k < points.cols(); ++k) std::cout << std::setw(12) << std::setprecision(5) << points(r, k);
        std::cout << std::setw(16) << std::setprecision(8) << value(r) << std::setw(16) << residual(r);
        if (ic.size()) std::cout << std::setw(16) << ic(r);
        if (error.size()) std::cout << std::setw(16) << error(r);
        std::cout << "\n";
    }
    return 0;
}

int run_report(const std::vector<std::string>& dirs) {
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    const auto rows = aggregate_results(paths, std::cerr);
    std::cout << format_report(rows);
    return 0;
}

int run_sample(const Common& c, const std::string& checkpoint, int n) {
    const PdeProblem problem = resolve_problem(c.problem, c.problem_file);
    PolicyConfig pc;
    pc.d_max = c.d_max;
    SymFormer policy(Vocabulary(operators_of(c), problem.variables()), pc, c.seed);
    const int stage = c.stage.value_or(problem.stages().back());
    policy.set_active(policy.vocab().view(problem.stage_spec(stage).variables));
    if (!checkpoint.empty()) {
        const auto params = policy.parameters();
        ad::load_checkpoint(checkpoint, params);
    }
    for (const auto& r : policy.sample_batch(n, c.seed)) {
        std::cout << to_prefix_string(parse_complete(r.prefix)) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Symbolic PDE solver"};
    app.require_subcommand(1);

    Common solve_opts;
    std::string out;
    std::optional<int> epochs_cap;
    int workers = 1;
    int batch = TrainerConfig{}.batch;
    bool quiet = false;
    auto* solve_cmd = app.add_subcommand("solve", "train on a problem and write run files");
    add_common(solve_cmd, solve_opts);
    solve_cmd->add_option("--out", out, "output directory")->required();
    solve_cmd->add_option("--epochs-cap", epochs_cap, "per-stage epoch limit")->check(CLI::PositiveNumber);
    solve_cmd->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    solve_cmd->add_option("--batch", batch, "rollouts per epoch")->check(CLI::PositiveNumber)->capture_default_str();
    solve_cmd->add_flag("--quiet", quiet, "no per-epoch progress");

    Common eval_opts;
    std::string expression;
    int n_points = 5;
    std::vector<std::string> at;
    auto* eval_cmd = app.add_subcommand("eval-expr", "evaluate an expression and its residual");
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("expression", expression, "prefix expression, e.g. \"* sin x cos y\"")->required();
    eval_cmd->add_option("--points", n_points, "random points")->check(CLI::PositiveNumber)->capture_default_str();
    eval_cmd->add_option("--at", at, "explicit point, comma-separated in variable order");

    std::vector<std::string> dirs;
    auto* report_cmd = app.add_subcommand("report", "aggregate MSE and SRR over run directories");
    report_cmd->add_option("dirs", dirs, "run directories");

    Common sample_opts;
    std::string checkpoint;
    int n_samples = 10;
    auto* sample_cmd = app.add_subcommand("sample", "print policy rollouts");
    add_common(sample_cmd, sample_opts);
    sample_cmd->add_option("--checkpoint", checkpoint, "policy checkpoint");
    sample_cmd->add_option("-n,--count", n_samples, "rollouts")->check(CLI::PositiveNumber)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (*solve_cmd) return run_solve(solve_opts, out, epochs_cap, workers, batch, quiet);
        if (*eval_cmd) return run_eval(eval_opts, expression, n_points, at);
        if (*report_cmd) return run_report(dirs);
        if (*sample_cmd) return run_sample(sample_opts, checkpoint, n_samples);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kUsage;
}
