#include "symplex/runner.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace symplex {

using nlohmann::json;

namespace {

json number_or_null(std::optional<double> v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
}

json expression_json(const ExprTree& tree) {
    return json{{"template", expression_template(tree)},
                {"constants", tree.constants},
                {"prefix", to_prefix_string(tree)},
                {"infix", to_infix_string(tree)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string csv_quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

}  // namespace

std::vector<std::string> default_operators() { return {"+", "-", "*", "/", "sin", "cos", "exp"}; }

PdeProblem load_problem(const std::string& name, const std::optional<std::filesystem::path>& file) {
    if (file) return PdeProblem::from_file(*file);
    return find_problem(name);
}

std::string expression_template(const ExprTree& tree) {
    std::string out;
    for (const auto& t : tree.prefix) {
        if (!out.empty()) out += ' ';
        if (t.op == Op::Constant) out += "const";
        else if (t.op == Op::Literal) out += format_number(t.value);
        else out += t.symbol;
    }
    return out;
}

ExprTree expression_from_template(const std::string& text, const std::vector<double>& constants,
                                  std::span<const std::string> variables) {
    ExprTree tree = parse_expression(text, variables, NumberMode::Literal);
    if (static_cast<int>(constants.size()) != tree.constant_count())
        throw Error("expected " + std::to_string(tree.constant_count()) + " constants, got " +
                    std::to_string(constants.size()));
    tree.constants = constants;
    return tree;
}

// ---------------------------------------------------------------------------

HistoryWriter::HistoryWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path.string());
    out_ << "epoch,stage,stage_epoch,best_reward,batch_best,mean_reward,mean_entropy,lr,loss,grad_norm,"
            "memory_size,imitation_used,imitation_skipped,best_expression\n";
    out_.flush();
}

void HistoryWriter::write(const EpochRecord& r) {
    out_ << std::setprecision(17) << r.epoch << ',' << r.stage << ',' << r.stage_epoch << ',' << r.best_reward << ','
         << r.batch_best << ',' << r.mean_reward << ',' << r.mean_entropy << ',' << r.lr << ',' << r.loss << ','
         << r.grad_norm << ',' << r.memory_size << ',' << r.imitation_used << ',' << r.imitation_skipped << ','
         << csv_quote(r.best_expression) << '\n';
    out_.flush();
}

// ---------------------------------------------------------------------------

std::string result_json(const RunResult& r, const RunConfig& config) {
    json stages = json::array();
    for (const auto& s : r.stages)
        stages.push_back({{"stage", s.stage}, {"epochs", s.epochs}, {"reached_reward", s.reached_reward}});
    json j{{"format", "symplex-result"},
           {"version", 1},
           {"problem", r.problem},
           {"seed", r.seed},
           {"found", r.found},
           {"reward", r.reward},
           {"mse", number_or_null(r.mse)},
           {"srr", r.srr},
           {"total_epochs", r.total_epochs},
           {"stages", stages},
           {"config",
            {{"operators", config.operators},
             {"d_max", config.policy.d_max},
             {"batch", config.trainer.batch},
             {"epochs_cap", config.trainer.epochs_cap ? json(*config.trainer.epochs_cap) : json(nullptr)},
             {"stage", config.trainer.forced_stage ? json(*config.trainer.forced_stage) : json(nullptr)}}}};
    if (r.found) {
        j["expression"] = json{{"template", r.prefix_template},
                               {"constants", r.constants},
                               {"prefix", r.prefix},
                               {"infix", r.infix}};
    } else {
        j["expression"] = nullptr;
    }
    return j.dump(2) + "\n";
}

std::string memory_json(const TopKMemory& memory) {
    json entries = json::array();
    for (const auto& e : memory.entries()) {
        json item = expression_json(e.tree());
        item["reward"] = e.reward;
        item["stage"] = e.stage;
        entries.push_back(item);
    }
    return json{{"format", "symplex-memory"}, {"version", 1}, {"entries", entries}}.dump(2) + "\n";
}

RunResult solve(const RunConfig& config, std::ostream* progress) {
    const PdeProblem problem = load_problem(config.problem, config.problem_file);
    TrainerConfig tc = config.trainer;
    tc.seed = config.seed;
    std::filesystem::create_directories(config.out);

    const auto start = std::chrono::steady_clock::now();
    Trainer trainer(problem, config.operators, config.policy, tc);
    HistoryWriter history(config.out / "history.csv");
    RunResult result = trainer.run([&](const EpochRecord& rec) {
        history.write(rec);
        if (progress) {
            *progress << "epoch " << rec.epoch << " stage " << rec.stage << " best " << rec.best_reward << " mean "
                      << rec.mean_reward << " lr " << rec.lr << "  " << rec.best_expression << '\n';
        }
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    write_text(config.out / "result.json", result_json(result, config));
    write_text(config.out / "memory.json", memory_json(trainer.memory()));
    const auto params = std::as_const(trainer.policy()).parameters();
    ad::save_checkpoint(config.out / "checkpoint.json", params);
    write_text(config.out / "timing.json",
               json{{"seconds", seconds}, {"epochs", result.total_epochs}, {"workers", tc.workers}}.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------

std::vector<ReportRow> aggregate_results(std::span<const std::filesystem::path> dirs, std::ostream& warnings) {
    struct Acc {
        ReportRow row;
        double mse_sum = 0.0;
        int mse_count = 0;
    };
    std::map<std::string, Acc> by_problem;
    for (const auto& dir : dirs) {
        const auto path = dir / "result.json";
        try {
            std::ifstream in(path);
            if (!in) throw Error("missing");
            const json j = json::parse(in);
            if (j.value("format", "") != "symplex-result") throw Error("not a result file");
            const std::string name = j.at("problem").get<std::string>();
            Acc& acc = by_problem[name];
            acc.row.problem = name;
            ++acc.row.runs;
            if (j.at("srr").get<bool>()) ++acc.row.recovered;
            if (j.at("mse").is_number()) {
                acc.mse_sum += j.at("mse").get<double>();
                ++acc.mse_count;
            }
        } catch (const std::exception& e) {
            warnings << "warning: skipping " << path.string() << ": " << e.what() << '\n';
        }
    }
    std::vector<ReportRow> rows;
    for (auto& [name, acc] : by_problem) {
        if (acc.mse_count > 0) acc.row.mse = acc.mse_sum / acc.mse_count;
        rows.push_back(acc.row);
    }
    return rows;
}

std::string format_srr(int recovered, int runs) {
    const long pct = runs > 0 ? std::lround(100.0 * recovered / runs) : 0;
    return "SRR " + std::to_string(pct) + "%";
}

std::string format_report(std::span<const ReportRow> rows) {
    std::ostringstream out;
    out << std::left << std::setw(24) << "problem" << std::setw(6) << "runs" << std::setw(14) << "MSE"
        << "SRR\n";
    for (const auto& r : rows) {
        std::ostringstream mse;
        if (r.mse) mse << std::scientific << std::setprecision(2) << *r.mse;
        else mse << "-";
        out << std::left << std::setw(24) << r.problem << std::setw(6) << r.runs << std::setw(14) << mse.str()
            << format_srr(r.recovered, r.runs) << '\n';
    }
    return out.str();
}

}  // namespace symplex
