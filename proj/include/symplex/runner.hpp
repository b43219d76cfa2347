#pragma once

#include "symplex/pde.hpp"
#include "symplex/policy.hpp"
#include "symplex/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace symplex {

struct RunConfig {
    std::string problem;                              // catalog name
    std::optional<std::filesystem::path> problem_file;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::vector<std::string> operators;
    PolicyConfig policy;
    TrainerConfig trainer;
};

std::vector<std::string> default_operators();

/// Catalog entry or problem file. Throws CatalogError.
PdeProblem load_problem(const std::string& name, const std::optional<std::filesystem::path>& file);

/// Prefix string with every constant written as "const"; with the constants
/// array it reconstructs the tree exactly.
std::string expression_template(const ExprTree& tree);
ExprTree expression_from_template(const std::string& text, const std::vector<double>& constants,
                                  std::span<const std::string> variables);

/// Appends one CSV row per epoch and flushes it immediately.
class HistoryWriter {
public:
    explicit HistoryWriter(const std::filesystem::path& path);
    void write(const EpochRecord& record);

private:
    std::ofstream out_;
};

std::string result_json(const RunResult& result, const RunConfig& config);
std::string memory_json(const TopKMemory& memory);

/// Runs the curriculum and writes result.json, history.csv, memory.json,
/// checkpoint.json and timing.json into config.out.
RunResult solve(const RunConfig& config, std::ostream* progress = nullptr);

struct ReportRow {
    std::string problem;
    int runs = 0;
    int recovered = 0;           // SRR flag true
    std::optional<double> mse;   // mean over runs with a finite MSE
};

/// Reads <dir>/result.json for each directory; unreadable ones are skipped
/// with a warning on `warnings`. Rows are sorted by problem name.
std::vector<ReportRow> aggregate_results(std::span<const std::filesystem::path> dirs, std::ostream& warnings);
std::string format_report(std::span<const ReportRow> rows);
/// "SRR 100%" style percentage, rounded to the nearest integer.
std::string format_srr(int recovered, int runs);

}  // namespace symplex
