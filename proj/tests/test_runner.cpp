#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "symplex/runner.hpp"

#include <sstream>

using namespace symplex;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("symplex_test_runner_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

RunConfig tiny_run(const std::filesystem::path& out) {
    RunConfig c;
    c.problem = "heat2d";
    c.seed = 7;
    c.out = out;
    c.operators = {"+", "*", "sin", "cos"};
    c.policy.d_max = 3;
    c.trainer.batch = 8;
    c.trainer.epochs_cap = 2;
    return c;
}

}  // namespace

TEST_CASE("template round trip") {
    const std::vector<std::string> vars{"x", "y", "t"};
    const ExprTree t = parse_expression("+ * 1.5 sin x * -0.25 t", vars);
    const std::string tmpl = expression_template(t);
    CHECK(tmpl == "+ * const sin x * const t");
    const ExprTree back = expression_from_template(tmpl, t.constants, vars);
    CHECK(to_prefix_string(back) == to_prefix_string(t));
    CHECK_THROWS_AS(expression_from_template(tmpl, {1.0}, vars), Error);
}

TEST_CASE("SRR formatting") {
    CHECK(format_srr(1, 20) == "SRR 5%");
    CHECK(format_srr(5, 5) == "SRR 100%");
    CHECK(format_srr(0, 0) == "SRR 0%");
    CHECK(format_srr(2, 3) == "SRR 67%");
}

TEST_CASE("unknown problem") { CHECK_THROWS_AS(load_problem("no_such_problem", std::nullopt), CatalogError); }

TEST_CASE("report skips missing results") {
    std::ostringstream warn;
    const std::vector<std::filesystem::path> dirs{scratch("missing")};
    const auto rows = aggregate_results(dirs, warn);
    CHECK(rows.empty());
    CHECK(warn.str().find("warning") != std::string::npos);
    CHECK(format_report(rows).find("problem") == 0);
}

TEST_CASE("solve writes reproducible run files") {
    const auto a = scratch("a");
    const auto b = scratch("b");
    const RunResult ra = solve(tiny_run(a));
    RunConfig cb = tiny_run(b);
    cb.trainer.workers = 3;
    solve(cb);
    for (const char* f : {"result.json", "history.csv", "memory.json", "checkpoint.json", "timing.json"}) {
        CAPTURE(f);
        CHECK(std::filesystem::exists(a / f));
    }
    for (const char* f : {"result.json", "history.csv", "memory.json", "checkpoint.json"}) {
        CAPTURE(f);
        CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK(ra.total_epochs == 2 * static_cast<int>(ra.stages.size()));

    std::ostringstream warn;
    const std::vector<std::filesystem::path> dirs{a, b};
    const auto rows = aggregate_results(dirs, warn);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].problem == "heat2d");
    CHECK(rows[0].runs == 2);
    CHECK(warn.str().empty());
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}
