#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bspde/cli.hpp"

using namespace bspde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bspde_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / ("bspde_cli_test_" + name + ".cfg");
    std::ofstream(p) << text;
    return p;
}

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string parse_error(const std::string& text) {
    std::istringstream in(text);
    try {
        (void)parse_config(in, "cfg", default_catalog());
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_input);
        return e.message();
    }
    return {};
}

const fs::path configs = fs::path(BSPDE_SOURCE_DIR) / "configs";

}  // namespace

TEST_CASE("config parsing") {
    std::istringstream in(R"(# comment
[run]
seed = 7
jobs = 3

[scenario:quick]
base = sin_decay
steps = 20
points = 129
checks = closed_form, residual
tol.closed_form = 1e-4
taus = 0.5, 0.25

[scenario:custom]
kind = constant_source
checks = closed_form
seed = 99
)");
    const RunConfig cfg = parse_config(in, "cfg", default_catalog());
    CHECK(cfg.seed == 7u);
    CHECK(cfg.jobs == 3);
    REQUIRE(cfg.scenarios.size() == 2);
    const ScenarioSpec& q = cfg.scenarios[0];
    CHECK(q.id == "quick");
    CHECK(q.kind == ScenarioKind::sin_decay);
    CHECK(q.steps == 20);
    CHECK(q.checks == std::vector<std::string>{"closed_form", "residual"});
    CHECK(q.tolerance("closed_form", 1.0) == 1e-4);
    CHECK(q.taus == std::vector<double>{0.5, 0.25});
    CHECK(q.seed == 7u);
    CHECK(cfg.scenarios[1].kind == ScenarioKind::constant_source);
    CHECK(cfg.scenarios[1].seed == 99u);

    const nlohmann::json j = to_json(q);
    CHECK(j.at("kind") == "sin_decay");
    CHECK(j.at("steps") == 20);
}

TEST_CASE("schema errors are anchored to a line") {
    CHECK(parse_error("[scenario:sin_decay]\nsteps = 20\nlambda = 0\n").rfind("cfg:3: ", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay]\nlambda = -1\n").find("super-parabolicity") != std::string::npos);
    CHECK(parse_error("[scenario:sin_decay]\nsteps = many\n").rfind("cfg:2: steps: expected an integer", 0) == 0);
    CHECK(parse_error("steps = 3\n").rfind("cfg:1: key outside a section", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay]\n[scenario:sin_decay]\n").rfind("cfg:2: duplicate scenario", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay]\nsteps = 1\nsteps = 2\n").rfind("cfg:3: duplicate key", 0) == 0);
    CHECK(parse_error("[scenario:unknown_thing]\n").rfind("cfg:1: ", 0) == 0);
    CHECK(parse_error("[scenario:x]\nkind = nonsense\n").rfind("cfg:2: unknown kind", 0) == 0);
    CHECK(parse_error("[scenario:x]\nbase = nonsense\n").rfind("cfg:2: unknown base", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay]\ntol.nothing = 1\n").rfind("cfg:2: ", 0) == 0);
    CHECK(parse_error("[scenario:../up]\n").rfind("cfg:1: ", 0) == 0);
    CHECK(parse_error("[stuff]\n").rfind("cfg:1: unknown section", 0) == 0);
    CHECK(parse_error("[run]\njobs = 0\n").rfind("cfg:2: ", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay\n").rfind("cfg:1: unterminated", 0) == 0);
    CHECK(parse_error("[scenario:sin_decay]\nno equals sign\n").rfind("cfg:2: expected key = value", 0) == 0);
}

TEST_CASE("bundled heat_smoke config") {
    const fs::path out = scratch("smoke");
    std::ostringstream o;
    std::ostringstream e;
    RunOptions opt;
    opt.config = configs / "heat_smoke.cfg";
    opt.out = out;
    CHECK(cmd_run(opt, o, e) == 0);
    CHECK(e.str().empty());
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "verdicts.json"));
    CHECK(fs::exists(out / "heat_smoke" / "solution.csv"));
    CHECK(fs::exists(out / "heat_smoke" / "kernel_suite.json"));
    CHECK(read(out / "heat_smoke" / "solution.csv").rfind("path_id,t,x1,u,v_1\n", 0) == 0);

    const nlohmann::json manifest = nlohmann::json::parse(read(out / "manifest.json"));
    CHECK(manifest.at("status") == "passed");
    CHECK(manifest.contains("started_at"));
    CHECK(manifest.at("scenarios").size() == 1);
    CHECK(manifest.at("artifacts").size() >= 4);
    CHECK(read(out / "verdicts.json").find("_at") == std::string::npos);

    // A second run into the same directory needs --force.
    CHECK(cmd_run(opt, o, e) == 2);
    CHECK(e.str().find("--force") != std::string::npos);
    opt.force = true;
    CHECK(cmd_run(opt, o, e) == 0);
    fs::remove_all(out);
}

TEST_CASE("beta sweep config writes the contraction table") {
    const fs::path out = scratch("beta");
    std::ostringstream o;
    std::ostringstream e;
    RunOptions opt;
    opt.config = configs / "semilinear_beta_sweep.cfg";
    opt.out = out;
    CHECK(cmd_run(opt, o, e) == 0);
    std::istringstream csv(read(out / "beta_sweep" / "contraction_vs_beta.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "beta,contraction_factor,iterations");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 3);
    fs::remove_all(out);
}

TEST_CASE("verdicts are byte-stable across runs and job counts") {
    const fs::path cfg = write_config("stable", "[run]\nseed = 5\n\n[scenario:residual_self_test]\npaths = 200\n\n"
                                                "[scenario:constant_source]\n\n[scenario:sin_decay]\nchecks = closed_form\n");
    std::ostringstream o;
    std::ostringstream e;
    RunOptions a;
    a.config = cfg;
    a.out = scratch("stable_a");
    a.jobs = 1;
    RunOptions b = a;
    b.out = scratch("stable_b");
    b.jobs = 3;
    CHECK(cmd_run(a, o, e) == 0);
    CHECK(cmd_run(b, o, e) == 0);
    CHECK(read(a.out / "verdicts.json") == read(b.out / "verdicts.json"));
    CHECK(read(a.out / "residual_self_test" / "verdicts.json") == read(b.out / "residual_self_test" / "verdicts.json"));
    CHECK(read(a.out / "manifest.json") != "");

    // The seed flag overrides the config.
    RunOptions c = a;
    c.out = scratch("stable_c");
    c.seed = 6;
    CHECK(cmd_run(c, o, e) == 0);
    const nlohmann::json manifest = nlohmann::json::parse(read(c.out / "manifest.json"));
    CHECK(manifest.at("seed") == 6);
    CHECK(manifest.at("scenarios")[0].at("seed") == 6);
    for (const fs::path& p : {a.out, b.out, c.out}) fs::remove_all(p);
}

TEST_CASE("run exit codes") {
    std::ostringstream o;
    std::ostringstream e;
    RunOptions opt;
    opt.out = scratch("codes");

    opt.config = write_config("lambda", "[scenario:sin_decay]\nlambda = 0\n");
    CHECK(cmd_run(opt, o, e) == 2);
    CHECK(e.str().find(":2: ") != std::string::npos);
    CHECK(e.str().find("super-parabolicity") != std::string::npos);
    CHECK_FALSE(fs::exists(opt.out / "manifest.json"));

    opt.config = fs::temp_directory_path() / "bspde_cli_test_missing.cfg";
    fs::remove(opt.config);
    CHECK(cmd_run(opt, o, e) == 2);

    // A failing verdict: an impossible closed-form tolerance.
    opt.config = write_config("failing", "[scenario:constant_source]\nchecks = closed_form\ntol.closed_form = -1\n");
    CHECK(cmd_run(opt, o, e) == 1);
    const nlohmann::json manifest = nlohmann::json::parse(read(opt.out / "manifest.json"));
    CHECK(manifest.at("status") == "failed");
    fs::remove_all(opt.out);
}

TEST_CASE("list") {
    std::ostringstream o;
    std::ostringstream e;
    CHECK(cmd_list(false, std::nullopt, o, e) == 0);
    for (const char* id : {"heat_smoke", "heat_quadratic", "sin_decay", "stochastic_sinWT", "variable_a_sin", "transport_decay",
                           "semilinear_mode", "beta_sweep", "kernel_suite", "apriori_study", "time_shift_sweep"}) {
        CHECK_MESSAGE(o.str().find(id) != std::string::npos, id);
    }

    std::ostringstream j;
    CHECK(cmd_list(true, std::nullopt, j, e) == 0);
    const nlohmann::json arr = nlohmann::json::parse(j.str());
    CHECK(arr.size() == default_catalog().size());
    CHECK(arr[0].contains("oracle"));

    std::ostringstream empty;
    CHECK(cmd_list(true, write_config("empty", ""), empty, e) == 0);
    CHECK(nlohmann::json::parse(empty.str()).empty());

    std::ostringstream custom;
    CHECK(cmd_list(false, write_config("custom", "[scenario:mine]\nkind = sin_decay\ndescription = mine\n"), custom, e) == 0);
    CHECK(custom.str().find("mine") != std::string::npos);

    CHECK(cmd_list(false, write_config("broken", "[oops]\n"), custom, e) == 2);
}
