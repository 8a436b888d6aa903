#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "bspde/verify.hpp"

using namespace bspde;

namespace {

ScenarioSpec catalog_spec(const std::string& id) {
    const auto s = find_scenario(default_catalog(), id);
    REQUIRE(s.has_value());
    return *s;
}

}  // namespace

TEST_CASE("verdict semantics") {
    const Verdict ok = Verdict::judge("a", 0.5, {"x", Provenance::computed, 1.0});
    CHECK(ok.status == VerdictStatus::pass);
    CHECK(Verdict::judge("a", 1.5, {"x", Provenance::computed, 1.0}).status == VerdictStatus::fail);
    CHECK(Verdict::judge("a", 1.0, {"x", Provenance::computed, 1.0}).status == VerdictStatus::pass);
    CHECK(Verdict::judge("a", 2.0, {"x", Provenance::theorem, 1.0, Comparison::at_least}).status == VerdictStatus::pass);
    CHECK(Verdict::judge("a", 0.5, {"x", Provenance::theorem, 1.0, Comparison::at_least}).status == VerdictStatus::fail);
    CHECK(Verdict::judge("a", NAN, {"x", Provenance::identity, 1.0}).status == VerdictStatus::fail);
    CHECK(Verdict::judge("a", INFINITY, {"x", Provenance::identity, INFINITY}).status == VerdictStatus::fail);
    CHECK(Verdict::advisory("a", 1e9, {"x", Provenance::theorem, 1.0}).status == VerdictStatus::advisory);

    try {
        (void)Verdict::judge("untagged", 0.0, {"x", std::nullopt, 1.0});
        FAIL("expected invalid_input");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_input);
    }

    const nlohmann::json j = Verdict::judge("a", NAN, {"x", Provenance::identity, 1.0}).to_json();
    CHECK(j.at("measured") == "nan");
    CHECK(j.at("provenance") == "identity");
    CHECK(j.at("status") == "fail");
    CHECK(j.at("comparison") == "<=");
}

TEST_CASE("provenance and kind names round trip") {
    for (Provenance p : {Provenance::theorem, Provenance::identity, Provenance::computed}) CHECK(parse_provenance(to_string(p)) == p);
    CHECK_FALSE(parse_provenance("estimate").has_value());
    CHECK(parse_scenario_kind("stochastic_sinWT") == ScenarioKind::stochastic_sin_wt);
    CHECK(parse_scenario_kind("suite") == ScenarioKind::suite);
    CHECK_FALSE(parse_scenario_kind("heat").has_value());
}

TEST_CASE("bundle ordering, prefixes and counts") {
    VerdictBundle inner;
    inner.add(Verdict::judge("z", 0.0, {"x", Provenance::computed, 1.0}));
    inner.add(Verdict::judge("b", 2.0, {"x", Provenance::computed, 1.0}));
    VerdictBundle outer;
    outer.add(Verdict::advisory("m", 0.0, {"x", Provenance::computed, 1.0}));
    outer.add(inner, "target");
    CHECK(outer.find("target.z") != nullptr);
    CHECK(outer.any_fail());
    CHECK(outer.count(VerdictStatus::pass) == 1);
    CHECK(outer.count(VerdictStatus::advisory) == 1);
    const nlohmann::json j = outer.to_json();
    REQUIRE(j.size() == 3);
    CHECK(j[0].at("check_id") == "m");
    CHECK(j[1].at("check_id") == "target.b");
    CHECK(j[2].at("check_id") == "target.z");

    std::ostringstream table;
    outer.print_table(table);
    CHECK(table.str().find("1 pass, 1 fail, 1 advisory") != std::string::npos);
}

TEST_CASE("table csv") {
    const Table t{{"h", "error"}, {{0.5, 1.0 / 3.0}}};
    std::ostringstream out;
    t.write_csv(out);
    CHECK(out.str().rfind("h,error\n0.5,0.33333333333333331", 0) == 0);
}

TEST_CASE("bundled catalog") {
    const auto catalog = default_catalog();
    std::set<std::string> ids;
    for (const ScenarioSpec& s : catalog) {
        CHECK(ids.insert(s.id).second);
        CHECK_NOTHROW(s.validate());
        for (const std::string& t : s.targets) CHECK(find_scenario(catalog, t).has_value());
    }
    for (const char* id : {"heat_smoke", "heat_quadratic", "sin_decay", "transport_decay", "constant_source", "stochastic_sinWT",
                           "variable_a_sin", "semilinear_mode", "beta_sweep", "kernel_suite", "apriori_study",
                           "time_shift_sweep", "residual_self_test", "bsde_regression"}) {
        CHECK_MESSAGE(ids.count(id) == 1, id);
    }
    CHECK_FALSE(find_scenario(catalog, "nope").has_value());
}

TEST_CASE("spec validation names the field") {
    ScenarioSpec s = catalog_spec("sin_decay");
    s.lambda = 0.0;
    try {
        s.validate();
        FAIL("expected invalid_input");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_input);
        CHECK(std::string(e.what()).find("super-parabolicity") != std::string::npos);
    }
    s = catalog_spec("sin_decay");
    s.checks.push_back("everything");
    CHECK_THROWS_AS(s.validate(), Error);
    s = catalog_spec("sin_decay");
    s.points = 128;
    CHECK_THROWS_AS(s.validate(), Error);
    s = catalog_spec("sin_decay");
    s.taus = {1.5};
    CHECK_THROWS_AS(s.validate(), Error);

    // Invalid specs surface as a failing verdict rather than an exception.
    s = catalog_spec("sin_decay");
    s.alpha = 1.0;
    const ScenarioOutput out = run_scenario(s);
    CHECK(out.verdicts.any_fail());
    CHECK(out.verdicts.find("spec.error") != nullptr);
}

TEST_CASE("problems match their terminal data") {
    for (const char* id : {"heat_quadratic", "sin_decay", "transport_decay", "constant_source", "stochastic_sinWT", "semilinear_mode"}) {
        const ScenarioSpec spec = catalog_spec(id);
        const ScenarioProblem p = build_problem(spec, 3.0);
        REQUIRE(p.u_exact);
        for (double x : {-1.0, 0.2, 1.7}) {
            const double w[2] = {0.4, 0.0};
            const Point pt{x, 0.0};
            CHECK(p.u_exact(spec.horizon, pt, w) == doctest::Approx(p.coeffs.Phi.value(spec.horizon, pt, w, 1)).epsilon(1e-12));
        }
        CHECK(p.stochastic == (spec.kind == ScenarioKind::stochastic_sin_wt));
    }
    CHECK_THROWS_AS(build_problem(catalog_spec("kernel_suite")), Error);
    CHECK_FALSE(build_problem(catalog_spec("variable_a_sin")).u_exact);
}

TEST_CASE("residual check rejects an injected defect") {
    ScenarioSpec spec = catalog_spec("residual_self_test");
    spec.paths = 400;
    const ScenarioOutput out = run_scenario(spec);
    const Verdict* r = out.verdicts.find("residual");
    const Verdict* d = out.verdicts.find("injected_defect.detected");
    REQUIRE(r != nullptr);
    REQUIRE(d != nullptr);
    CHECK(r->status == VerdictStatus::pass);
    CHECK(d->status == VerdictStatus::pass);
    CHECK(d->details.at("residual_status") == "fail");
}

TEST_CASE("zero data has zero residual") {
    ScenarioSpec spec = catalog_spec("constant_source");
    const ScenarioProblem p = build_problem(spec);
    CoefficientSet zero = p.coeffs;
    zero.f = DataFunctional::zero();
    const TimeGrid time = build_time_grid(1.0, 20);
    const SpaceGrid space = scenario_grid(spec, p, 129);
    const SolutionField s = solve_deterministic_pde(zero, time, space);
    const Verdict v = run_residual_check(s, zero, 0.0, nullptr);
    CHECK(v.measured == 0.0);
    CHECK(v.status == VerdictStatus::pass);
}

TEST_CASE("suites prefix target verdicts") {
    ScenarioSpec suite;
    suite.id = "mini";
    suite.kind = ScenarioKind::suite;
    suite.targets = {"constant_source", "heat_quadratic"};
    suite.checks = {"closed_form"};
    const ScenarioOutput out = run_scenario(suite);
    REQUIRE(out.verdicts.find("constant_source.closed_form.u_sup_error") != nullptr);
    REQUIRE(out.verdicts.find("heat_quadratic.closed_form.u_sup_error") != nullptr);
    CHECK_FALSE(out.verdicts.any_fail());
    CHECK(out.verdicts.verdicts.size() == 2);

    suite.targets = {"missing"};
    CHECK(run_scenario(suite).verdicts.find("missing.error") != nullptr);
}

TEST_CASE("solver errors become failing verdicts") {
    ScenarioSpec spec = catalog_spec("variable_a_sin");
    spec.points = 33;
    const ScenarioOutput out = run_scenario(spec);
    const Verdict* v = out.verdicts.find("solve.error");
    REQUIRE(v != nullptr);
    CHECK(v->status == VerdictStatus::fail);
    CHECK(v->details.at("error").get<std::string>().find("ill-conditioned") != std::string::npos);
}

TEST_CASE("convergence studies") {
    const ConvergenceResult dt = run_convergence_study(catalog_spec("transport_decay"), StudyAxis::time_step);
    CHECK(dt.verdict.status == VerdictStatus::pass);
    CHECK(dt.table.rows.size() == 4);
    CHECK(dt.table.columns[0] == "dt");

    ScenarioSpec sweep = catalog_spec("beta_sweep");
    const ConvergenceResult beta = run_convergence_study(sweep, StudyAxis::beta);
    CHECK(beta.verdict.status == VerdictStatus::pass);
    REQUIRE(beta.table.rows.size() == 3);
    CHECK(beta.table.rows[0][1] > beta.table.rows[2][1]);
}

TEST_CASE("a priori ratio is scale invariant") {
    Table t;
    const VerdictBundle b = run_apriori_study(catalog_spec("constant_source"), {50}, {129}, {1.0, 10.0}, &t);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1][3] == doctest::Approx(10.0 * t.rows[0][3]).epsilon(1e-10));
    CHECK_FALSE(b.any_fail());
}

TEST_CASE("regression cross-validation") {
    Table t;
    const VerdictBundle b = run_bsde_cross_validation(4000, 20, 11, &t);
    CHECK_FALSE(b.any_fail());
    CHECK(b.find("bsde_regression.w_squared.psi") != nullptr);
    CHECK(t.rows.size() == 4 * 20);
    CHECK_THROWS_AS(run_bsde_cross_validation(10, 20, 11), Error);
}

TEST_CASE("one-dimensional kernel suite") {
    KernelSuiteParams params;
    params.dims = {1};
    params.integral.levels = 1;
    nlohmann::json reports;
    const VerdictBundle b = run_kernel_suite(params, &reports);
    CHECK_FALSE(b.any_fail());
    CHECK(reports.contains("identity_1"));
    CHECK(reports.contains("growing_1"));
    const Verdict* ck = b.find("kernel.identity_1.chapman_kolmogorov");
    REQUIRE(ck != nullptr);
    CHECK(ck->provenance == Provenance::identity);
    CHECK_THROWS_AS(run_kernel_suite(KernelSuiteParams{{3}}), Error);
}
