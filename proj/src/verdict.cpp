#include <algorithm>
#include <cmath>
#include <iomanip>

#include "bspde/verify.hpp"

namespace bspde {

std::string_view to_string(Provenance p) noexcept {
    switch (p) {
        case Provenance::theorem: return "theorem";
        case Provenance::identity: return "identity";
        case Provenance::computed: return "computed";
    }
    return "computed";
}

std::optional<Provenance> parse_provenance(std::string_view s) {
    for (Provenance p : {Provenance::theorem, Provenance::identity, Provenance::computed}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

std::string_view to_string(VerdictStatus s) noexcept {
    switch (s) {
        case VerdictStatus::pass: return "pass";
        case VerdictStatus::fail: return "fail";
        case VerdictStatus::advisory: return "advisory";
    }
    return "fail";
}

namespace {

Verdict make(std::string check_id, double measured, const Expectation& expected, nlohmann::json details) {
    if (!expected.provenance) {
        throw Error(ErrorCode::invalid_input, "expectation for '" + check_id + "' has no provenance tag");
    }
    Verdict v;
    v.check_id = std::move(check_id);
    v.measured = measured;
    v.tolerance = expected.tolerance;
    v.comparison = expected.comparison;
    v.provenance = *expected.provenance;
    v.expectation = expected.statement;
    v.details = details.is_null() ? nlohmann::json::object() : std::move(details);
    return v;
}

nlohmann::json number(double x) {
    if (std::isfinite(x)) return x;
    return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

}  // namespace

Verdict Verdict::judge(std::string check_id, double measured, const Expectation& expected, nlohmann::json details) {
    Verdict v = make(std::move(check_id), measured, expected, std::move(details));
    const bool ok = std::isfinite(measured) &&
                    (expected.comparison == Comparison::at_most ? measured <= expected.tolerance
                                                                : measured >= expected.tolerance);
    v.status = ok ? VerdictStatus::pass : VerdictStatus::fail;
    return v;
}

Verdict Verdict::advisory(std::string check_id, double measured, const Expectation& expected, nlohmann::json details) {
    Verdict v = make(std::move(check_id), measured, expected, std::move(details));
    v.status = VerdictStatus::advisory;
    return v;
}

nlohmann::json Verdict::to_json() const {
    return {{"check_id", check_id},
            {"status", to_string(status)},
            {"measured", number(measured)},
            {"tolerance", number(tolerance)},
            {"comparison", comparison == Comparison::at_most ? "<=" : ">="},
            {"provenance", to_string(provenance)},
            {"expectation", expectation},
            {"details", details}};
}

void VerdictBundle::add(const VerdictBundle& other, const std::string& prefix) {
    for (Verdict v : other.verdicts) {
        if (!prefix.empty()) v.check_id = prefix + "." + v.check_id;
        verdicts.push_back(std::move(v));
    }
}

void VerdictBundle::sort() {
    std::stable_sort(verdicts.begin(), verdicts.end(),
                     [](const Verdict& a, const Verdict& b) { return a.check_id < b.check_id; });
}

bool VerdictBundle::any_fail() const { return count(VerdictStatus::fail) > 0; }

int VerdictBundle::count(VerdictStatus s) const {
    return static_cast<int>(std::count_if(verdicts.begin(), verdicts.end(), [s](const Verdict& v) { return v.status == s; }));
}

const Verdict* VerdictBundle::find(const std::string& check_id) const {
    for (const Verdict& v : verdicts) {
        if (v.check_id == check_id) return &v;
    }
    return nullptr;
}

nlohmann::json VerdictBundle::to_json() const {
    VerdictBundle sorted = *this;
    sorted.sort();
    nlohmann::json out = nlohmann::json::array();
    for (const Verdict& v : sorted.verdicts) out.push_back(v.to_json());
    return out;
}

void VerdictBundle::print_table(std::ostream& out) const {
    VerdictBundle sorted = *this;
    sorted.sort();
    std::size_t width = 8;
    for (const Verdict& v : sorted.verdicts) width = std::max(width, v.check_id.size());
    out << std::left << std::setw(static_cast<int>(width)) << "check" << "  " << std::setw(8) << "status" << "  "
        << std::setw(13) << "measured" << "  " << "tolerance\n";
    for (const Verdict& v : sorted.verdicts) {
        out << std::left << std::setw(static_cast<int>(width)) << v.check_id << "  " << std::setw(8) << to_string(v.status)
            << "  " << std::setw(13) << std::setprecision(6) << v.measured << "  "
            << (v.comparison == Comparison::at_most ? "<= " : ">= ") << v.tolerance << "\n";
    }
    out << count(VerdictStatus::pass) << " pass, " << count(VerdictStatus::fail) << " fail, "
        << count(VerdictStatus::advisory) << " advisory\n";
}

void Table::write_csv(std::ostream& out) const {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n" << std::setprecision(17);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
}

namespace {

const std::vector<std::pair<ScenarioKind, std::string_view>>& kind_names() {
    static const std::vector<std::pair<ScenarioKind, std::string_view>> names{
        {ScenarioKind::heat_quadratic, "heat_quadratic"},   {ScenarioKind::sin_decay, "sin_decay"},
        {ScenarioKind::transport_decay, "transport_decay"}, {ScenarioKind::constant_source, "constant_source"},
        {ScenarioKind::stochastic_sin_wt, "stochastic_sinWT"}, {ScenarioKind::variable_a_sin, "variable_a_sin"},
        {ScenarioKind::semilinear_mode, "semilinear_mode"}, {ScenarioKind::kernel_suite, "kernel_suite"},
        {ScenarioKind::bsde_regression, "bsde_regression"}, {ScenarioKind::suite, "suite"}};
    return names;
}

}  // namespace

std::string_view to_string(ScenarioKind k) noexcept {
    for (const auto& [kind, name] : kind_names()) {
        if (kind == k) return name;
    }
    return "suite";
}

std::optional<ScenarioKind> parse_scenario_kind(std::string_view s) {
    for (const auto& [kind, name] : kind_names()) {
        if (name == s) return kind;
    }
    return std::nullopt;
}

const std::vector<std::string>& known_checks() {
    static const std::vector<std::string> checks{
        "apriori",        "beta_sweep",        "bsde_regression", "closed_form",  "contraction",
        "convergence_dt", "convergence_h",     "convergence_paths", "export",     "fd_oracle",
        "injected_defect", "interpolation",    "kernel_suite",    "localization", "residual",
        "time_shift"};
    return checks;
}

double ScenarioSpec::tolerance(const std::string& check, double fallback) const {
    const auto it = tolerances.find(check);
    return it == tolerances.end() ? fallback : it->second;
}

bool ScenarioSpec::wants(const std::string& check) const {
    return std::find(checks.begin(), checks.end(), check) != checks.end();
}

void ScenarioSpec::validate() const {
    auto fail = [&](const std::string& what) { throw Error(ErrorCode::invalid_input, "scenario '" + id + "': " + what); };
    if (id.empty()) throw Error(ErrorCode::invalid_input, "scenario id is empty");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) fail("T must be positive");
    if (steps < 1) fail("steps must be at least 1");
    if (points < 5 || points % 2 == 0) fail("points must be odd and at least 5");
    if (!(interior > 0.0)) fail("interior must be positive");
    if (!(amplitude > 0.0)) fail("amplitude must be positive");
    if (diffusion && !(*diffusion > 0.0)) fail("diffusion must be positive");
    if (lambda && !(*lambda > 0.0)) fail("super-parabolicity needs lambda > 0");
    if (lambda && Lambda && *Lambda < *lambda) fail("super-parabolicity needs lambda <= Lambda");
    if (paths < 0) fail("paths must be non-negative");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (!(theta > 0.0)) fail("theta must be positive");
    for (const std::string& c : checks) {
        if (std::find(known_checks().begin(), known_checks().end(), c) == known_checks().end()) fail("unknown check '" + c + "'");
    }
    for (const auto& [name, value] : tolerances) {
        if (std::find(known_checks().begin(), known_checks().end(), name) == known_checks().end())
            fail("tolerance for unknown check '" + name + "'");
        if (!std::isfinite(value)) fail("tolerance for '" + name + "' is not finite");
    }
    if (kind == ScenarioKind::suite && targets.empty()) fail("suite needs targets");
    if (kind != ScenarioKind::suite && !targets.empty()) fail("targets are only valid for suites");
    if (kind == ScenarioKind::stochastic_sin_wt && paths < 2) fail("stochastic scenario needs paths >= 2");
    if (kind == ScenarioKind::bsde_regression && paths < 16) fail("regression needs paths >= 16");
    for (double t : taus) {
        if (!(t > 0.0 && t < horizon)) fail("taus must lie in (0, T)");
    }
    for (double a : alphas) {
        if (!(a > 0.0 && a < 1.0)) fail("alphas must lie in (0, 1)");
    }
    for (double k : kappas) {
        if (!(k > 0.0)) fail("kappas must be positive");
    }
    for (int d : kernel_dims) {
        if (d != 1 && d != 2) fail("kernel_dims must be 1 or 2");
    }
}

std::vector<ScenarioSpec> default_catalog() {
    std::vector<ScenarioSpec> c;
    auto add = [&](std::string id, ScenarioKind kind, Provenance oracle, std::string description,
                   std::vector<std::string> checks) -> ScenarioSpec& {
        ScenarioSpec s;
        s.id = std::move(id);
        s.kind = kind;
        s.oracle = oracle;
        s.description = std::move(description);
        s.checks = std::move(checks);
        c.push_back(std::move(s));
        return c.back();
    };
    {
        ScenarioSpec& s = add("heat_smoke", ScenarioKind::sin_decay, Provenance::computed,
                              "coarse sin-mode heat solve with a one-dimensional kernel suite",
                              {"closed_form", "residual", "export", "kernel_suite"});
        s.steps = 20;
        s.points = 129;
        s.kernel_dims = {1};
    }
    add("heat_quadratic", ScenarioKind::heat_quadratic, Provenance::computed, "u = x^2 + 2(T - t) for a = 1",
        {"closed_form", "residual", "interpolation", "export"});
    add("sin_decay", ScenarioKind::sin_decay, Provenance::computed, "u = exp(-(T - t)/2) sin x for a = 1/2",
        {"closed_form", "residual", "interpolation", "convergence_h", "export"});
    add("transport_decay", ScenarioKind::transport_decay, Provenance::computed,
        "u = exp(-(T - t)) sin(x + T - t) for a = 1, b = 1", {"closed_form", "residual", "interpolation", "convergence_dt", "export"});
    add("constant_source", ScenarioKind::constant_source, Provenance::computed, "u = T - t for f = 1",
        {"closed_form", "residual", "interpolation", "export"});
    add("stochastic_sinWT", ScenarioKind::stochastic_sin_wt, Provenance::computed,
        "u = W_t exp(-(T - t)/2) sin x, v = exp(-(T - t)/2) sin x", {"closed_form", "residual", "interpolation", "convergence_paths", "export"})
        .paths = 10000;
    add("variable_a_sin", ScenarioKind::variable_a_sin, Provenance::computed,
        "a = 1 + 0.4 sin x against a periodic method-of-lines oracle", {"fd_oracle", "residual", "interpolation", "localization", "export"});
    add("semilinear_mode", ScenarioKind::semilinear_mode, Provenance::computed,
        "f = -u driver: u = exp(-3(T - t)/2) sin x", {"closed_form", "contraction", "residual", "interpolation", "apriori", "export"});
    add("beta_sweep", ScenarioKind::semilinear_mode, Provenance::computed,
        "Picard contraction factor of the semilinear mode over beta", {"beta_sweep"});
    add("kernel_suite", ScenarioKind::kernel_suite, Provenance::theorem, "every kernel estimate on the standard probe lattice",
        {"kernel_suite"});
    add("apriori_study", ScenarioKind::suite, Provenance::theorem,
        "a priori ratio over steps x points x amplitude for the linear scenarios", {"apriori"})
        .targets = {"constant_source", "heat_quadratic", "sin_decay", "stochastic_sinWT", "transport_decay", "variable_a_sin"};
    add("time_shift_sweep", ScenarioKind::suite, Provenance::theorem, "time-shift norm over tau on sin_decay and stochastic_sinWT",
        {"time_shift"})
        .targets = {"sin_decay", "stochastic_sinWT"};
    {
        ScenarioSpec& s = add("residual_self_test", ScenarioKind::stochastic_sin_wt, Provenance::identity,
                              "residual check on the exact solution and on u + 0.1", {"residual", "injected_defect"});
        s.paths = 2000;
    }
    {
        ScenarioSpec& s = add("bsde_regression", ScenarioKind::bsde_regression, Provenance::computed,
                              "regression against closed-form first family for W_T, W_T^2, sin(x) W_T", {"bsde_regression"});
        s.paths = 10000;
        s.steps = 50;
    }
    return c;
}

std::optional<ScenarioSpec> find_scenario(const std::vector<ScenarioSpec>& catalog, const std::string& id) {
    for (const ScenarioSpec& s : catalog) {
        if (s.id == id) return s;
    }
    return std::nullopt;
}

}  // namespace bspde
