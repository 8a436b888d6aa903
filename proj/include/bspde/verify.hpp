#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bspde/kernel.hpp"
#include "bspde/solver.hpp"

namespace bspde {

/// Where an expected value comes from: a published inequality or identity (theorem), something true by
/// construction (identity), or an independently computed oracle (computed).
enum class Provenance { theorem, identity, computed };
std::string_view to_string(Provenance p) noexcept;
std::optional<Provenance> parse_provenance(std::string_view s);

enum class VerdictStatus { pass, fail, advisory };
std::string_view to_string(VerdictStatus s) noexcept;

enum class Comparison { at_most, at_least };

struct Expectation {
    std::string statement;
    std::optional<Provenance> provenance;
    double tolerance = 0.0;
    Comparison comparison = Comparison::at_most;
};

struct Verdict {
    std::string check_id;
    VerdictStatus status = VerdictStatus::fail;
    double measured = 0.0;
    double tolerance = 0.0;
    Comparison comparison = Comparison::at_most;
    Provenance provenance = Provenance::computed;
    std::string expectation;
    nlohmann::json details = nlohmann::json::object();

    /// Fails iff the measurement violates the tolerance (non-finite measurements fail).
    /// Throws invalid_input for an expectation without a provenance tag.
    static Verdict judge(std::string check_id, double measured, const Expectation& expected,
                         nlohmann::json details = nlohmann::json::object());
    /// Reported, never failing.
    static Verdict advisory(std::string check_id, double measured, const Expectation& expected,
                            nlohmann::json details = nlohmann::json::object());
    [[nodiscard]] nlohmann::json to_json() const;
};

struct VerdictBundle {
    std::vector<Verdict> verdicts;

    void add(Verdict v) { verdicts.push_back(std::move(v)); }
    /// Appends with check ids prefixed by "prefix.".
    void add(const VerdictBundle& other, const std::string& prefix = {});
    void sort();
    [[nodiscard]] bool any_fail() const;
    [[nodiscard]] int count(VerdictStatus s) const;
    [[nodiscard]] const Verdict* find(const std::string& check_id) const;
    /// Array sorted by check id.
    [[nodiscard]] nlohmann::json to_json() const;
    void print_table(std::ostream& out) const;
};

/// Plot-ready numeric table.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    /// Header row, 17 significant digits.
    void write_csv(std::ostream& out) const;
};

enum class ScenarioKind {
    heat_quadratic,
    sin_decay,
    transport_decay,
    constant_source,
    stochastic_sin_wt,
    variable_a_sin,
    semilinear_mode,
    kernel_suite,
    bsde_regression,
    /// Runs its checks on each target scenario.
    suite,
};
std::string_view to_string(ScenarioKind k) noexcept;
std::optional<ScenarioKind> parse_scenario_kind(std::string_view s);

/// Certifications a scenario may request.
const std::vector<std::string>& known_checks();

struct ScenarioSpec {
    std::string id;
    std::string description;
    ScenarioKind kind = ScenarioKind::sin_decay;
    Provenance oracle = Provenance::computed;

    double horizon = 1.0;
    int steps = 100;
    int points = 257;
    double interior = 2.0;
    /// Scales the terminal data and source.
    double amplitude = 1.0;
    /// Overrides of the kind's diffusion level and ellipticity bounds (unset: kind defaults).
    std::optional<double> diffusion;
    std::optional<double> lambda;
    std::optional<double> Lambda;
    int paths = 0;
    std::uint64_t seed = 20240611;

    std::vector<std::string> checks;
    std::map<std::string, double> tolerances;
    std::vector<std::string> targets;

    std::vector<int> steps_sweep{50, 100};
    std::vector<int> points_sweep{129, 257};
    std::vector<double> kappas{1.0, 10.0};
    std::vector<double> betas{0.0, 5.0, 20.0};
    std::vector<double> taus{0.2, 0.1, 0.05, 0.025};
    std::vector<double> alphas{0.25, 0.5};
    std::vector<double> epsilons{0.1, 0.5};
    std::vector<int> h_sweep{129, 145, 161, 177};
    std::vector<int> dt_sweep{25, 50, 100, 200};
    std::vector<int> paths_sweep{250, 1000, 4000, 16000};
    std::vector<int> kernel_dims{1, 2};
    double alpha = 0.5;
    double theta = 0.5;

    [[nodiscard]] double tolerance(const std::string& check, double fallback) const;
    [[nodiscard]] bool wants(const std::string& check) const;
    /// Throws invalid_input naming the offending field.
    void validate() const;
};

/// Bundled scenarios.
std::vector<ScenarioSpec> default_catalog();
std::optional<ScenarioSpec> find_scenario(const std::vector<ScenarioSpec>& catalog, const std::string& id);

/// Equation, route and oracle of a solving scenario.
struct ScenarioProblem {
    CoefficientSet coeffs;
    enum class Route { model, deterministic, variable, semilinear } route = Route::model;
    /// Closed-form u(t, x, W_t) and v_1(t, x, W_t); empty when the oracle is a finer-grid solve.
    std::function<double(double t, const Point& x, const double* w)> u_exact;
    std::function<double(double t, const Point& x, const double* w)> v_exact;
    bool stochastic = false;
};

/// Throws invalid_argument for kinds that do not solve an equation.
ScenarioProblem build_problem(const ScenarioSpec& spec, double kappa = 1.0);
SpaceGrid scenario_grid(const ScenarioSpec& spec, const ScenarioProblem& problem, int points);
SolutionField solve_problem(const ScenarioProblem& problem, const TimeGrid& time, const SpaceGrid& space,
                            const PathEnsemble* paths, const SolverConfig& config = {});

/// 3 SE + 2 dt scale: the defect allowance of an exact solution under the time quadrature.
double residual_tolerance(const ResidualStats& stats, double dt, double scale);

/// Pass iff the path-averaged RMS integral-form defect is at most `tolerance`.
Verdict run_residual_check(const SolutionField& solution, const CoefficientSet& coeffs, double tolerance,
                           const PathEnsemble* paths, const std::string& check_id = "residual");

/// LHS/RHS ratios over steps x points x kappas; spread and scale-equivariance verdicts.
VerdictBundle run_apriori_study(const ScenarioSpec& spec, const std::vector<int>& steps, const std::vector<int>& points,
                                const std::vector<double>& kappas, Table* table = nullptr);

struct KernelSuiteParams {
    std::vector<int> dims{1, 2};
    double alpha = 0.5;
    IntegralProbe integral;
    int identity_points = 100;
    /// Off: normalization, identities and Chapman-Kolmogorov only.
    bool estimates = true;
};

/// Normalization, fundamental identities, Chapman-Kolmogorov and every estimate probe on the standard lattice.
VerdictBundle run_kernel_suite(const KernelSuiteParams& params, nlohmann::json* reports = nullptr);

enum class StudyAxis { time_step, spacing, paths, beta };
std::string_view to_string(StudyAxis a) noexcept;

struct ConvergenceResult {
    Verdict verdict;
    Table table;
};

/// Errors against the scenario oracle along one axis, with the fitted order (or contraction trend for beta).
ConvergenceResult run_convergence_study(const ScenarioSpec& spec, StudyAxis axis);

/// Regression against closed-form first-family solutions for W_T, W_T^2 and sin(x) W_T.
VerdictBundle run_bsde_cross_validation(int paths, int steps, std::uint64_t seed, Table* table = nullptr);

struct ScenarioOutput {
    VerdictBundle verdicts;
    std::map<std::string, Table> tables;
    /// Named text artifacts (solution CSV, JSON reports).
    std::map<std::string, std::string> files;
};

/// Runs every check the scenario lists; verdicts are sorted. Errors from the solvers become failing verdicts.
ScenarioOutput run_scenario(const ScenarioSpec& spec, const std::vector<ScenarioSpec>& catalog = default_catalog());

}  // namespace bspde
