#include <algorithm>
#include <cmath>
#include <sstream>

#include "bspde/verify.hpp"

namespace bspde {

namespace {

double default_diffusion(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::sin_decay:
        case ScenarioKind::stochastic_sin_wt:
        case ScenarioKind::semilinear_mode: return 0.5;
        default: return 1.0;
    }
}

SpaceFunction sine() { return SpaceFunction::sine({1.0, 0.0}); }

}  // namespace

ScenarioProblem build_problem(const ScenarioSpec& spec, double kappa) {
    const double amp = spec.amplitude * kappa;
    const double T = spec.horizon;
    const double a = spec.diffusion.value_or(default_diffusion(spec.kind));
    ScenarioProblem p;
    CoefficientSet& c = p.coeffs;
    c = CoefficientSet::constant_diffusion(1, SmallMatrix{1, {a, 0.0, 0.0, 0.0}});
    c.label = spec.id;
    double lo = a;
    double hi = a;
    switch (spec.kind) {
        case ScenarioKind::heat_quadratic:
            c.Phi = DataFunctional::deterministic_term(SpaceFunction::monomial(2)).scaled(amp);
            p.route = ScenarioProblem::Route::deterministic;
            p.u_exact = [=](double t, const Point& x, const double*) { return amp * (x[0] * x[0] + 2.0 * a * (T - t)); };
            break;
        case ScenarioKind::sin_decay:
            c.Phi = DataFunctional::deterministic_term(sine()).scaled(amp);
            p.route = ScenarioProblem::Route::model;
            p.u_exact = [=](double t, const Point& x, const double*) { return amp * std::exp(-a * (T - t)) * std::sin(x[0]); };
            break;
        case ScenarioKind::transport_decay:
            c.b = [](double, const Point&) { return Point{1.0, 0.0}; };
            c.Phi = DataFunctional::deterministic_term(sine()).scaled(amp);
            p.route = ScenarioProblem::Route::deterministic;
            p.u_exact = [=](double t, const Point& x, const double*) {
                return amp * std::exp(-a * (T - t)) * std::sin(x[0] + T - t);
            };
            break;
        case ScenarioKind::constant_source:
            c.f = DataFunctional::deterministic_term(SpaceFunction::constant(1.0)).scaled(amp);
            p.route = ScenarioProblem::Route::deterministic;
            p.u_exact = [=](double t, const Point&, const double*) { return amp * (T - t); };
            break;
        case ScenarioKind::stochastic_sin_wt:
            c.Phi = DataFunctional::single(sine(), PathFactor::monomial(1)).scaled(amp);
            p.route = ScenarioProblem::Route::model;
            p.stochastic = true;
            p.u_exact = [=](double t, const Point& x, const double* w) {
                return amp * w[0] * std::exp(-a * (T - t)) * std::sin(x[0]);
            };
            p.v_exact = [=](double t, const Point& x, const double*) { return amp * std::exp(-a * (T - t)) * std::sin(x[0]); };
            break;
        case ScenarioKind::variable_a_sin:
            c.a = [a](double, const Point& x) { return SmallMatrix{1, {a * (1.0 + 0.4 * std::sin(x[0])), 0.0, 0.0, 0.0}}; };
            c.a_space_invariant = false;
            lo = 0.6 * a;
            hi = 1.4 * a;
            c.Phi = DataFunctional::deterministic_term(sine()).scaled(amp);
            p.route = ScenarioProblem::Route::variable;
            break;
        case ScenarioKind::semilinear_mode:
            c.Phi = DataFunctional::deterministic_term(sine()).scaled(amp);
            c.driver = SemilinearDriver::linear(-1.0);
            p.route = ScenarioProblem::Route::semilinear;
            p.u_exact = [=](double t, const Point& x, const double*) {
                return amp * std::exp(-(a + 1.0) * (T - t)) * std::sin(x[0]);
            };
            break;
        default:
            throw Error(ErrorCode::invalid_argument, "scenario kind '" + std::string(to_string(spec.kind)) + "' does not solve an equation");
    }
    c.lambda = spec.lambda.value_or(lo);
    c.Lambda = spec.Lambda.value_or(hi);
    return p;
}

SpaceGrid scenario_grid(const ScenarioSpec& spec, const ScenarioProblem& problem, int points) {
    return build_space_grid(1, truncation_radius(spec.interior, problem.coeffs.Lambda, spec.horizon), points, spec.interior);
}

SolutionField solve_problem(const ScenarioProblem& problem, const TimeGrid& time, const SpaceGrid& space,
                            const PathEnsemble* paths, const SolverConfig& config) {
    switch (problem.route) {
        case ScenarioProblem::Route::model: return solve_model(problem.coeffs, time, space, paths, config);
        case ScenarioProblem::Route::deterministic: return solve_deterministic_pde(problem.coeffs, time, space, config);
        case ScenarioProblem::Route::variable: return solve_variable_linear(problem.coeffs, time, space, paths, config);
        case ScenarioProblem::Route::semilinear: return solve_semilinear(problem.coeffs, time, space, paths, config);
    }
    throw Error(ErrorCode::invalid_route, "unknown route");
}

double residual_tolerance(const ResidualStats& stats, double dt, double scale) {
    return 3.0 * stats.standard_error + 2.0 * dt * scale;
}

namespace {

Verdict residual_verdict(const ResidualStats& r, double tolerance, const std::string& id) {
    return Verdict::judge(id, r.rms,
                          {"path-averaged RMS integral-form defect within tolerance", Provenance::computed, tolerance},
                          {{"worst_path", r.worst_path}, {"max_abs", r.max_abs}, {"standard_error", r.standard_error}});
}

}  // namespace

Verdict run_residual_check(const SolutionField& solution, const CoefficientSet& coeffs, double tolerance,
                           const PathEnsemble* paths, const std::string& check_id) {
    return residual_verdict(solution_residual(solution, coeffs, paths), tolerance, check_id);
}

namespace {

/// Least-squares slope of log y against log x.
double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0.0;
    double my = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]) / n;
        my += std::log(y[i]) / n;
    }
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxx > 0.0 ? sxy / sxx : NAN;
}

/// Paths on the scenario grid, or none for deterministic problems.
std::optional<PathEnsemble> scenario_paths(const ScenarioSpec& spec, const ScenarioProblem& p, const TimeGrid& time) {
    if (!p.stochastic) return std::nullopt;
    return sample_paths(spec.paths, 1, time, spec.seed);
}

const PathEnsemble* ptr(const std::optional<PathEnsemble>& e) { return e ? &*e : nullptr; }

/// Largest |u| over the interior on up to 64 paths.
double field_scale(const SolutionField& s, const PathEnsemble* paths) {
    const int M = s.deterministic() || paths == nullptr ? 1 : std::min(64, paths->paths);
    const double zero[kMaxDim] = {0.0, 0.0};
    double best = 0.0;
    for (int m = 0; m < M; ++m) {
        for (int k = 0; k <= s.time.steps(); ++k) {
            const double* w = M == 1 && paths == nullptr ? zero : paths->w(m, k);
            for (std::size_t j : s.space.interior()) best = std::max(best, std::abs(s.u_at(k, j, w)));
        }
    }
    return best;
}

/// Sup error over times and interior points against the closed form (deterministic problems).
double sup_error(const SolutionField& s, const ScenarioProblem& p) {
    double e = 0.0;
    const double zero[kMaxDim] = {0.0, 0.0};
    for (int k = 0; k <= s.time.steps(); ++k) {
        for (std::size_t j : s.space.interior()) e = std::max(e, std::abs(s.u_at(k, j) - p.u_exact(s.time.node(k), s.space.point(j), zero)));
    }
    return e;
}

struct RmsError {
    double rms = 0.0;
    double standard_error = 0.0;
};

/// RMS over paths, times and interior points of (numeric - exact), with the SE from per-path means.
RmsError rms_error(const SolutionField& s, const PathEnsemble& paths, bool v, const ScenarioProblem& p) {
    const int M = paths.paths;
    std::vector<double> per_path(static_cast<std::size_t>(M), 0.0);
    const auto& pts = s.space.interior();
    const double count = static_cast<double>(pts.size()) * (s.time.steps() + 1);
    for (int m = 0; m < M; ++m) {
        double acc = 0.0;
        for (int k = 0; k <= s.time.steps(); ++k) {
            const double* w = paths.w(m, k);
            for (std::size_t j : pts) {
                const double num = v ? s.v_at(0, k, j, w) : s.u_at(k, j, w);
                const double ex = v ? p.v_exact(s.time.node(k), s.space.point(j), w) : p.u_exact(s.time.node(k), s.space.point(j), w);
                acc += (num - ex) * (num - ex);
            }
        }
        per_path[static_cast<std::size_t>(m)] = acc / count;
    }
    double mean = 0.0;
    for (double x : per_path) mean += x / M;
    double var = 0.0;
    for (double x : per_path) var += (x - mean) * (x - mean) / std::max(1, M - 1);
    RmsError r;
    r.rms = std::sqrt(mean);
    const double se_mean = std::sqrt(var / M);
    r.standard_error = r.rms > 0.0 ? se_mean / (2.0 * r.rms) : std::sqrt(se_mean);
    return r;
}

/// u(t_k, .) on the scenario grid from the periodic method-of-lines oracle, at every grid time.
std::vector<std::vector<double>> mol_oracle(const ScenarioProblem& p, const SolutionField& s) {
    const double h = s.space.spacing();
    const int N = 4 * static_cast<int>(std::ceil(2.0 * M_PI / h));
    const double dx = 2.0 * M_PI / N;
    std::vector<double> a(static_cast<std::size_t>(N));
    std::vector<double> u(static_cast<std::size_t>(N));
    double amax = 0.0;
    const double zero[kMaxDim] = {0.0, 0.0};
    for (int i = 0; i < N; ++i) {
        const Point x{i * dx, 0.0};
        a[static_cast<std::size_t>(i)] = p.coeffs.a_at(0.0, x)(0, 0);
        u[static_cast<std::size_t>(i)] = p.coeffs.Phi.value(s.time.horizon(), x, zero, 1);
        amax = std::max(amax, a[static_cast<std::size_t>(i)]);
    }
    const int K = s.time.steps();
    const int sub = static_cast<int>(std::ceil(s.time.dt() / (0.4 * dx * dx / amax)));
    const double dt = s.time.dt() / sub;
    auto interp = [&](double x) {
        double y = std::fmod(x, 2.0 * M_PI);
        if (y < 0.0) y += 2.0 * M_PI;
        const int i = static_cast<int>(std::floor(y / dx));
        const double t = y / dx - i;
        auto at = [&](int k) { return u[static_cast<std::size_t>(((k % N) + N) % N)]; };
        const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
        return p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
    };
    std::vector<std::vector<double>> out(static_cast<std::size_t>(K + 1), std::vector<double>(s.space.size(), 0.0));
    std::vector<double> next(u.size());
    for (int k = K; k >= 0; --k) {
        for (std::size_t j : s.space.interior()) out[static_cast<std::size_t>(k)][j] = interp(s.space.point(j)[0]);
        if (k == 0) break;
        for (int n = 0; n < sub; ++n) {
            for (int i = 0; i < N; ++i) {
                const double l = u[static_cast<std::size_t>((i + N - 1) % N)];
                const double r = u[static_cast<std::size_t>((i + 1) % N)];
                const double c = u[static_cast<std::size_t>(i)];
                next[static_cast<std::size_t>(i)] = c + dt * a[static_cast<std::size_t>(i)] * (l - 2.0 * c + r) / (dx * dx);
            }
            u.swap(next);
        }
    }
    return out;
}

double lhs_norm(const SolutionField& s, const PathEnsemble* paths, double alpha) {
    const auto samples = field_samples(s, paths, 512);
    double total = holder_report(s.u_sample(NormFamily::s2, samples, 0), 0, alpha).total;
    total += holder_report(s.u_sample(NormFamily::l2, samples, 2), 2, alpha).total;
    total += holder_report(s.v_sample(NormFamily::l2, samples, 0), 0, alpha).total;
    return total;
}

double rhs_norm(const SolutionField& s, const CoefficientSet& c, const PathEnsemble* paths, double alpha) {
    const auto samples = field_samples(s, paths, 512);
    const int n = s.space.dim();
    FieldSample phi(NormFamily::l2_terminal, s.space, samples);
    for (int order = 0; order <= 1; ++order) {
        for (const MultiIndex& g : multi_indices_of_order(n, order)) phi.set(g, 0, project_data(c.Phi, s.basis, s.time, s.space, g).coef);
    }
    double total = holder_report(phi, 1, alpha).total;
    const DataFunctional& f = c.driver ? c.driver->f0 : c.f;
    if (!f.empty()) {
        FieldSample fs(NormFamily::l2, s.space, samples);
        fs.set(MultiIndex::zero(n), 0, project_data(f, s.basis, s.time, s.space, MultiIndex::zero(n)).coef);
        total += holder_report(fs, 0, alpha).total;
    }
    return total;
}

int steps_for_shifts(int steps, double horizon, const std::vector<double>& taus) {
    for (int mult = 1; mult <= 64; ++mult) {
        const int K = steps * mult;
        bool ok = true;
        for (double tau : taus) {
            const double q = tau / horizon * K;
            ok = ok && std::abs(q - std::round(q)) < 1e-9;
        }
        if (ok) return K;
    }
    throw Error(ErrorCode::invalid_shift, "no refinement of the time grid puts every tau on a node");
}

constexpr double kBelowOne = 1.0 - 1e-12;

}  // namespace

VerdictBundle run_apriori_study(const ScenarioSpec& spec, const std::vector<int>& steps, const std::vector<int>& points,
                                const std::vector<double>& kappas, Table* table) {
    VerdictBundle out;
    if (table != nullptr) *table = Table{{"steps", "points", "kappa", "lhs", "rhs", "ratio"}, {}};
    std::vector<double> ratios;
    double equivariance = 0.0;
    for (int K : steps) {
        for (int J : points) {
            double base = NAN;
            for (double kappa : kappas) {
                const ScenarioProblem p = build_problem(spec, kappa);
                const TimeGrid time = build_time_grid(spec.horizon, K);
                const SpaceGrid space = scenario_grid(spec, p, J);
                const auto paths = scenario_paths(spec, p, time);
                SolverConfig cfg;
                cfg.compute_residual = false;
                const SolutionField s = solve_problem(p, time, space, ptr(paths), cfg);
                const double lhs = lhs_norm(s, ptr(paths), spec.alpha);
                const double rhs = rhs_norm(s, p.coeffs, ptr(paths), spec.alpha);
                const double ratio = lhs / rhs;
                ratios.push_back(ratio);
                if (std::isnan(base)) {
                    base = ratio;
                } else {
                    equivariance = std::max(equivariance, std::abs(ratio / base - 1.0));
                }
                if (table != nullptr) table->rows.push_back({double(K), double(J), kappa, lhs, rhs, ratio});
            }
        }
    }
    const bool semilinear = spec.kind == ScenarioKind::semilinear_mode;
    double lo = INFINITY;
    double hi = 0.0;
    bool finite = true;
    for (double r : ratios) {
        finite = finite && std::isfinite(r) && r > 0.0;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    if (semilinear) {
        out.add(Verdict::judge("apriori.finite", finite ? 0.0 : 1.0,
                               {"ratio finite at the accepted beta", Provenance::theorem, 0.0},
                               {{"max_ratio", hi}}));
        return out;
    }
    out.add(Verdict::judge("apriori.spread", finite ? hi / lo : INFINITY,
                           {"max/min of LHS/RHS over the refinement lattice", Provenance::theorem, spec.tolerance("apriori", 1.3)},
                           {{"min_ratio", lo}, {"max_ratio", hi}}));
    if (kappas.size() > 1) {
        out.add(Verdict::judge("apriori.equivariance", equivariance,
                               {"scaling the data scales the solution; ratio invariant", Provenance::identity, 1e-10}));
    }
    return out;
}

std::string_view to_string(StudyAxis a) noexcept {
    switch (a) {
        case StudyAxis::time_step: return "dt";
        case StudyAxis::spacing: return "h";
        case StudyAxis::paths: return "paths";
        case StudyAxis::beta: return "beta";
    }
    return "h";
}

ConvergenceResult run_convergence_study(const ScenarioSpec& spec, StudyAxis axis) {
    ConvergenceResult r;
    const ScenarioProblem p = build_problem(spec);
    SolverConfig cfg;
    cfg.compute_residual = false;
    const std::string id = "convergence_" + std::string(to_string(axis));
    if (axis == StudyAxis::beta) {
        r.table = Table{{"beta", "contraction_factor", "iterations"}, {}};
        const TimeGrid time = build_time_grid(spec.horizon, spec.steps);
        const SpaceGrid space = scenario_grid(spec, p, spec.points);
        std::vector<double> factors;
        cfg.auto_raise_beta = false;
        for (double beta : spec.betas) {
            cfg.beta = beta;
            const SolutionField s = solve_problem(p, time, space, nullptr, cfg);
            factors.push_back(s.contraction_factor);
            r.table.rows.push_back({beta, s.contraction_factor, double(s.iterations)});
        }
        double worst = 0.0;
        for (std::size_t i = 1; i < factors.size(); ++i) worst = std::max(worst, factors[i] / factors[i - 1]);
        r.verdict = Verdict::judge("beta_sweep.decreasing", worst,
                                   {"contraction factor strictly decreasing in beta", Provenance::computed, kBelowOne},
                                   {{"factors", factors}});
        return r;
    }
    if (!p.u_exact) {
        r.verdict = Verdict::advisory(id + ".order", NAN, {"no closed-form oracle; study skipped", Provenance::computed, 0.0});
        return r;
    }
    if (axis == StudyAxis::paths) {
        if (!p.stochastic) throw Error(ErrorCode::invalid_argument, "path study needs a stochastic scenario");
        // E[u(t, x0)^2] by Monte Carlo, RMS over independent replicas.
        r.table = Table{{"paths", "rms_error"}, {}};
        const TimeGrid time = build_time_grid(spec.horizon, spec.steps);
        const SpaceGrid space = scenario_grid(spec, p, spec.points);
        const PathEnsemble probe = sample_paths(2, 1, time, spec.seed);
        const SolutionField s = solve_problem(p, time, space, &probe, cfg);
        const int k = time.steps() / 2;
        const std::size_t j = space.flatten({static_cast<int>(std::lround((1.0 + space.radius()) / space.spacing())), 0});
        const double tk = time.node(k);
        const double exact = std::pow(p.v_exact(tk, space.point(j), nullptr), 2) * tk;
        constexpr int replicas = 16;
        std::vector<double> ms;
        std::vector<double> errs;
        for (int M : spec.paths_sweep) {
            double sq = 0.0;
            for (int rep = 0; rep < replicas; ++rep) {
                const PathEnsemble e = sample_paths(M, 1, time, spec.seed + 7919u * static_cast<std::uint64_t>(rep + 1) + static_cast<std::uint64_t>(M));
                double mean = 0.0;
                for (int m = 0; m < M; ++m) mean += std::pow(s.u_at(k, j, e.w(m, k)), 2) / M;
                sq += (mean - exact) * (mean - exact) / replicas;
            }
            ms.push_back(M);
            errs.push_back(std::sqrt(sq));
            r.table.rows.push_back({double(M), std::sqrt(sq)});
        }
        const double slope = log_slope(ms, errs);
        r.verdict = Verdict::judge(id + ".exponent", std::abs(slope + 0.5),
                                   {"Monte Carlo error exponent within tolerance of -1/2", Provenance::computed,
                                    spec.tolerance("convergence_paths", 0.15)},
                                   {{"fitted_exponent", slope}});
        return r;
    }
    const bool spacing = axis == StudyAxis::spacing;
    r.table = spacing ? Table{{"h", "points", "error"}, {}} : Table{{"dt", "steps", "error"}, {}};
    std::vector<double> xs;
    std::vector<double> errs;
    for (int v : spacing ? spec.h_sweep : spec.dt_sweep) {
        const TimeGrid time = build_time_grid(spec.horizon, spacing ? spec.steps : v);
        const SpaceGrid space = scenario_grid(spec, p, spacing ? v : spec.points);
        const SolutionField s = solve_problem(p, time, space, nullptr, cfg);
        const double e = sup_error(s, p);
        const double x = spacing ? space.spacing() : time.dt();
        xs.push_back(x);
        errs.push_back(e);
        r.table.rows.push_back({x, double(v), e});
    }
    const double order = log_slope(xs, errs);
    const std::string check = spacing ? "convergence_h" : "convergence_dt";
    r.verdict = Verdict::judge(id + ".order", order,
                               {"fitted order of the sup error", Provenance::computed, spec.tolerance(check, spacing ? 1.8 : 1.5),
                                Comparison::at_least},
                               {{"errors", errs}});
    return r;
}

namespace {

void guarded(ScenarioOutput& out, const std::string& check, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        out.verdicts.add(Verdict::judge(check + ".error", NAN, {"check completes without error", Provenance::identity, 0.0},
                                        {{"error", e.what()}}));
    }
}

void run_solving(const ScenarioSpec& spec, ScenarioOutput& out) {
    const ScenarioProblem p = build_problem(spec);
    const TimeGrid time = build_time_grid(spec.horizon, spec.steps);
    const SpaceGrid space = scenario_grid(spec, p, spec.points);
    const auto paths = scenario_paths(spec, p, time);
    std::optional<SolutionField> solved;
    guarded(out, "solve", [&] { solved = solve_problem(p, time, space, ptr(paths)); });
    if (!solved) return;
    const SolutionField& s = *solved;
    const double scale = field_scale(s, ptr(paths));
    if (!s.advisories.empty()) {
        out.verdicts.add(Verdict::advisory("solve.advisories", static_cast<double>(s.advisories.size()),
                                           {"solver advisories", Provenance::computed, 0.0}, {{"messages", s.advisories}}));
    }

    if (spec.wants("closed_form")) {
        guarded(out, "closed_form", [&] {
            if (!p.u_exact) throw Error(ErrorCode::invalid_argument, "scenario has no closed form");
            if (!p.stochastic) {
                out.verdicts.add(Verdict::judge("closed_form.u_sup_error", sup_error(s, p),
                                                {"sup error against the closed form", spec.oracle, spec.tolerance("closed_form", 1e-3)}));
                return;
            }
            const double allowance = 2.0 * (time.dt() + space.spacing() * space.spacing()) * spec.amplitude;
            const RmsError eu = rms_error(s, *paths, false, p);
            const RmsError ev = rms_error(s, *paths, true, p);
            out.verdicts.add(Verdict::judge("closed_form.u_rms_error", eu.rms,
                                            {"RMS error within 3 SE plus discretization allowance", spec.oracle,
                                             3.0 * eu.standard_error + allowance},
                                            {{"standard_error", eu.standard_error}, {"paths", paths->paths}}));
            out.verdicts.add(Verdict::judge("closed_form.v_rms_error", ev.rms,
                                            {"RMS error within 3 SE plus discretization allowance", spec.oracle,
                                             3.0 * ev.standard_error + allowance},
                                            {{"standard_error", ev.standard_error}, {"paths", paths->paths}}));
        });
    }
    if (spec.wants("fd_oracle")) {
        guarded(out, "fd_oracle", [&] {
            const auto oracle = mol_oracle(p, s);
            double e = 0.0;
            for (int k = 0; k <= time.steps(); ++k) {
                for (std::size_t j : space.interior()) e = std::max(e, std::abs(s.u_at(k, j) - oracle[static_cast<std::size_t>(k)][j]));
            }
            out.verdicts.add(Verdict::judge("fd_oracle.u_sup_error", e,
                                            {"sup distance to the method-of-lines oracle", Provenance::computed,
                                             spec.tolerance("fd_oracle", 1e-2)},
                                            {{"iterations", s.iterations}, {"converged", s.converged}}));
        });
    }
    ResidualStats residual;
    double residual_tol = 0.0;
    if (spec.wants("residual") || spec.wants("injected_defect")) {
        residual = s.has_residual ? s.residual : solution_residual(s, p.coeffs, ptr(paths));
        residual_tol = spec.tolerance("residual", residual_tolerance(residual, time.dt(), scale));
    }
    if (spec.wants("residual")) out.verdicts.add(residual_verdict(residual, residual_tol, "residual"));
    if (spec.wants("injected_defect")) {
        guarded(out, "injected_defect", [&] {
            SolutionField bad = s;
            SeparableSeries& u0 = bad.u.at(MultiIndex::zero(1));
            for (int k = 0; k <= time.steps(); ++k) {
                double* row = u0.slice(k, 0);
                for (std::size_t j = 0; j < space.size(); ++j) row[j] += 0.1;
            }
            const Verdict v = run_residual_check(bad, p.coeffs, residual_tol, ptr(paths), "residual");
            out.verdicts.add(Verdict::judge("injected_defect.detected", v.measured,
                                            {"u + 0.1 fails the residual check", Provenance::identity, residual_tol,
                                             Comparison::at_least},
                                            {{"residual_status", to_string(v.status)}, {"injected", 0.1}}));
        });
    }
    if (spec.wants("contraction")) {
        out.verdicts.add(Verdict::judge("contraction.fitted_ratio", s.converged ? s.contraction_factor : INFINITY,
                                        {"geometric decay of Picard differences", Provenance::theorem, kBelowOne},
                                        {{"beta", s.beta}, {"iterations", s.iterations}, {"advisories", s.advisories}}));
    }
    if (spec.wants("interpolation")) {
        guarded(out, "interpolation", [&] {
            const auto samples = field_samples(s, ptr(paths), 256);
            std::vector<FieldSample> fields{s.u_sample(NormFamily::l2, samples)};
            if (!s.deterministic()) fields.push_back(s.u_sample(NormFamily::s2, samples));
            const FieldSample mult = FieldSample::from_function(
                NormFamily::linf, space, time,
                [](double, const Point& x, const MultiIndex& g) {
                    return g.order() == 0 ? 1.0 + 0.5 * std::sin(x[0]) : 0.5 * std::sin(x[0] + 0.5 * M_PI * g.order());
                },
                2);
            int violations = 0;
            nlohmann::json detail = nlohmann::json::array();
            for (double alpha : spec.alphas) {
                for (const FieldSample& f : fields) {
                    const InterpolationReport ir = check_interpolation(f, alpha, spec.epsilons);
                    const ProductReport pr = check_product_inequalities(mult, f, alpha);
                    violations += ir.violations() + pr.violations(1e-9);
                    detail.push_back({{"alpha", alpha}, {"family", to_string(f.family())}, {"interpolation", ir.to_json()}, {"product", pr.to_json()}});
                }
            }
            out.verdicts.add(Verdict::judge("interpolation.violations", violations,
                                            {"no interpolation or product inequality violated", Provenance::theorem, 0.0},
                                            {{"reports", detail}}));
        });
    }
    if (spec.wants("localization")) {
        guarded(out, "localization", [&] {
            const LocalizedProblem lp = localize(s, p.coeffs, {0.5, 0.0}, spec.theta, ptr(paths));
            const double ratio = lp.residual.rms / std::max(lp.parent_residual.rms, 1e-300);
            out.verdicts.add(Verdict::judge("localization.residual_ratio", ratio,
                                            {"localized residual at most 10x the parent residual", Provenance::computed,
                                             spec.tolerance("localization", 10.0)},
                                            {{"localized", lp.residual.rms}, {"parent", lp.parent_residual.rms}}));
            const LocalizationReport rep =
                check_localization_inequality(s.u_sample(NormFamily::l2, field_samples(s, ptr(paths), 256)), spec.theta, 2, spec.alpha);
            out.verdicts.add(Verdict::judge("localization.slack", rep.slack,
                                            {"masked-norm inequality holds", Provenance::theorem, 0.0, Comparison::at_least},
                                            rep.to_json()));
        });
    }
    if (spec.wants("time_shift")) {
        guarded(out, "time_shift", [&] {
            const int K = steps_for_shifts(spec.steps, spec.horizon, spec.taus);
            std::optional<SolutionField> fine;
            std::optional<PathEnsemble> fine_paths;
            if (K != spec.steps) {
                const TimeGrid t2 = build_time_grid(spec.horizon, K);
                fine_paths = scenario_paths(spec, p, t2);
                SolverConfig cfg;
                cfg.compute_residual = false;
                fine = solve_problem(p, t2, space, ptr(fine_paths), cfg);
            }
            const SolutionField& field = fine ? *fine : s;
            const PathEnsemble* e = fine ? ptr(fine_paths) : ptr(paths);
            Table t{{"tau", "norm", "ratio"}, {}};
            std::vector<double> ratios;
            for (double tau : spec.taus) {
                const double n = time_shift_norm(field, tau, e, spec.alpha);
                ratios.push_back(n / std::sqrt(tau));
                t.rows.push_back({tau, n, ratios.back()});
            }
            double worst = 0.0;
            for (std::size_t i = 1; i < ratios.size(); ++i) worst = std::max(worst, ratios[i] / ratios[i - 1]);
            out.verdicts.add(Verdict::judge("time_shift.ratio_trend", worst,
                                            {"norm / sqrt(tau) non-increasing within 20%", Provenance::theorem,
                                             spec.tolerance("time_shift", 1.2)},
                                            {{"steps", K}, {"ratios", ratios}}));
            out.tables["norm_vs_tau"] = std::move(t);
        });
    }
    if (spec.wants("apriori")) {
        guarded(out, "apriori", [&] {
            Table t;
            const bool semilinear = spec.kind == ScenarioKind::semilinear_mode;
            out.verdicts.add(run_apriori_study(spec, semilinear ? std::vector<int>{spec.steps} : spec.steps_sweep,
                                               semilinear ? std::vector<int>{spec.points} : spec.points_sweep,
                                               semilinear ? std::vector<double>{1.0} : spec.kappas, &t));
            out.tables["apriori_ratio"] = std::move(t);
        });
    }
    const std::pair<const char*, StudyAxis> studies[] = {
        {"convergence_h", StudyAxis::spacing}, {"convergence_dt", StudyAxis::time_step},
        {"convergence_paths", StudyAxis::paths}, {"beta_sweep", StudyAxis::beta}};
    for (const auto& [check, axis] : studies) {
        if (!spec.wants(check)) continue;
        guarded(out, check, [&, axis = axis] {
            ConvergenceResult c = run_convergence_study(spec, axis);
            out.verdicts.add(c.verdict);
            const std::string name = axis == StudyAxis::beta ? "contraction_vs_beta" : "error_vs_" + std::string(to_string(axis));
            out.tables[name] = std::move(c.table);
        });
    }
    if (spec.wants("export")) {
        std::ostringstream csv;
        const int stride = std::max(1, spec.steps / 20);
        s.write_csv(csv, ptr(paths), 4, stride);
        out.files["solution.csv"] = csv.str();
        guarded(out, "export", [&] {
            // Read the table back: row count and the path-0 values.
            std::istringstream in(csv.str());
            std::string line;
            std::getline(in, line);
            const int M = s.deterministic() ? 1 : std::min(4, paths->paths);
            const std::size_t expected = static_cast<std::size_t>(M) * static_cast<std::size_t>(spec.steps / stride + 1) * space.size();
            std::size_t rows = 0;
            double worst = 0.0;
            while (std::getline(in, line)) {
                const std::size_t at = rows++;
                if (at >= space.size() * static_cast<std::size_t>(spec.steps / stride + 1)) continue;
                std::istringstream fields(line);
                std::string cell;
                std::vector<double> v;
                while (std::getline(fields, cell, ',')) v.push_back(std::stod(cell));
                const int k = static_cast<int>(at / space.size()) * stride;
                const std::size_t j = at % space.size();
                worst = std::max(worst, std::abs(v[3] - s.u_at(k, j, paths ? paths->w(0, k) : nullptr)));
            }
            out.verdicts.add(Verdict::judge("export.round_trip", rows == expected ? worst : INFINITY,
                                            {"exported rows reproduce the field", Provenance::identity, 1e-12 * std::max(1.0, scale)},
                                            {{"rows", rows}, {"expected_rows", expected}}));
        });
        out.files["solution_summary.json"] = s.summary().dump(2);
    }
}

}  // namespace

ScenarioOutput run_scenario(const ScenarioSpec& spec, const std::vector<ScenarioSpec>& catalog) {
    ScenarioOutput out;
    guarded(out, "spec", [&] { spec.validate(); });
    if (out.verdicts.any_fail()) return out;
    switch (spec.kind) {
        case ScenarioKind::kernel_suite:
            guarded(out, "kernel_suite", [&] {
                KernelSuiteParams params;
                params.dims = spec.kernel_dims;
                params.alpha = spec.alpha;
                nlohmann::json reports;
                out.verdicts.add(run_kernel_suite(params, &reports));
                out.files["kernel_suite.json"] = reports.dump(2);
            });
            break;
        case ScenarioKind::bsde_regression:
            guarded(out, "bsde_regression", [&] {
                Table t;
                out.verdicts.add(run_bsde_cross_validation(spec.paths, spec.steps, spec.seed, &t));
                out.tables["bsde_regression"] = std::move(t);
            });
            break;
        case ScenarioKind::suite:
            for (const std::string& target : spec.targets) {
                guarded(out, target, [&] {
                    std::optional<ScenarioSpec> base = find_scenario(catalog, target);
                    if (!base) throw Error(ErrorCode::invalid_input, "unknown target scenario '" + target + "'");
                    if (base->kind == ScenarioKind::suite) throw Error(ErrorCode::invalid_input, "suites cannot nest");
                    base->checks = spec.checks;
                    for (const auto& [k, v] : spec.tolerances) base->tolerances[k] = v;
                    base->steps_sweep = spec.steps_sweep;
                    base->points_sweep = spec.points_sweep;
                    base->kappas = spec.kappas;
                    base->taus = spec.taus;
                    base->alpha = spec.alpha;
                    ScenarioOutput sub = run_scenario(*base, catalog);
                    out.verdicts.add(sub.verdicts, target);
                    for (auto& [name, table] : sub.tables) out.tables[target + "." + name] = std::move(table);
                    for (auto& [name, file] : sub.files) out.files[target + "." + name] = std::move(file);
                });
            }
            break;
        default:
            run_solving(spec, out);
            if (spec.wants("kernel_suite")) {
                guarded(out, "kernel_suite", [&] {
                    KernelSuiteParams params;
                    params.dims = spec.kernel_dims;
                    nlohmann::json reports;
                    out.verdicts.add(run_kernel_suite(params, &reports));
                    out.files["kernel_suite.json"] = reports.dump(2);
                });
            }
    }
    out.verdicts.sort();
    return out;
}

}  // namespace bspde
