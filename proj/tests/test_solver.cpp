#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bspde/solver.hpp"

using namespace bspde;

namespace {

SpaceGrid grid_for(double Lambda, double horizon, int per_axis = 257, double interior = 2.0) {
    return build_space_grid(1, truncation_radius(interior, Lambda, horizon), per_axis, interior);
}

CoefficientSet heat(double a) {
    CoefficientSet c = CoefficientSet::constant_diffusion(1, SmallMatrix{1, {a, 0.0, 0.0, 0.0}});
    return c;
}

SpaceFunction sine() { return SpaceFunction::sine({1.0, 0.0}); }

/// Largest deviation from the oracle over every time and interior point.
template <class Fn>
double sup_error(const SolutionField& s, const Fn& oracle) {
    double e = 0.0;
    for (int k = 0; k <= s.time.steps(); ++k) {
        for (std::size_t j : s.space.interior()) e = std::max(e, std::abs(s.u_at(k, j) - oracle(s.time.node(k), s.space.point(j)[0])));
    }
    return e;
}

/// Periodic method of lines on [0, 2 pi) with explicit Euler, backward from T.
std::vector<double> mol_oracle(const std::function<double(double)>& a, const std::function<double(double)>& phi, double T,
                               int N, std::vector<double>& xs) {
    const double h = 2.0 * M_PI / N;
    double amax = 0.0;
    xs.resize(static_cast<std::size_t>(N));
    std::vector<double> u(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        xs[static_cast<std::size_t>(i)] = i * h;
        u[static_cast<std::size_t>(i)] = phi(i * h);
        amax = std::max(amax, a(i * h));
    }
    const int steps = static_cast<int>(std::ceil(T / (0.4 * h * h / amax)));
    const double dt = T / steps;
    std::vector<double> next(u.size());
    for (int n = 0; n < steps; ++n) {
        for (int i = 0; i < N; ++i) {
            const double l = u[static_cast<std::size_t>((i + N - 1) % N)];
            const double r = u[static_cast<std::size_t>((i + 1) % N)];
            const double c = u[static_cast<std::size_t>(i)];
            next[static_cast<std::size_t>(i)] = c + dt * a(i * h) * (l - 2.0 * c + r) / (h * h);
        }
        u.swap(next);
    }
    return u;
}

double periodic_cubic(const std::vector<double>& u, double x) {
    const int N = static_cast<int>(u.size());
    const double h = 2.0 * M_PI / N;
    double y = std::fmod(x, 2.0 * M_PI);
    if (y < 0.0) y += 2.0 * M_PI;
    const int i = static_cast<int>(std::floor(y / h));
    const double s = y / h - i;
    auto at = [&](int k) { return u[static_cast<std::size_t>(((k % N) + N) % N)]; };
    const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
    return p1 + 0.5 * s * (p2 - p0 + s * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + s * (3.0 * (p1 - p2) + p3 - p0)));
}

}  // namespace

TEST_CASE("convolution examples") {
    const SpaceGrid g = build_space_grid(1, 10.0, 401, 3.0);
    const double tau = 0.1;
    const HeatKernel unit(DiffusionCoefficient::constant(SmallMatrix::identity(1)));
    const HeatKernel half(DiffusionCoefficient::constant(SmallMatrix{1, {0.5, 0.0, 0.0, 0.0}}));
    std::vector<double> one(g.size(), 1.0), x(g.size()), x2(g.size()), s(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double p = g.point(j)[0];
        x[j] = p;
        x2[j] = p * p;
        s[j] = std::sin(p);
    }
    const MultiIndex z = MultiIndex::zero(1);
    const auto m = convolve(unit, 0.0, tau, g, one, z);
    const auto mx = convolve(unit, 0.0, tau, g, x, z);
    const auto mx2 = convolve(unit, 0.0, tau, g, x2, z);
    const auto ms = convolve(half, 0.0, tau, g, s, z);
    const auto ds = convolve(half, 0.0, tau, g, s, MultiIndex::unit(1, 0));
    const auto d2s = convolve(half, 0.0, tau, g, s, MultiIndex::pair(1, 0, 0));
    const double decay = std::exp(-tau / 2.0);
    for (std::size_t j : g.interior()) {
        const double p = g.point(j)[0];
        CHECK(std::abs(m[j] - 1.0) <= 1e-6);
        CHECK(std::abs(mx[j] - p) <= 1e-6);
        CHECK(std::abs(mx2[j] - (p * p + 2.0 * tau)) <= 1e-6);
        CHECK(std::abs(ms[j] - decay * std::sin(p)) <= 1e-5);
        CHECK(std::abs(ds[j] - decay * std::cos(p)) <= 1e-5);
        CHECK(std::abs(d2s[j] + decay * std::sin(p)) <= 1e-5);
    }
    CHECK_THROWS_AS(convolve(unit, 0.0, tau, g, one, MultiIndex{1, {3, 0}}), Error);
    try {
        (void)convolve(unit, 0.0, tau, g, one, MultiIndex{1, {3, 0}});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unsupported_order);
    }
    CHECK_THROWS_AS(convolve(unit, 0.2, 0.1, g, one, z), Error);
}

TEST_CASE("two-dimensional convolution keeps mass and the anisotropic second moment") {
    const SpaceGrid g = build_space_grid(2, 5.0, 81, 1.0);
    const HeatKernel k(DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 2.0)));
    std::vector<double> one(g.size(), 1.0), y2(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) y2[j] = g.point(j)[1] * g.point(j)[1];
    const auto m = convolve(k, 0.0, 0.1, g, one, MultiIndex::zero(2));
    const auto v = convolve(k, 0.0, 0.1, g, y2, MultiIndex::zero(2));
    for (std::size_t j : g.interior()) {
        CHECK(std::abs(m[j] - 1.0) <= 1e-6);
        CHECK(std::abs(v[j] - (g.point(j)[1] * g.point(j)[1] + 2.0 * 2.0 * 0.1)) <= 1e-6);
    }
}

TEST_CASE("deterministic closed forms") {
    const TimeGrid t = build_time_grid(1.0, 100);
    const double T = 1.0;
    SUBCASE("heat quadratic") {
        CoefficientSet c = heat(1.0);
        c.Phi = DataFunctional::deterministic_term(SpaceFunction::monomial(2));
        const SolutionField s = solve_deterministic_pde(c, t, grid_for(1.0, T));
        CHECK(sup_error(s, [&](double tt, double x) { return x * x + 2.0 * (T - tt); }) <= 1e-3);
        CHECK(s.has_residual);
        CHECK(s.residual.rms <= 1e-3);
    }
    SUBCASE("sin decay through the model route") {
        CoefficientSet c = heat(0.5);
        c.Phi = DataFunctional::deterministic_term(sine());
        const SolutionField s = solve_model(c, t, grid_for(0.5, T), nullptr);
        CHECK(sup_error(s, [&](double tt, double x) { return std::exp(-(T - tt) / 2.0) * std::sin(x); }) <= 1e-3);
        // Deterministic data gives v = 0 exactly.
        for (double v : s.dv(0, MultiIndex::zero(1)).coef) CHECK(v == 0.0);
    }
    SUBCASE("transport with decay") {
        CoefficientSet c = heat(1.0);
        c.b = [](double, const Point&) { return Point{1.0, 0.0}; };
        c.Phi = DataFunctional::deterministic_term(sine());
        const SolutionField s = solve_deterministic_pde(c, t, grid_for(1.0, T));
        CHECK(s.converged);
        CHECK(sup_error(s, [&](double tt, double x) { return std::exp(-(T - tt)) * std::sin(x + T - tt); }) <= 1e-3);
    }
    SUBCASE("constant source") {
        CoefficientSet c = heat(1.0);
        c.f = DataFunctional::deterministic_term(SpaceFunction::constant(1.0));
        const SolutionField s = solve_deterministic_pde(c, t, grid_for(1.0, T));
        CHECK(sup_error(s, [&](double tt, double) { return T - tt; }) <= 1e-3);
    }
    SUBCASE("constant zeroth-order coefficient") {
        const double c0 = 0.3;
        CoefficientSet c = heat(1.0);
        c.c = [c0](double, const Point&) { return c0; };
        c.Phi = DataFunctional::deterministic_term(sine());
        const SolutionField s = solve_deterministic_pde(c, t, grid_for(1.0, T));
        CHECK(sup_error(s, [&](double tt, double x) { return std::exp((c0 - 1.0) * (T - tt)) * std::sin(x); }) <= 1e-3);
    }
}

TEST_CASE("terminal condition is exact and zero data gives zero") {
    const TimeGrid t = build_time_grid(1.0, 20);
    const SpaceGrid g = grid_for(0.5, 1.0, 129);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::deterministic_term(sine());
    const SolutionField s = solve_model(c, t, g, nullptr);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(s.u_at(t.steps(), j) == std::sin(g.point(j)[0]));

    const SolutionField z = solve_model(heat(0.5), t, g, nullptr);
    for (const auto& [gamma, series] : z.u) {
        for (double v : series.coef) CHECK(v == 0.0);
    }
}

TEST_CASE("stochastic model solution sin(x) W_t") {
    const TimeGrid t = build_time_grid(1.0, 50);
    const SpaceGrid g = grid_for(0.5, 1.0, 129);
    const PathEnsemble paths = sample_paths(2000, 1, t, 11);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::single(sine(), PathFactor::monomial(1));
    const SolutionField s = solve_model(c, t, g, &paths);
    REQUIRE(s.factors() == 2);
    const int w = s.basis->find(PathFactor::monomial(1));
    REQUIRE(w >= 0);
    double eu = 0.0;
    double ev = 0.0;
    for (int k = 0; k <= t.steps(); ++k) {
        const double amp = std::exp(-(1.0 - t.node(k)) / 2.0);
        for (std::size_t j : g.interior()) {
            const double x = g.point(j)[0];
            eu = std::max(eu, std::abs(s.du(MultiIndex::zero(1)).at(k, static_cast<std::size_t>(w), j) - amp * std::sin(x)));
            eu = std::max(eu, std::abs(s.du(MultiIndex::zero(1)).at(k, 0, j)));
            ev = std::max(ev, std::abs(s.dv(0, MultiIndex::zero(1)).at(k, 0, j) - amp * std::sin(x)));
        }
    }
    CHECK(eu <= 1e-6);
    CHECK(ev <= 1e-6);
    REQUIRE(s.has_residual);
    CHECK(s.residual.rms <= 3.0 * s.residual.standard_error + 2.0 * t.dt());
}

TEST_CASE("direct assembly agrees with the recursive assembly") {
    const TimeGrid t = build_time_grid(0.5, 10);
    const SpaceGrid g = grid_for(0.5, 0.5, 97);
    CoefficientSet c = heat(0.5);
    c.sigma = [](double, const Point&) { return DriftVector{0.3, 0.0}; };
    c.Phi = DataFunctional::single(sine(), PathFactor::monomial(2));
    c.f = DataFunctional::single(SpaceFunction::sine({1.0, 0.0}, 0.4), PathFactor::monomial(1));
    SolverConfig rec;
    rec.compute_residual = false;
    SolverConfig dir = rec;
    dir.assembly = AssemblyMode::direct;
    const SolutionField a = solve_model(c, t, g, nullptr, rec);
    const SolutionField b = solve_model(c, t, g, nullptr, dir);
    double du = 0.0;
    double dv = 0.0;
    for (const MultiIndex& gamma : {MultiIndex::zero(1), MultiIndex::unit(1, 0), MultiIndex::pair(1, 0, 0)}) {
        for (int k = 0; k <= t.steps(); ++k) {
            for (std::size_t q = 0; q < a.factors(); ++q) {
                for (std::size_t j : g.interior()) du = std::max(du, std::abs(a.du(gamma).at(k, q, j) - b.du(gamma).at(k, q, j)));
            }
        }
    }
    for (int k = 0; k <= t.steps(); ++k) {
        for (std::size_t q = 0; q < a.factors(); ++q) {
            for (std::size_t j : g.interior()) dv = std::max(dv, std::abs(a.dv(0, MultiIndex::zero(1)).at(k, q, j) - b.dv(0, MultiIndex::zero(1)).at(k, q, j)));
        }
    }
    // Composed one-step stencils versus single-lag stencils.
    CHECK(du <= 1e-6);
    CHECK(dv <= 1e-6);
}

TEST_CASE("linearity of the linear solver") {
    const TimeGrid t = build_time_grid(1.0, 20);
    const SpaceGrid g = grid_for(0.5, 1.0, 129);
    CoefficientSet a = heat(0.5);
    a.Phi = DataFunctional::single(sine(), PathFactor::monomial(1));
    a.f = DataFunctional::deterministic_term(SpaceFunction::monomial(1));
    CoefficientSet b = heat(0.5);
    b.Phi = DataFunctional::deterministic_term(SpaceFunction::sine({2.0, 0.0}));
    b.f = DataFunctional::single(SpaceFunction::constant(1.0), PathFactor::monomial(1));
    CoefficientSet ab = heat(0.5);
    ab.Phi = a.Phi + b.Phi;
    ab.f = a.f + b.f;
    SolverConfig cfg;
    cfg.compute_residual = false;
    const SolutionField sa = solve_model(a, t, g, nullptr, cfg);
    const SolutionField sb = solve_model(b, t, g, nullptr, cfg);
    const SolutionField sab = solve_model(ab, t, g, nullptr, cfg);
    const double w[1] = {0.7};
    double e = 0.0;
    for (int k = 0; k <= t.steps(); ++k) {
        for (std::size_t j : g.interior()) e = std::max(e, std::abs(sab.u_at(k, j, w) - sa.u_at(k, j, w) - sb.u_at(k, j, w)));
    }
    CHECK(e <= 1e-12);
}

TEST_CASE("routing and validation errors") {
    const TimeGrid t = build_time_grid(1.0, 10);
    const SpaceGrid g = grid_for(1.0, 1.0, 65);
    CoefficientSet c = heat(1.0);
    c.b = [](double, const Point&) { return Point{1.0, 0.0}; };
    try {
        (void)solve_model(c, t, g, nullptr);
        FAIL("expected a reroute");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_route);
        CHECK(std::string(e.what()).find("solve_variable_linear") != std::string::npos);
    }
    CoefficientSet s = heat(1.0);
    s.Phi = DataFunctional::single(sine(), PathFactor::monomial(1));
    CHECK_THROWS_AS(solve_deterministic_pde(s, t, g), Error);

    CoefficientSet bad = heat(1.0);
    bad.lambda = 0.0;
    try {
        (void)solve_model(bad, t, g, nullptr);
        FAIL("expected an assumption violation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::assumption_violation);
        CHECK(std::string(e.what()).find("super-parabolicity") != std::string::npos);
    }
    CoefficientSet lip = heat(1.0);
    lip.driver = SemilinearDriver::general([](double, const Point&, const Point&, double u, const DriftVector&) { return 3.0 * u; },
                                           1.0, "3u");
    try {
        (void)solve_semilinear(lip, t, g, nullptr);
        FAIL("expected a Lipschitz violation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::assumption_violation);
    }
    SolverConfig cfg;
    cfg.tolerance = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("variable diffusion against a method-of-lines oracle") {
    const TimeGrid t = build_time_grid(1.0, 100);
    const SpaceGrid g = grid_for(1.4, 1.0);
    CoefficientSet c = heat(1.0);
    c.a = [](double, const Point& x) { return SmallMatrix{1, {1.0 + 0.4 * std::sin(x[0]), 0.0, 0.0, 0.0}}; };
    c.a_space_invariant = false;
    c.lambda = 0.6;
    c.Lambda = 1.4;
    c.Phi = DataFunctional::deterministic_term(sine());
    const SolutionField s = solve_deterministic_pde(c, t, g);
    CHECK(s.converged);
    CHECK(s.iterations > 1);
    const double h = g.spacing();
    const int N = 4 * static_cast<int>(std::ceil(2.0 * M_PI / h));
    std::vector<double> xs;
    const std::vector<double> oracle = mol_oracle([](double x) { return 1.0 + 0.4 * std::sin(x); },
                                                  [](double x) { return std::sin(x); }, 1.0, N, xs);
    double e = 0.0;
    for (std::size_t j : g.interior()) e = std::max(e, std::abs(s.u_at(0, j) - periodic_cubic(oracle, g.point(j)[0])));
    CHECK(e <= 1e-2);
    CHECK(s.residual.rms <= 1e-2);
}

TEST_CASE("coarse time steps fall back to the right-point rule") {
    CoefficientSet c = heat(0.5);
    c.a = [](double, const Point& x) { return SmallMatrix{1, {0.5 * (1.0 + 0.4 * std::sin(x[0])), 0.0, 0.0, 0.0}}; };
    c.a_space_invariant = false;
    c.lambda = 0.3;
    c.Lambda = 0.7;
    c.Phi = DataFunctional::deterministic_term(sine());
    SolverConfig cfg;
    cfg.compute_residual = false;
    const SpaceGrid g = grid_for(0.7, 1.0);
    const SolutionField coarse = solve_deterministic_pde(c, build_time_grid(1.0, 25), g, cfg);
    CHECK(coarse.converged);
    REQUIRE_FALSE(coarse.advisories.empty());
    CHECK(coarse.advisories.front().find("right-point") != std::string::npos);

    const SolutionField fine = solve_deterministic_pde(c, build_time_grid(1.0, 100), g, cfg);
    for (const std::string& a : fine.advisories) CHECK(a.find("right-point") == std::string::npos);
    double e = 0.0;
    for (std::size_t j : g.interior()) e = std::max(e, std::abs(coarse.u_at(0, j) - fine.u_at(0, j)));
    CHECK(e <= 1e-2);
}

TEST_CASE("space-invariant coefficients converge in one iteration") {
    const TimeGrid t = build_time_grid(1.0, 20);
    const SpaceGrid g = grid_for(0.5, 1.0, 129);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::deterministic_term(sine());
    SolverConfig cfg;
    cfg.compute_residual = false;
    const SolutionField a = solve_variable_linear(c, t, g, nullptr, cfg);
    const SolutionField b = solve_model(c, t, g, nullptr, cfg);
    CHECK(a.iterations == 1);
    CHECK(a.du(MultiIndex::zero(1)).coef == b.du(MultiIndex::zero(1)).coef);
}

TEST_CASE("semilinear equation") {
    const TimeGrid t = build_time_grid(1.0, 100);
    const double T = 1.0;
    SUBCASE("mode decay with f = -u") {
        CoefficientSet c = heat(0.5);
        c.Phi = DataFunctional::deterministic_term(sine());
        c.driver = SemilinearDriver::general([](double, const Point&, const Point&, double u, const DriftVector&) { return -u; },
                                             1.0, "-u");
        const SolutionField s = solve_semilinear(c, t, grid_for(0.5, T), nullptr);
        CHECK(s.converged);
        CHECK(s.contraction_factor < 1.0);
        CHECK(s.beta == 8.0);
        CHECK(sup_error(s, [&](double tt, double x) { return std::exp(-1.5 * (T - tt)) * std::sin(x); }) <= 1e-3);
    }
    SUBCASE("a driver independent of the unknowns is one linear solve") {
        CoefficientSet c = heat(0.5);
        c.Phi = DataFunctional::deterministic_term(sine());
        c.driver = SemilinearDriver::general([](double, const Point& x, const Point&, double, const DriftVector&) { return std::cos(x[0]); },
                                             0.0, "cos");
        SolverConfig cfg;
        cfg.beta = 0.0;
        const SolutionField s = solve_semilinear(c, t, grid_for(0.5, T, 129), nullptr, cfg);
        CHECK(s.iterations == 1);
        CoefficientSet l = heat(0.5);
        l.Phi = c.Phi;
        l.f = DataFunctional::deterministic_term(SpaceFunction::sine({1.0, 0.0}, 0.5 * M_PI));
        const SolutionField r = solve_model(l, t, grid_for(0.5, T, 129), nullptr);
        double e = 0.0;
        for (std::size_t i = 0; i < r.du(MultiIndex::zero(1)).coef.size(); ++i)
            e = std::max(e, std::abs(r.du(MultiIndex::zero(1)).coef[i] - s.du(MultiIndex::zero(1)).coef[i]));
        CHECK(e <= 1e-12);
    }
    SUBCASE("contraction improves with beta") {
        CoefficientSet c = heat(0.5);
        c.Phi = DataFunctional::deterministic_term(sine());
        c.driver = SemilinearDriver::linear(2.0);
        std::vector<double> factors;
        for (double beta : {0.0, 5.0, 20.0}) {
            SolverConfig cfg;
            cfg.beta = beta;
            cfg.auto_raise_beta = false;
            cfg.compute_residual = false;
            const SolutionField s = solve_semilinear(c, build_time_grid(1.0, 50), grid_for(0.5, T, 129), nullptr, cfg);
            factors.push_back(s.contraction_factor);
            CHECK(s.contraction_factor < 1.0);
        }
        CHECK(factors[0] > factors[1]);
        CHECK(factors[1] > factors[2]);
    }
}

TEST_CASE("bump field") {
    const BumpField b{1, {0.3, 0.0}, 0.5};
    CHECK(b.value({0.3, 0.0}) == 1.0);
    CHECK(b.value({0.75, 0.0}) == 1.0);
    CHECK(b.value({1.31, 0.0}) == 0.0);
    CHECK(b.value({-0.71, 0.0}) == 0.0);
    for (double x = -1.0; x <= 1.6; x += 0.01) {
        const double v = b.value({x, 0.0});
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // First and second derivatives match differences of the lower order across both seams.
    const double h = 1e-5;
    for (double x : {0.8 - 1e-3, 0.8, 0.8 + 1e-3, 1.05, 1.3 - 1e-3, 1.3, 1.3 + 1e-3, -0.2, -0.45}) {
        const double d1 = (b.value({x + h, 0.0}) - b.value({x - h, 0.0})) / (2.0 * h);
        CHECK(std::abs(b.derivative({x, 0.0}, MultiIndex::unit(1, 0)) - d1) <= 1e-5);
        const double d2 = (b.derivative({x + h, 0.0}, MultiIndex::unit(1, 0)) - b.derivative({x - h, 0.0}, MultiIndex::unit(1, 0))) / (2.0 * h);
        CHECK(std::abs(b.derivative({x, 0.0}, MultiIndex::pair(1, 0, 0)) - d2) <= 1e-4);
    }
    const BumpField b2{2, {0.0, 0.0}, 1.0};
    const Point p{1.2, 0.7};
    const double d = (b2.derivative({1.2, 0.7 + h}, MultiIndex::unit(2, 0)) - b2.derivative({1.2, 0.7 - h}, MultiIndex::unit(2, 0))) / (2.0 * h);
    CHECK(std::abs(b2.derivative(p, MultiIndex::pair(2, 0, 1)) - d) <= 1e-5);
}

TEST_CASE("localization") {
    const TimeGrid t = build_time_grid(1.0, 50);
    const SpaceGrid g = grid_for(1.4, 1.0, 129);
    CoefficientSet c = heat(1.0);
    c.a = [](double, const Point& x) { return SmallMatrix{1, {1.0 + 0.4 * std::sin(x[0]), 0.0, 0.0, 0.0}}; };
    c.a_space_invariant = false;
    c.lambda = 0.6;
    c.Lambda = 1.4;
    c.Phi = DataFunctional::deterministic_term(sine());
    const SolutionField s = solve_variable_linear(c, t, g, nullptr);
    const LocalizedProblem lp = localize(s, c, {0.5, 0.0}, 0.5, nullptr);
    CHECK(lp.terms.size() == 7);
    CHECK(lp.residual.rms <= 10.0 * lp.parent_residual.rms + 1e-14);

    // With a bump covering the box the commutator terms vanish where eta = 1.
    const LocalizedProblem wide = localize(s, c, {0.0, 0.0}, 100.0, nullptr);
    for (const auto& [name, series] : wide.terms) {
        if (name != "gradient_commutator" && name != "hessian_commutator") continue;
        for (double v : series.coef) CHECK(v == 0.0);
    }
    SolutionField stripped = s;
    stripped.u.erase(MultiIndex::pair(1, 0, 0));
    try {
        (void)localize(stripped, c, {0.0, 0.0}, 0.5, nullptr);
        FAIL("expected invalid input");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_input);
    }

    const FieldSample h = s.u_sample(NormFamily::l2, FactorSamples::deterministic(t));
    const LocalizationReport r = check_localization_inequality(h, 0.5, 2, 0.5);
    CHECK(r.slack >= 0.0);
    CHECK(std::isfinite(r.smallest_C));
    const FieldSample constant = FieldSample::from_function(
        NormFamily::l2, g, t, [](double, const Point&, const MultiIndex& m) { return m.order() == 0 ? 2.0 : 0.0; }, 2);
    const LocalizationReport rc = check_localization_inequality(constant, 0.5, 2, 0.5);
    CHECK(rc.slack >= 0.0);
    CHECK(rc.smallest_C == 0.0);
}

TEST_CASE("time-shift norm") {
    const TimeGrid t = build_time_grid(1.0, 80);
    const SpaceGrid g = grid_for(0.5, 1.0, 129);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::deterministic_term(sine());
    const SolutionField s = solve_model(c, t, g, nullptr);
    try {
        (void)time_shift_norm(s, 0.0, nullptr);
        FAIL("expected invalid shift");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_shift);
    }
    CHECK_THROWS_AS(time_shift_norm(s, 0.013, nullptr), Error);
    std::vector<double> ratios;
    for (double tau : {0.2, 0.1, 0.05, 0.025}) ratios.push_back(time_shift_norm(s, tau, nullptr) / std::sqrt(tau));
    for (std::size_t i = 1; i < ratios.size(); ++i) CHECK(ratios[i] <= 1.2 * ratios[i - 1]);

    CoefficientSet lin = heat(0.5);
    lin.Phi = DataFunctional::deterministic_term(SpaceFunction::monomial(1));
    const SolutionField l = solve_model(lin, t, grid_for(0.5, 1.0, 257), nullptr);
    CHECK(time_shift_norm(l, 0.1, nullptr) <= 1e-6);
}

TEST_CASE("export") {
    const TimeGrid t = build_time_grid(1.0, 4);
    const SpaceGrid g = grid_for(0.5, 1.0, 33);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::single(sine(), PathFactor::monomial(1));
    const PathEnsemble paths = sample_paths(10, 1, t, 5);
    const SolutionField s = solve_model(c, t, g, &paths);
    std::ostringstream out;
    s.write_csv(out, &paths, 2);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "path_id,t,x1,u,v_1");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2 * 5 * 33);
    const auto j = s.summary();
    CHECK(j.at("route") == "model");
    CHECK(j.contains("residual"));
}

TEST_CASE("under-resolved one-step kernels are rejected") {
    const TimeGrid t = build_time_grid(1.0, 100);
    CoefficientSet c = heat(0.5);
    c.Phi = DataFunctional::deterministic_term(sine());
    try {
        (void)solve_model(c, t, grid_for(0.5, 1.0, 65), nullptr);
        FAIL("expected ill-conditioned");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ill_conditioned);
    }
    const SolutionField s = solve_model(c, t, grid_for(0.5, 1.0, 129), nullptr);
    CHECK(s.advisories.size() == 1);
    CHECK(solve_model(c, t, grid_for(0.5, 1.0, 257), nullptr).advisories.empty());
}
