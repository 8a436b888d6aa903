#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "bspde/stochastic.hpp"

using namespace bspde;

namespace {

std::shared_ptr<const FactorBasis> basis_of(const DataFunctional& d, int dim = 1) {
    return std::make_shared<const FactorBasis>(FactorBasis::closure(dim, d.factors()));
}

SpaceFunction sin_x() { return SpaceFunction::sine({1.0, 0.0}); }

}  // namespace

TEST_CASE("path ensemble statistics and reproducibility") {
    const TimeGrid g = build_time_grid(1.0, 100);
    const PathEnsemble e = sample_paths(10000, 1, g, 42);
    for (int k : {0, 37, 99}) {
        double s = 0.0;
        double s2 = 0.0;
        for (int m = 0; m < e.paths; ++m) {
            s += e.dw(m, k, 0);
            s2 += e.dw(m, k, 0) * e.dw(m, k, 0);
        }
        const double mean = s / e.paths;
        const double var = s2 / e.paths - mean * mean;
        CHECK(std::abs(mean) <= 4.0 * std::sqrt(g.dt() / e.paths));
        CHECK(var >= 0.009);
        CHECK(var <= 0.011);
    }
    for (int m = 0; m < 10; ++m) CHECK(e.w(m, 0)[0] == 0.0);

    const PathEnsemble a = sample_paths(1, 2, g, 7);
    const PathEnsemble b = sample_paths(1, 2, g, 7);
    CHECK(a.increments == b.increments);
    CHECK_THROWS_AS(sample_paths(0, 1, g, 1), Error);
}

TEST_CASE("ensemble file round trip") {
    const TimeGrid g = build_time_grid(0.5, 8);
    const PathEnsemble e = sample_paths(5, 2, g, 99);
    const std::string file = "test_ensemble.bin";
    save_ensemble(e, file);
    const PathEnsemble r = load_ensemble(file, 0.5);
    CHECK(r.increments == e.increments);
    CHECK(r.positions == e.positions);
    CHECK(r.seed == 99);
    std::remove(file.c_str());
    CHECK_THROWS_AS(load_ensemble("missing_file.bin", 1.0), Error);
}

TEST_CASE("girsanov shift") {
    const TimeGrid g = build_time_grid(1.0, 50);
    const PathEnsemble e = sample_paths(10000, 1, g, 3);

    const GirsanovWeight none = girsanov_shift(e, constant_sigma({0.0, 0.0}), 1.0);
    CHECK(none.shifted == e.positions);
    CHECK(none.mean_density() == 1.0);

    const GirsanovWeight w = girsanov_shift(e, constant_sigma({1.0, 0.0}), 1.0);
    CHECK(std::abs(w.mean_density() - 1.0) <= 3.0 * w.density_standard_error());
    CHECK(w.shifted[50] == doctest::Approx(e.positions[50] - 1.0));

    // Bounded functional of the shifted path under D_T against the same functional of W.
    double weighted = 0.0;
    double plain = 0.0;
    double plain2 = 0.0;
    for (int m = 0; m < e.paths; ++m) {
        const double a = std::cos(w.shifted[static_cast<std::size_t>(m) * 51 + 50]);
        const double b = std::cos(e.w(m, 50)[0]);
        weighted += w.density[static_cast<std::size_t>(m)] * a;
        plain += b;
        plain2 += b * b;
    }
    weighted /= e.paths;
    plain /= e.paths;
    const double se = std::sqrt((plain2 / e.paths - plain * plain) / e.paths);
    CHECK(std::abs(weighted - plain) <= 3.0 * 2.0 * se);

    CHECK_THROWS_AS(girsanov_shift(e, constant_sigma({2.0, 0.0}), 1.0), Error);
}

TEST_CASE("conditional expectation under Q by weighted regression") {
    const TimeGrid g = build_time_grid(1.0, 20);
    const PathEnsemble e = sample_paths(10000, 1, g, 11);
    const auto basis = std::make_shared<const FactorBasis>(FactorBasis::monomials(1, 1));
    const ConditionalMaps reg = ConditionalMaps::regression(basis, e, constant_sigma({1.0, 0.0}));
    const ConditionalMaps exact = ConditionalMaps::closed_form(basis, g, {1.0, 0.0});
    const Eigen::MatrixXd P = reg.map(10, 20);
    const Eigen::MatrixXd Q = exact.map(10, 20);
    // E_Q[W_T | F_t] = W_t + (T - t).
    CHECK(Q(0, 1) == doctest::Approx(0.5));
    CHECK(Q(1, 1) == doctest::Approx(1.0));
    CHECK(std::abs(P(0, 1) - 0.5) < 0.05);
    CHECK(std::abs(P(1, 1) - 1.0) < 0.05);
    CHECK(reg.provenance() == "regression");
}

TEST_CASE("factor basis closure and gradients") {
    const FactorBasis b = FactorBasis::closure(1, {PathFactor::monomial(2), PathFactor::exponential(0.5)});
    REQUIRE(b.size() == 4);
    CHECK(b[0].is_one());
    CHECK(b[1] == PathFactor::monomial(1));
    CHECK(b[2] == PathFactor::monomial(2));
    const Eigen::MatrixXd D = b.gradient(0);
    CHECK(D(1, 2) == 2.0);
    CHECK(D(0, 1) == 1.0);
    CHECK(D(3, 3) == 0.5);
    CHECK(FactorBasis::monomials(2, 3).size() == 10);
    CHECK_THROWS_AS(FactorBasis::closure(1, {PathFactor::monomial(4)}), Error);
}

TEST_CASE("closed-form maps against Gaussian moments") {
    const TimeGrid g = build_time_grid(1.0, 10);
    const auto basis = std::make_shared<const FactorBasis>(FactorBasis::closure(1, {PathFactor::monomial(3), PathFactor::exponential(0.7)}));
    const ConditionalMaps c = ConditionalMaps::closed_form(basis, g, {0.3, 0.0});
    const Eigen::MatrixXd P = c.map(2, 10);
    const double lag = 0.8;
    const double mu = 0.3 * lag;
    // E[(w + X)^3], X ~ N(mu, lag): w^3 + 3 mu w^2 + 3 (mu^2 + lag) w + mu^3 + 3 mu lag.
    CHECK(P(3, 3) == doctest::Approx(1.0));
    CHECK(P(2, 3) == doctest::Approx(3.0 * mu));
    CHECK(P(1, 3) == doctest::Approx(3.0 * (mu * mu + lag)));
    CHECK(P(0, 3) == doctest::Approx(mu * mu * mu + 3.0 * mu * lag));
    CHECK(P(4, 4) == doctest::Approx(std::exp(0.7 * mu)));
    // Tower property.
    const Eigen::MatrixXd chain = c.map(2, 6) * c.map(6, 10);
    CHECK((chain - P).cwiseAbs().maxCoeff() < 1e-13);
    CHECK_THROWS_AS((void)c.map(5, 3), Error);
}

TEST_CASE("closed-form first family") {
    const TimeGrid g = build_time_grid(1.0, 40);
    const SpaceGrid s = build_space_grid(1, 3.0, 31, 2.0);
    const PathEnsemble e = sample_paths(500, 1, g, 5);

    SUBCASE("deterministic terminal") {
        const DataFunctional phi = DataFunctional::deterministic_term(sin_x());
        const BsdeSolution sol = solve_bsde_closed(phi, {0.0, 0.0}, basis_of(phi), g, s, &e);
        CHECK(sol.phi.factors() == 1);
        CHECK(sol.phi.at(0, 0, 20) == doctest::Approx(std::sin(s.point(20)[0])));
        CHECK(sol.psi[0].at(7, 0, 20) == 0.0);
        CHECK(sol.residual.max_abs < 1e-12);
    }
    SUBCASE("linear factor, zero sigma") {
        const DataFunctional phi = DataFunctional::single(sin_x(), PathFactor::monomial(1));
        const BsdeSolution sol = solve_bsde_closed(phi, {0.0, 0.0}, basis_of(phi), g, s, &e);
        CHECK(sol.phi.at(10, 1, 20) == doctest::Approx(std::sin(s.point(20)[0])));
        CHECK(std::abs(sol.phi.at(10, 0, 20)) < 1e-15);
        CHECK(sol.psi[0].at(10, 0, 20) == doctest::Approx(std::sin(s.point(20)[0])));
        CHECK(sol.residual.max_abs <= 1e-10 * 2.0);
    }
    SUBCASE("linear factor, constant sigma") {
        const double s0 = 0.6;
        const DataFunctional phi = DataFunctional::single(sin_x(), PathFactor::monomial(1));
        const BsdeSolution sol = solve_bsde_closed(phi, {s0, 0.0}, basis_of(phi), g, s, &e);
        const double h = std::sin(s.point(25)[0]);
        CHECK(sol.phi.at(8, 0, 25) == doctest::Approx(h * s0 * (1.0 - g.node(8))));
        CHECK(sol.phi.at(8, 1, 25) == doctest::Approx(h));
        CHECK(sol.residual.max_abs <= 1e-10 * 4.0);
    }
    SUBCASE("quadratic factor has an O(dt) residual") {
        const DataFunctional phi = DataFunctional::single(SpaceFunction::constant(1.0), PathFactor::monomial(2));
        const BsdeSolution sol = solve_bsde_closed(phi, {0.0, 0.0}, basis_of(phi), g, s, &e);
        CHECK(sol.phi.at(0, 0, 3) == doctest::Approx(1.0));
        CHECK(sol.residual.rms < 5.0 * g.dt());
    }
    SUBCASE("exponential martingale") {
        const DataFunctional phi = DataFunctional::single(SpaceFunction::constant(1.0), PathFactor::exponential(0.8));
        const BsdeSolution sol = solve_bsde_closed(phi, {0.5, 0.0}, basis_of(phi), g, s, &e);
        CHECK(sol.phi.at(0, 1, 0) == doctest::Approx(std::exp(0.8 * 0.5)));
        CHECK(sol.residual.rms < 5.0 * g.dt());
    }
    SUBCASE("zero terminal") {
        const BsdeSolution sol = solve_bsde_closed(DataFunctional::zero(), {0.0, 0.0}, basis_of(DataFunctional::zero()), g, s, &e);
        for (double c : sol.phi.coef) CHECK(c == 0.0);
        CHECK(sol.residual.max_abs == 0.0);
    }
    SUBCASE("factor outside the basis") {
        const DataFunctional phi = DataFunctional::single(sin_x(), PathFactor::monomial(2));
        CHECK_THROWS_AS(solve_bsde_closed(phi, {0.0, 0.0}, basis_of(DataFunctional::zero()), g, s), Error);
    }
}

TEST_CASE("closed-form linearity") {
    const TimeGrid g = build_time_grid(1.0, 20);
    const SpaceGrid s = build_space_grid(1, 2.0, 21);
    const DataFunctional p1 = DataFunctional::single(sin_x(), PathFactor::monomial(1));
    const DataFunctional p2 = DataFunctional::single(SpaceFunction::monomial(2), PathFactor::monomial(2));
    const auto basis = basis_of(p1 + p2);
    const BsdeSolution a = solve_bsde_closed(p1, {0.2, 0.0}, basis, g, s);
    const BsdeSolution b = solve_bsde_closed(p2, {0.2, 0.0}, basis, g, s);
    const BsdeSolution ab = solve_bsde_closed(p1 + p2, {0.2, 0.0}, basis, g, s);
    for (std::size_t i = 0; i < ab.phi.coef.size(); ++i) CHECK(std::abs(ab.phi.coef[i] - a.phi.coef[i] - b.phi.coef[i]) < 1e-14);
}

TEST_CASE("regression matches closed form within three standard errors") {
    const TimeGrid g = build_time_grid(1.0, 50);
    const PathEnsemble e = sample_paths(10000, 1, g, 2024);
    Eigen::MatrixXd terminal(e.paths, 2);
    for (int m = 0; m < e.paths; ++m) {
        const double w = e.w(m, 50)[0];
        terminal(m, 0) = w;
        terminal(m, 1) = w * w;
    }
    const BsdeSolution reg = solve_bsde_regression(terminal, constant_sigma({0.0, 0.0}), e);
    CHECK(reg.provenance == "regression");
    CHECK(reg.condition < 1e6);
    std::vector<double> fv(reg.phi.factors());
    for (int k : {0, 10, 25, 49}) {
        double e0 = 0.0;
        double e1 = 0.0;
        double p0 = 0.0;
        double p1 = 0.0;
        for (int m = 0; m < e.paths; ++m) {
            const double w = e.w(m, k)[0];
            reg.phi.basis->evaluate(g.node(k), e.w(m, k), fv.data());
            e0 += std::pow(reg.phi.value(k, 0, fv.data()) - w, 2);
            e1 += std::pow(reg.phi.value(k, 1, fv.data()) - (w * w + 1.0 - g.node(k)), 2);
            p0 += std::pow(reg.psi[0].value(k, 0, fv.data()) - 1.0, 2);
            p1 += std::pow(reg.psi[0].value(k, 1, fv.data()) - 2.0 * w, 2);
        }
        const auto se = [&](const std::vector<double>& v, int j) { return v[static_cast<std::size_t>(k) * 2 + static_cast<std::size_t>(j)]; };
        CHECK(std::sqrt(e0 / e.paths) <= 3.0 * se(reg.phi_standard_error, 0) + 1e-12);
        CHECK(std::sqrt(e1 / e.paths) <= 3.0 * se(reg.phi_standard_error, 1) + 1e-12);
        CHECK(std::sqrt(p0 / e.paths) <= 3.0 * se(reg.psi_standard_error, 0));
        CHECK(std::sqrt(p1 / e.paths) <= 3.0 * se(reg.psi_standard_error, 1));
    }
}

TEST_CASE("regression on deterministic terminal gives no martingale part") {
    const TimeGrid g = build_time_grid(1.0, 20);
    const PathEnsemble e = sample_paths(4000, 1, g, 8);
    const Eigen::MatrixXd terminal = Eigen::MatrixXd::Constant(e.paths, 1, 2.5);
    const BsdeSolution reg = solve_bsde_regression(terminal, constant_sigma({0.0, 0.0}), e);
    CHECK(reg.phi.at(0, 0, 0) == doctest::Approx(2.5));
    for (int k = 0; k < 20; ++k) {
        for (std::size_t q = 0; q < reg.psi[0].factors(); ++q) CHECK(std::abs(reg.psi[0].at(k, q, 0)) < 1e-9);
    }
}

TEST_CASE("singular regression is reported") {
    const TimeGrid g = build_time_grid(1.0, 4);
    PathEnsemble e = sample_paths(3, 1, g, 1);
    const Eigen::MatrixXd terminal = Eigen::MatrixXd::Ones(3, 1);
    try {
        (void)solve_bsde_regression(terminal, constant_sigma({0.0, 0.0}), e, RegressionSpec{3, 1e-12});
        FAIL("expected singular regression");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::singular_regression);
        CHECK(std::string(err.what()).find("condition number") != std::string::npos);
    }
}

TEST_CASE("second family") {
    const TimeGrid g = build_time_grid(1.0, 10);
    const SpaceGrid s = build_space_grid(1, 2.0, 11);
    const DataFunctional f = DataFunctional::single(sin_x(), PathFactor::monomial(1));
    const auto basis = basis_of(f);
    const ConditionalMaps maps = ConditionalMaps::closed_form(basis, g, {0.0, 0.0});
    const SecondFamily fam = solve_second_family(f, maps, s);
    REQUIRE(fam.y.size() == 11);
    const double h = std::sin(s.point(3)[0]);
    for (int tau : {0, 4, 10}) {
        for (int k = 0; k <= tau; ++k) {
            CHECK(fam.y_slice(tau, k, 1)[3] == doctest::Approx(h));
            CHECK(std::abs(fam.y_slice(tau, k, 0)[3]) < 1e-15);
            CHECK(fam.g_slice(0, tau, k, 0)[3] == doctest::Approx(h));
        }
    }
    const DataFunctional det = DataFunctional::deterministic_term(SpaceFunction::sine({1.0, 0.0}, 0.0, 1.0));
    const auto b1 = basis_of(det);
    const SecondFamily fd = solve_second_family(det, ConditionalMaps::closed_form(b1, g, {0.0, 0.0}), s);
    CHECK(fd.y_slice(7, 2, 0)[3] == doctest::Approx(h * std::exp(0.7)));
    CHECK(fd.g_slice(0, 7, 2, 0)[3] == 0.0);
}
