#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bspde/kernel.hpp"

using namespace bspde;

namespace {

HeatKernel unit_kernel(int n, double beta = 0.0) {
    return HeatKernel(DiffusionCoefficient::constant(SmallMatrix::identity(n)), beta);
}

HeatKernel growing_kernel() {
    return HeatKernel(DiffusionCoefficient::time_dependent(
        1, [](double t) { return SmallMatrix::identity(1) * (1.0 + t); }, 1.0, 2.0));
}

double grid_integral(const HeatKernel& k, double t, double s, const MultiIndex& gamma, double radius, int per_axis) {
    const SpaceGrid g = build_space_grid(k.dim(), radius, per_axis);
    const auto w = cell_weights(g);
    const GaussianFrame f = k.frame(t, s);
    double total = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) total += w[j] * f.derivative(g.point(j), gamma);
    return total;
}

}  // namespace

TEST_CASE("covariance accumulation") {
    const auto a = accumulate_covariance(unit_kernel(2), 0.2, 0.7);
    CHECK(a(0, 0) == doctest::Approx(0.5));
    CHECK(a(0, 1) == 0.0);
    CHECK(accumulate_covariance(growing_kernel(), 0.0, 1.0)(0, 0) == doctest::Approx(1.5).epsilon(1e-13));
    CHECK(accumulate_covariance(unit_kernel(1), 0.3, 0.3)(0, 0) == 0.0);
    CHECK_THROWS_AS((void)accumulate_covariance(unit_kernel(1), 0.5, 0.3), Error);

    const HeatKernel k = growing_kernel();
    const double whole = k.covariance(0.1, 0.9)(0, 0);
    const double parts = k.covariance(0.1, 0.4)(0, 0) + k.covariance(0.4, 0.9)(0, 0);
    CHECK(std::abs(whole - parts) < 1e-13);
}

TEST_CASE("kernel values") {
    const HeatKernel k = unit_kernel(1);
    CHECK(eval_kernel(k, 0.0, 0.25, {0.0, 0.0}) == doctest::Approx(1.0 / std::sqrt(std::numbers::pi)).epsilon(1e-14));
    const HeatKernel damped = unit_kernel(1, 2.0);
    const Point x{0.3, 0.0};
    CHECK(eval_kernel(damped, 0.0, 0.5, x) == doctest::Approx(std::exp(-1.0) * eval_kernel(k, 0.0, 0.5, x)).epsilon(1e-15));
    CHECK_THROWS_AS((void)eval_kernel(k, 0.5, 0.5, x), Error);
    try {
        (void)eval_kernel(k, 0.6, 0.5, x);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_interval);
    }
}

TEST_CASE("ill-conditioned covariance is rejected") {
    const HeatKernel k(DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 1e-13)));
    try {
        (void)k.frame(0.0, 1.0);
        FAIL("expected ill-conditioned");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ill_conditioned);
    }
}

TEST_CASE("kernel normalization and vanishing derivative mass") {
    const HeatKernel k = unit_kernel(1);
    CHECK(std::abs(grid_integral(k, 0.0, 0.5, MultiIndex::zero(1), 8.0, 641) - 1.0) < 1e-6);
    CHECK(std::abs(grid_integral(k, 0.0, 0.5, MultiIndex{1, {1, 0}}, 8.0, 641)) < 1e-6);
    CHECK(std::abs(grid_integral(k, 0.0, 0.5, MultiIndex{1, {2, 0}}, 8.0, 641)) < 1e-6);

    const HeatKernel aniso(DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 2.0)));
    CHECK(std::abs(grid_integral(aniso, 0.0, 0.5, MultiIndex::zero(2), 10.0, 201) - 1.0) < 1e-6);
    CHECK(std::abs(grid_integral(aniso, 0.0, 0.5, MultiIndex::pair(2, 0, 1), 10.0, 201)) < 1e-6);
}

TEST_CASE("kernel symmetry") {
    const HeatKernel k(DiffusionCoefficient::constant(SmallMatrix{2, {1.0, 0.3, 0.3, 2.0}}));
    const GaussianFrame f = k.frame(0.0, 0.7);
    const Point x{0.4, -0.9};
    const Point mx{-0.4, 0.9};
    CHECK(f.value(x) == doctest::Approx(f.value(mx)));
    CHECK(f.derivative(x, MultiIndex::unit(2, 0)) == doctest::Approx(-f.derivative(mx, MultiIndex::unit(2, 0))));
    CHECK(f.derivative({0.0, 0.0}, MultiIndex::unit(2, 1)) == 0.0);
}

TEST_CASE("derivative formulas match finite differences") {
    const HeatKernel k(DiffusionCoefficient::constant(SmallMatrix{2, {1.0, 0.3, 0.3, 2.0}}));
    const GaussianFrame f = k.frame(0.0, 0.6);
    const Point x{0.4, -0.7};
    const double h = 1e-4;
    for (int order = 1; order <= 3; ++order) {
        for (const auto& gamma : multi_indices_of_order(2, order)) {
            const int axis = gamma.g[0] > 0 ? 0 : 1;
            MultiIndex lower = gamma;
            lower.g[static_cast<std::size_t>(axis)] -= 1;
            Point xp = x;
            Point xm = x;
            xp[static_cast<std::size_t>(axis)] += h;
            xm[static_cast<std::size_t>(axis)] -= h;
            const double fd = (f.derivative(xp, lower) - f.derivative(xm, lower)) / (2.0 * h);
            CHECK(f.derivative(x, gamma) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS((void)f.derivative(x, MultiIndex{2, {2, 2}}), Error);
}

TEST_CASE("fundamental-solution identities in both time variables") {
    const HeatKernel k = growing_kernel();
    const double t = 0.2;
    const double s = 0.8;
    const double h = 1e-5;
    for (const double xv : {0.0, 0.3, -0.9, 1.6}) {
        const Point x{xv, 0.0};
        const double ds = (k.value(t, s + h, x) - k.value(t, s - h, x)) / (2.0 * h);
        const double dt = (k.value(t + h, s, x) - k.value(t - h, s, x)) / (2.0 * h);
        const double lap = k.derivative(t, s, x, MultiIndex{1, {2, 0}});
        CHECK(std::abs(ds - (1.0 + s) * lap) < 1e-3 * std::abs((1.0 + s) * lap) + 1e-9);
        CHECK(std::abs(dt + (1.0 + t) * lap) < 1e-3 * std::abs((1.0 + t) * lap) + 1e-9);
    }
}

TEST_CASE("super-parabolicity validation") {
    const auto bad = DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 3.0));
    DiffusionCoefficient d = bad;
    d.Lambda = 2.0;
    CHECK_THROWS_AS(d.validate(1.0), Error);
    d.lambda = 0.0;
    try {
        d.validate(1.0);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::assumption_violation);
        CHECK(std::string(e.what()).find("super-parabolicity") != std::string::npos);
    }
    CHECK_NOTHROW(bad.validate(1.0));
}

TEST_CASE("pointwise bound probe") {
    PointwiseProbe probe;
    probe.levels = 2;
    const auto r = probe_pointwise_bound(unit_kernel(1), MultiIndex::zero(1), probe);
    CHECK(r.finite());
    CHECK(r.empirical_C >= std::pow(4.0 * std::numbers::pi, -0.5) * (1.0 - 1e-12));
    CHECK(r.flags.empty());

    const auto damped = probe_pointwise_bound(unit_kernel(1, 10.0), MultiIndex::zero(1), probe);
    CHECK(damped.empirical_C <= r.empirical_C);

    PointwiseProbe edge = probe;
    edge.decay_c = 0.25;
    edge.radius = 12.0;
    const HeatKernel aniso(DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 2.0)));
    const auto e = probe_pointwise_bound(aniso, MultiIndex::zero(2), edge);
    CHECK(std::find(e.flags.begin(), e.flags.end(), "decay-constant-unusable") != e.flags.end());

    const auto j = r.to_json();
    CHECK(j.at("estimate_id") == "pointwise_bound");
    CHECK(j.contains("levels"));
    CHECK(j.contains("empirical_C"));
}

TEST_CASE("ball moment ratio is stable across radii") {
    IntegralProbe probe;
    probe.levels = 1;
    const auto reports = probe_integral_estimates(unit_kernel(1), MultiIndex{1, {2, 0}}, 0.5, probe);
    bool seen = false;
    for (const auto& r : reports) {
        if (r.estimate_id != "ball_moment") continue;
        seen = true;
        const double lo = *std::min_element(r.sweep_values.begin(), r.sweep_values.end());
        const double hi = *std::max_element(r.sweep_values.begin(), r.sweep_values.end());
        CHECK(hi / lo <= 1.25);
    }
    CHECK(seen);
}

TEST_CASE("damped moment exponent for gamma = 0") {
    IntegralProbe probe;
    probe.levels = 1;
    probe.betas = {1.0, 4.0, 16.0};
    const auto reports = probe_integral_estimates(unit_kernel(1), MultiIndex::zero(1), 0.5, probe);
    for (const auto& r : reports) {
        if (r.estimate_id != "damped_moment") continue;
        const double lo = *std::min_element(r.sweep_values.begin(), r.sweep_values.end());
        CHECK(std::abs(r.fitted_exponent - r.predicted_exponent) <= 0.3);
        CHECK(lo > 0.0);
    }
}

TEST_CASE("sup-kernel integrability") {
    const HeatKernel k = unit_kernel(1);
    const auto a = probe_sup_kernel_integrability(k, 0.25, 0.0, 0.125, 1.0, 3);
    CHECK(std::isfinite(a.value));
    CHECK_FALSE(a.out_of_scope);
    const double lo = std::min(a.levels[1], a.levels[2]);
    const double hi = std::max(a.levels[1], a.levels[2]);
    CHECK(hi / lo <= 1.1);

    double prev = 0.0;
    for (const double w : {0.01, 0.03, 0.1, 0.25}) {
        const double v = probe_sup_kernel_integrability(k, 0.25, 0.0, w, 1.0, 2).value;
        CHECK(v > prev);
        prev = v;
    }
    CHECK(probe_sup_kernel_integrability(k, 0.25, 0.0, 0.5, 1.0, 1).out_of_scope);
}
