#include <algorithm>
#include <cmath>

#include "solver_detail.hpp"

namespace bspde {

namespace {

/// psi(t) = exp(-1/t) for t > 0 and its first two derivatives.
std::array<double, 3> psi(double t) {
    if (t <= 0.0) return {0.0, 0.0, 0.0};
    const double v = std::exp(-1.0 / t);
    const double t2 = t * t;
    return {v, v / t2, v * (1.0 / (t2 * t2) - 2.0 / (t2 * t))};
}

}  // namespace

double smooth_step(double t, int order) {
    if (order < 0 || order > 2) throw Error(ErrorCode::unsupported_order, "smooth step derivatives up to order 2");
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return order == 0 ? 1.0 : 0.0;
    const auto p = psi(t);
    const auto r = psi(1.0 - t);
    // q(t) = psi(1 - t): q' = -psi'(1 - t), q'' = psi''(1 - t).
    const double q = r[0];
    const double qd = -r[1];
    const double qdd = r[2];
    const double D = p[0] + q;
    if (order == 0) return p[0] / D;
    const double N = p[1] * q - p[0] * qd;
    if (order == 1) return N / (D * D);
    const double Nd = p[2] * q - p[0] * qdd;
    const double Dd = p[1] + qd;
    return Nd / (D * D) - 2.0 * N * Dd / (D * D * D);
}

double BumpField::value(const Point& x) const {
    Point y{(x[0] - z[0]) / theta, dim == 2 ? (x[1] - z[1]) / theta : 0.0};
    return smooth_step(2.0 - norm(y, dim));
}

double BumpField::derivative(const Point& x, const MultiIndex& gamma) const {
    const int order = gamma.order();
    if (order == 0) return value(x);
    if (order > 2) throw Error(ErrorCode::unsupported_order, "bump derivatives up to order 2");
    const Point y{(x[0] - z[0]) / theta, dim == 2 ? (x[1] - z[1]) / theta : 0.0};
    const double r = norm(y, dim);
    if (r <= 1.0 || r >= 2.0) return 0.0;
    const double s1 = smooth_step(2.0 - r, 1);
    // d/dy_i phi = -S'(2 - r) y_i / r.
    if (order == 1) {
        const int i = gamma.g[0] == 1 ? 0 : 1;
        return -s1 * y[static_cast<std::size_t>(i)] / r / theta;
    }
    const double s2 = smooth_step(2.0 - r, 2);
    int i = 0;
    int j = 0;
    if (gamma.g[0] == 2) {
        i = j = 0;
    } else if (gamma.g[1] == 2) {
        i = j = 1;
    } else {
        i = 0;
        j = 1;
    }
    const double yi = y[static_cast<std::size_t>(i)];
    const double yj = y[static_cast<std::size_t>(j)];
    const double delta = i == j ? 1.0 : 0.0;
    const double v = s2 * yi * yj / (r * r) - s1 * (delta / r - yi * yj / (r * r * r));
    return v / (theta * theta);
}

LocalizedProblem localize(const SolutionField& solution, const CoefficientSet& coeffs, const Point& z, double theta,
                          const PathEnsemble* paths, int point_limit, int path_limit) {
    if (!solution.has_caches(2)) throw Error(ErrorCode::invalid_input, "localization needs second-order derivative caches");
    if (!(theta > 0.0)) throw Error(ErrorCode::invalid_argument, "theta must be positive");
    const int n = solution.space.dim();
    const TimeGrid& time = solution.time;
    const SpaceGrid& space = solution.space;
    const std::size_t J = space.size();
    const auto& basis = solution.basis;
    LocalizedProblem lp;
    lp.bump = BumpField{n, z, theta};
    lp.a_frozen = coeffs.a_at(0.0, z);
    lp.sigma_frozen = coeffs.sigma_at(0.0, z);

    std::map<MultiIndex, std::vector<double>> eta;
    for (const MultiIndex& g : detail::indices_up_to(n, 2)) {
        std::vector<double> e(J);
        for (std::size_t j = 0; j < J; ++j) e[j] = lp.bump.derivative(space.point(j), g);
        eta.emplace(g, std::move(e));
    }
    auto eta_at = [&](const MultiIndex& g) {
        const std::vector<double>& e = eta.at(g);
        return [&e](int, std::size_t j) { return e[j]; };
    };
    const MultiIndex zero = MultiIndex::zero(n);
    auto az = [&](double t, int i, int j) { return coeffs.a_at(t, z)(i, j); };

    // eta u and its derivatives by the product rule.
    for (const MultiIndex& g : detail::indices_up_to(n, 2)) {
        SeparableSeries s(basis, time, J);
        detail::add_scaled(s, solution.du(g), eta_at(zero));
        if (g.order() >= 1) {
            for (int i = 0; i < n; ++i) {
                if (g.g[static_cast<std::size_t>(i)] == 0) continue;
                MultiIndex rest = g;
                rest.g[static_cast<std::size_t>(i)] -= 1;
                // D^g(eta u) gets D_i eta * D^rest u (with multiplicity for repeated axes).
                const double mult = g.g[static_cast<std::size_t>(i)];
                const std::vector<double>& e = eta.at(MultiIndex::unit(n, i));
                detail::add_scaled(s, solution.du(rest), [&e, mult](int, std::size_t j) { return mult * e[j]; });
            }
            if (g.order() == 2) detail::add_scaled(s, solution.du(zero), eta_at(g));
        }
        lp.u.emplace(g, std::move(s));
    }
    for (int l = 0; l < solution.noise_dim; ++l) {
        SeparableSeries s(basis, time, J);
        detail::add_scaled(s, solution.dv(l, zero), eta_at(zero));
        lp.v.push_back(std::move(s));
    }
    lp.terminal = SeparableSeries(basis, time, J);
    detail::add_scaled(lp.terminal, solution.terminal, eta_at(zero));

    auto term = [&](const std::string& name) -> SeparableSeries& {
        lp.terms.emplace_back(name, SeparableSeries(basis, time, J));
        return lp.terms.back().second;
    };
    {
        SeparableSeries& s = term("variable_diffusion");
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const std::vector<double>& e = eta.at(zero);
                detail::add_scaled(s, solution.du(MultiIndex::pair(n, i, j)), [&](int k, std::size_t p) {
                    const double t = time.node(k);
                    return (coeffs.a_at(t, space.point(p))(i, j) - az(t, i, j)) * e[p];
                });
            }
        }
    }
    {
        SeparableSeries& s = term("variable_noise");
        for (int l = 0; l < solution.noise_dim; ++l) {
            const std::vector<double>& e = eta.at(zero);
            detail::add_scaled(s, solution.dv(l, zero), [&](int k, std::size_t p) {
                const double t = time.node(k);
                return (coeffs.sigma_at(t, space.point(p))[static_cast<std::size_t>(l)] -
                        coeffs.sigma_at(t, z)[static_cast<std::size_t>(l)]) *
                       e[p];
            });
        }
    }
    {
        SeparableSeries& s = term("gradient_commutator");
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const std::vector<double>& e = eta.at(MultiIndex::unit(n, j));
                detail::add_scaled(s, solution.du(MultiIndex::unit(n, i)),
                                   [&](int k, std::size_t p) { return -2.0 * az(time.node(k), i, j) * e[p]; });
            }
        }
    }
    {
        SeparableSeries& s = term("hessian_commutator");
        detail::add_scaled(s, solution.du(zero), [&](int k, std::size_t p) {
            const double t = time.node(k);
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) v += az(t, i, j) * eta.at(MultiIndex::pair(n, i, j))[p];
            }
            return -v;
        });
    }
    {
        SeparableSeries& s = term("drift");
        if (coeffs.has_b()) {
            for (int i = 0; i < n; ++i) {
                const std::vector<double>& e = eta.at(zero);
                detail::add_scaled(s, solution.du(MultiIndex::unit(n, i)), [&](int k, std::size_t p) {
                    return coeffs.b_at(time.node(k), space.point(p))[static_cast<std::size_t>(i)] * e[p];
                });
            }
        }
    }
    {
        SeparableSeries& s = term("zeroth_order");
        if (coeffs.has_c()) {
            const std::vector<double>& e = eta.at(zero);
            detail::add_scaled(s, solution.du(zero),
                               [&](int k, std::size_t p) { return coeffs.c_at(time.node(k), space.point(p)) * e[p]; });
        }
    }
    {
        SeparableSeries& s = term("forcing");
        detail::add_scaled(s, detail::forcing_series(solution, coeffs), eta_at(zero));
    }
    lp.source = SeparableSeries(basis, time, J);
    for (const auto& [name, s] : lp.terms) lp.source += s;

    SeparableSeries integrand = lp.source;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            detail::add_scaled(integrand, lp.u.at(MultiIndex::pair(n, i, j)),
                               [&](int k, std::size_t) { return az(time.node(k), i, j); });
        }
    }
    for (int l = 0; l < solution.noise_dim; ++l) {
        detail::add_scaled(integrand, lp.v[static_cast<std::size_t>(l)], [&](int k, std::size_t) {
            return coeffs.sigma_at(time.node(k), z)[static_cast<std::size_t>(l)];
        });
    }
    std::vector<SeparableSeries> mart = solution.deterministic() ? std::vector<SeparableSeries>{} : lp.v;
    const PathEnsemble sub = solution.deterministic() || paths == nullptr ? PathEnsemble{} : subset_paths(*paths, path_limit);
    const PathEnsemble* pp = solution.deterministic() ? nullptr : &sub;
    if (!solution.deterministic() && paths == nullptr) throw Error(ErrorCode::invalid_argument, "stochastic field needs paths");
    const std::vector<std::size_t> pts = detail::thin_points(space, point_limit);
    lp.residual = integral_form_residual(lp.u.at(zero), lp.terminal, integrand, mart, pp, pts);
    lp.parent_residual = solution_residual(solution, coeffs, paths, point_limit, path_limit);
    return lp;
}

nlohmann::json LocalizationReport::to_json() const {
    return {{"theta", theta}, {"m", m}, {"alpha", alpha}, {"norm", norm}, {"local_sup", local_sup}, {"base", base},
            {"top_seminorm", top_seminorm}, {"smallest_C", smallest_C}, {"slack", slack}};
}

LocalizationReport check_localization_inequality(const FieldSample& h, double theta, int m, double alpha) {
    if (h.max_order() < m) throw Error(ErrorCode::invalid_input, "field lacks the derivative caches for order m");
    if (!(theta > 0.0)) throw Error(ErrorCode::invalid_argument, "theta must be positive");
    const SpaceGrid& space = h.space();
    const int n = space.dim();
    const std::size_t J = space.size();
    const std::size_t block = h.samples().factors * J;
    const std::size_t T = h.samples().time.size();
    LocalizationReport rep;
    rep.theta = theta;
    rep.m = m;
    rep.alpha = alpha;
    rep.norm = holder_report(h, m, alpha).total;
    rep.base = estimate_seminorm(h, 0, h.family());
    rep.top_seminorm = estimate_seminorm(h, m, h.family());
    const std::vector<MultiIndex> gammas = detail::indices_up_to(n, m);
    for (std::size_t zi : h.points) {
        const BumpField bump{n, space.point(zi), theta};
        std::map<MultiIndex, std::vector<double>> eta;
        for (const MultiIndex& g : gammas) {
            std::vector<double> e(J);
            for (std::size_t j = 0; j < J; ++j) e[j] = bump.derivative(space.point(j), g);
            eta.emplace(g, std::move(e));
        }
        FieldSample masked(h.family(), space, h.samples_ptr(), h.components());
        masked.points = h.points;
        masked.first_time = h.first_time;
        masked.last_time = h.last_time;
        for (const MultiIndex& g : gammas) {
            for (int c = 0; c < h.components(); ++c) {
                std::vector<double> out(T * block, 0.0);
                // Leibniz rule over sub-multi-indices b <= g.
                for (int b0 = 0; b0 <= g.g[0]; ++b0) {
                    for (int b1 = 0; b1 <= g.g[1]; ++b1) {
                        const MultiIndex bi{n, {b0, b1}};
                        const MultiIndex rest{n, {g.g[0] - b0, g.g[1] - b1}};
                        const double binom = (g.g[0] == 2 && b0 == 1 ? 2.0 : 1.0) * (g.g[1] == 2 && b1 == 1 ? 2.0 : 1.0);
                        const std::vector<double>& e = eta.at(bi);
                        const std::vector<double>& src = h.coef(rest, c);
                        for (std::size_t i = 0; i < out.size(); ++i) out[i] += binom * e[i % J] * src[i];
                    }
                }
                masked.set(g, c, std::move(out));
            }
        }
        rep.local_sup = std::max(rep.local_sup, holder_report(masked, m, alpha).total);
    }
    rep.smallest_C = rep.base > 0.0 ? std::max(0.0, (rep.norm - 2.0 * rep.local_sup) / rep.base)
                                    : (rep.norm > 2.0 * rep.local_sup ? INFINITY : 0.0);
    rep.slack = 2.0 * rep.local_sup + 2.0 * std::pow(theta, -alpha) * rep.top_seminorm - rep.norm;
    return rep;
}

double time_shift_norm(const SolutionField& solution, double tau, const PathEnsemble* paths, double alpha, int path_limit) {
    const TimeGrid& time = solution.time;
    if (!(tau > 0.0) || !(tau < time.horizon())) throw Error(ErrorCode::invalid_shift, "shift must lie in (0, T)");
    const int s = time.index_of(tau);
    const auto base = field_samples(solution, paths, path_limit);
    const auto pair = FactorSamples::shifted_pair(*base, s);
    const std::size_t F = solution.factors();
    const std::size_t J = solution.space.size();
    const SeparableSeries& u = solution.du(MultiIndex::zero(solution.space.dim()));
    std::vector<double> c(time.size() * 2 * F * J, 0.0);
    for (int k = s; k <= time.steps(); ++k) {
        for (std::size_t q = 0; q < F; ++q) {
            const double* now = u.slice(k, q);
            const double* before = u.slice(k - s, q);
            double* a = c.data() + (static_cast<std::size_t>(k) * 2 * F + q) * J;
            double* b = c.data() + (static_cast<std::size_t>(k) * 2 * F + F + q) * J;
            for (std::size_t j = 0; j < J; ++j) {
                a[j] = now[j];
                b[j] = -before[j];
            }
        }
    }
    FieldSample f(NormFamily::l2, solution.space, pair);
    f.first_time = s;
    f.set(MultiIndex::zero(solution.space.dim()), 0, std::move(c));
    return holder_report(f, 0, alpha).total;
}

}  // namespace bspde
