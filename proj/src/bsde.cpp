#include <algorithm>
#include <cmath>
#include <sstream>

#include "bspde/stochastic.hpp"

namespace bspde {

RegressionFit least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets, double singular_tolerance) {
    const auto M = static_cast<double>(design.rows());
    const Eigen::MatrixXd gram = design.transpose() * design / M;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    RegressionFit fit;
    fit.condition = lo > 0.0 ? hi / lo : INFINITY;
    if (!(fit.condition * singular_tolerance < 1.0)) {
        std::ostringstream s;
        s << "normal equations are singular (condition number " << fit.condition << ")";
        throw Error(ErrorCode::singular_regression, s.str());
    }
    fit.coef = gram.ldlt().solve(design.transpose() * targets / M);
    const Eigen::MatrixXd resid = targets - design * fit.coef;
    const double dof = std::max(1.0, M - static_cast<double>(design.cols()));
    fit.residual_variance = resid.array().square().colwise().sum().transpose() / dof;
    return fit;
}

BsdeSolution solve_bsde_closed(const DataFunctional& terminal, DriftVector sigma,
                               std::shared_ptr<const FactorBasis> basis, const TimeGrid& time,
                               const SpaceGrid& space, const PathEnsemble* paths) {
    for (const PathFactor& f : terminal.factors()) {
        if (basis->find(f) < 0)
            throw Error(ErrorCode::unsupported_closed_form, "path factor " + f.label() + " outside the closed-form basis");
    }
    const ConditionalMaps maps = ConditionalMaps::closed_form(basis, time, sigma);
    const SeparableSeries data = project_data(terminal, basis, time, space, MultiIndex::zero(space.dim()));
    const int K = time.steps();
    const auto F = static_cast<Eigen::Index>(basis->size());
    const auto J = static_cast<Eigen::Index>(space.size());

    BsdeSolution sol;
    sol.provenance = "closed-form";
    sol.phi = SeparableSeries(basis, time, space.size());
    for (int l = 0; l < basis->dim(); ++l) sol.psi.emplace_back(basis, time, space.size());

    Eigen::MatrixXd A(F, J);
    for (Eigen::Index q = 0; q < F; ++q) {
        for (Eigen::Index j = 0; j < J; ++j) A(q, j) = data.at(K, static_cast<std::size_t>(q), static_cast<std::size_t>(j));
    }
    for (int k = 0; k <= K; ++k) {
        const Eigen::MatrixXd C = k == K ? A : Eigen::MatrixXd(maps.map(k, K) * A);
        for (Eigen::Index q = 0; q < F; ++q) {
            for (Eigen::Index j = 0; j < J; ++j) sol.phi.slice(k, static_cast<std::size_t>(q))[j] = C(q, j);
        }
        for (int l = 0; l < basis->dim(); ++l) {
            const Eigen::MatrixXd G = maps.gradient(l) * C;
            for (Eigen::Index q = 0; q < F; ++q) {
                for (Eigen::Index j = 0; j < J; ++j) sol.psi[static_cast<std::size_t>(l)].slice(k, static_cast<std::size_t>(q))[j] = G(q, j);
            }
        }
    }
    if (paths != nullptr) {
        std::vector<std::size_t> pts = space.interior();
        if (pts.size() > 32) {
            std::vector<std::size_t> thin;
            const std::size_t stride = pts.size() / 32 + 1;
            for (std::size_t i = 0; i < pts.size(); i += stride) thin.push_back(pts[i]);
            pts = thin;
        }
        sol.residual = bsde_residual(sol, data, sigma, *paths, pts);
    }
    return sol;
}

ResidualStats integral_form_residual(const SeparableSeries& value, const SeparableSeries& terminal,
                                     const SeparableSeries& integrand, const std::vector<SeparableSeries>& martingale,
                                     const PathEnsemble* paths, const std::vector<std::size_t>& points) {
    const FactorBasis& basis = *value.basis;
    const int d = basis.dim();
    if (paths == nullptr && !basis.deterministic())
        throw Error(ErrorCode::invalid_argument, "stochastic fields need a path ensemble for the residual");
    if (paths != nullptr && d != paths->dim) throw Error(ErrorCode::invalid_argument, "ensemble and basis dimensions differ");
    if (static_cast<int>(martingale.size()) > d) throw Error(ErrorCode::invalid_argument, "too many martingale components");
    const TimeGrid& time = value.time;
    const int K = time.steps();
    const double dt = time.dt();
    const std::size_t F = basis.size();
    const std::size_t P = points.size();
    const int M = paths == nullptr ? 1 : paths->paths;
    const int dm = paths == nullptr ? 0 : static_cast<int>(martingale.size());

    auto series_apply = [&](const SeparableSeries& s, const Eigen::MatrixXd& D) {
        SeparableSeries out(s.basis, s.time, s.points);
        for (int k = 0; k <= K; ++k) {
            for (std::size_t q = 0; q < F; ++q) {
                double* o = out.slice(k, q);
                for (std::size_t r = 0; r < F; ++r) {
                    const double c = D(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(r));
                    if (c == 0.0) continue;
                    const double* in = s.slice(k, r);
                    for (std::size_t j = 0; j < s.points; ++j) o[j] += c * in[j];
                }
            }
        }
        return out;
    };
    // d/dw_{l'} of each martingale component, for the Milstein correction.
    std::vector<std::vector<SeparableSeries>> dmart(static_cast<std::size_t>(dm));
    std::vector<std::vector<bool>> active(static_cast<std::size_t>(dm), std::vector<bool>(static_cast<std::size_t>(d), false));
    for (int l = 0; l < dm; ++l) {
        for (int lp = 0; lp < d; ++lp) {
            dmart[static_cast<std::size_t>(l)].push_back(series_apply(martingale[static_cast<std::size_t>(l)], basis.gradient(lp)));
            for (double c : dmart[static_cast<std::size_t>(l)].back().coef) {
                if (c != 0.0) {
                    active[static_cast<std::size_t>(l)][static_cast<std::size_t>(lp)] = true;
                    break;
                }
            }
        }
    }

    const double zero_w[kMaxDim] = {0.0, 0.0};
    auto position = [&](int m, int k) { return paths == nullptr ? zero_w : paths->w(m, k); };
    std::vector<double> fv(F);
    std::vector<double> acc(P);
    std::vector<double> next_drift(P);
    std::vector<double> path_ms(static_cast<std::size_t>(M), 0.0);
    double max_abs = 0.0;
    const double count = static_cast<double>((K + 1) * P);
    for (int m = 0; m < M; ++m) {
        basis.evaluate(time.node(K), position(m, K), fv.data());
        double ms = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            acc[p] = terminal.value(K, points[p], fv.data());
            next_drift[p] = integrand.value(K, points[p], fv.data());
            const double r = value.value(K, points[p], fv.data()) - acc[p];
            ms += r * r;
            max_abs = std::max(max_abs, std::abs(r));
        }
        for (int k = K - 1; k >= 0; --k) {
            basis.evaluate(time.node(k), position(m, k), fv.data());
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t j = points[p];
                const double drift = integrand.value(k, j, fv.data());
                double ito = 0.0;
                for (int l = 0; l < dm; ++l) {
                    const double dwl = paths->dw(m, k, l);
                    ito += martingale[static_cast<std::size_t>(l)].value(k, j, fv.data()) * dwl;
                    for (int lp = 0; lp < d; ++lp) {
                        if (!active[static_cast<std::size_t>(l)][static_cast<std::size_t>(lp)]) continue;
                        const double g = dmart[static_cast<std::size_t>(l)][static_cast<std::size_t>(lp)].value(k, j, fv.data());
                        const double q = dwl * paths->dw(m, k, lp) - (l == lp ? dt : 0.0);
                        ito += 0.5 * g * q;
                    }
                }
                acc[p] += 0.5 * dt * (drift + next_drift[p]) - ito;
                next_drift[p] = drift;
                const double r = value.value(k, j, fv.data()) - acc[p];
                ms += r * r;
                max_abs = std::max(max_abs, std::abs(r));
            }
        }
        path_ms[static_cast<std::size_t>(m)] = ms / count;
    }
    ResidualStats st;
    double mean = 0.0;
    for (double v : path_ms) mean += v;
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (double v : path_ms) {
        var += (v - mean) * (v - mean);
        st.worst_path = std::max(st.worst_path, std::sqrt(v));
    }
    st.rms = std::sqrt(mean);
    st.max_abs = max_abs;
    if (M > 1 && st.rms > 0.0) {
        var /= static_cast<double>(M - 1);
        st.standard_error = std::sqrt(var / M) / (2.0 * st.rms);
    }
    return st;
}

ResidualStats bsde_residual(const BsdeSolution& solution, const SeparableSeries& terminal, const DriftVector& sigma,
                            const PathEnsemble& paths, const std::vector<std::size_t>& points) {
    SeparableSeries drift(solution.phi.basis, solution.phi.time, solution.phi.points);
    for (std::size_t l = 0; l < solution.psi.size(); ++l) {
        const std::vector<double>& c = solution.psi[l].coef;
        for (std::size_t i = 0; i < c.size(); ++i) drift.coef[i] += sigma[l] * c[i];
    }
    return integral_form_residual(solution.phi, terminal, drift, solution.psi, &paths, points);
}

namespace {

/// Scaled monomial design (w / sqrt(t))^a for the basis, or the constant column at t = 0.
Eigen::MatrixXd regression_design(const FactorBasis& basis, const PathEnsemble& paths, int k, bool constant_only) {
    const Eigen::Index M = paths.paths;
    const auto F = static_cast<Eigen::Index>(constant_only ? 1 : basis.size());
    Eigen::MatrixXd X(M, F);
    const double t = paths.grid.node(k);
    const double s = constant_only ? 1.0 : 1.0 / std::sqrt(t);
    for (Eigen::Index m = 0; m < M; ++m) {
        const double* w = paths.w(static_cast<int>(m), k);
        double z[2] = {w[0] * s, paths.dim == 2 ? w[1] * s : 0.0};
        for (Eigen::Index q = 0; q < F; ++q) X(m, q) = basis[static_cast<std::size_t>(q)].value(t, z, paths.dim);
    }
    return X;
}

}  // namespace

BsdeSolution solve_bsde_regression(const Eigen::MatrixXd& terminal, const SigmaFunction& sigma,
                                   const PathEnsemble& paths, const RegressionSpec& spec) {
    if (terminal.rows() != paths.paths) throw Error(ErrorCode::invalid_argument, "terminal sample rows must equal M");
    if (spec.degree < 0) throw Error(ErrorCode::invalid_argument, "basis degree must be non-negative");
    const auto basis = std::make_shared<const FactorBasis>(FactorBasis::monomials(paths.dim, spec.degree));
    const int K = paths.grid.steps();
    const int d = paths.dim;
    const double dt = paths.grid.dt();
    const Eigen::Index M = paths.paths;
    const Eigen::Index J = terminal.cols();
    const auto F = basis->size();
    const auto nb = static_cast<double>(F);

    BsdeSolution sol;
    sol.provenance = "regression";
    sol.phi = SeparableSeries(basis, paths.grid, static_cast<std::size_t>(J));
    for (int l = 0; l < d; ++l) sol.psi.emplace_back(basis, paths.grid, static_cast<std::size_t>(J));
    sol.phi_standard_error.assign(paths.grid.size() * static_cast<std::size_t>(J), 0.0);
    sol.psi_standard_error.assign(paths.grid.size() * static_cast<std::size_t>(J), 0.0);

    // Terminal values are matched pathwise; their coefficients stay on the regression at t_K.
    Eigen::MatrixXd Y = terminal;
    {
        const Eigen::MatrixXd X = regression_design(*basis, paths, K, false);
        const RegressionFit fit = least_squares(X, Y, spec.singular_tolerance);
        const double t = paths.grid.node(K);
        for (std::size_t q = 0; q < F; ++q) {
            const double unscale = std::pow(t, -0.5 * (*basis)[q].degree());
            for (Eigen::Index j = 0; j < J; ++j) sol.phi.slice(K, q)[j] = fit.coef(static_cast<Eigen::Index>(q), j) * unscale;
        }
        sol.condition = fit.condition;
    }
    Eigen::VectorXd accumulated = Eigen::VectorXd::Zero(J);
    for (int k = K - 1; k >= 0; --k) {
        const bool at_origin = k == 0;
        const Eigen::MatrixXd X = regression_design(*basis, paths, k, at_origin);
        const RegressionFit m0 = least_squares(X, Y, spec.singular_tolerance);
        sol.condition = std::max(sol.condition, m0.condition);
        const Eigen::MatrixXd centered = Y - X * m0.coef;
        Eigen::MatrixXd drift = Eigen::MatrixXd::Zero(M, J);
        std::vector<Eigen::MatrixXd> psi_coef;
        Eigen::VectorXd psi_var = Eigen::VectorXd::Zero(J);
        std::vector<DriftVector> sig(static_cast<std::size_t>(M));
        for (Eigen::Index m = 0; m < M; ++m) sig[static_cast<std::size_t>(m)] = sigma(paths.grid.node(k), paths.w(static_cast<int>(m), k));
        for (int l = 0; l < d; ++l) {
            Eigen::MatrixXd target = centered;
            for (Eigen::Index m = 0; m < M; ++m) target.row(m) *= paths.dw(static_cast<int>(m), k, l) / dt;
            const RegressionFit fit = least_squares(X, target, spec.singular_tolerance);
            const Eigen::MatrixXd values = X * fit.coef;
            for (Eigen::Index m = 0; m < M; ++m) drift.row(m) += sig[static_cast<std::size_t>(m)][static_cast<std::size_t>(l)] * values.row(m);
            psi_var = psi_var.cwiseMax(fit.residual_variance);
            psi_coef.push_back(fit.coef);
        }
        const RegressionFit fit = least_squares(X, Y + dt * drift, spec.singular_tolerance);
        Y = X * fit.coef;
        accumulated += (at_origin ? 1.0 : nb) * m0.residual_variance;

        const double t = paths.grid.node(k);
        const auto cols = static_cast<std::size_t>(X.cols());
        for (std::size_t q = 0; q < cols; ++q) {
            const double unscale = at_origin ? 1.0 : std::pow(t, -0.5 * (*basis)[q].degree());
            for (Eigen::Index j = 0; j < J; ++j) {
                sol.phi.slice(k, q)[j] = fit.coef(static_cast<Eigen::Index>(q), j) * unscale;
                for (int l = 0; l < d; ++l)
                    sol.psi[static_cast<std::size_t>(l)].slice(k, q)[j] = psi_coef[static_cast<std::size_t>(l)](static_cast<Eigen::Index>(q), j) * unscale;
            }
        }
        const double used = at_origin ? 1.0 : nb;
        for (Eigen::Index j = 0; j < J; ++j) {
            const auto idx = static_cast<std::size_t>(k) * static_cast<std::size_t>(J) + static_cast<std::size_t>(j);
            sol.phi_standard_error[idx] = std::sqrt(accumulated(j) / static_cast<double>(M));
            // Error in phi(t_{k+1}) reaches psi(t_k) through E[e(W) dW] / dt = E[e'(W)] ~ |e| / sqrt(t_{k+1}).
            const double carried = sol.phi_standard_error[idx + static_cast<std::size_t>(J)];
            sol.psi_standard_error[idx] = std::sqrt(used * psi_var(j) / static_cast<double>(M) +
                                                    carried * carried / paths.grid.node(k + 1));
        }
    }
    return sol;
}

SecondFamily solve_second_family(const DataFunctional& f, const ConditionalMaps& maps, const SpaceGrid& space) {
    const auto basis = maps.basis_ptr();
    for (const PathFactor& p : f.factors()) {
        if (basis->find(p) < 0)
            throw Error(ErrorCode::unsupported_closed_form, "path factor " + p.label() + " outside the basis");
    }
    const TimeGrid& time = maps.grid();
    const SeparableSeries data = project_data(f, basis, time, space, MultiIndex::zero(space.dim()));
    const auto F = static_cast<Eigen::Index>(basis->size());
    const auto J = static_cast<Eigen::Index>(space.size());
    const int d = basis->dim();

    SecondFamily fam;
    fam.provenance = maps.provenance();
    fam.basis = basis;
    fam.points = space.size();
    for (int m = 0; m <= time.steps(); ++m) {
        Eigen::MatrixXd A(F, J);
        for (Eigen::Index q = 0; q < F; ++q) {
            for (Eigen::Index j = 0; j < J; ++j) A(q, j) = data.at(m, static_cast<std::size_t>(q), static_cast<std::size_t>(j));
        }
        std::vector<double> y(static_cast<std::size_t>((m + 1) * F * J));
        std::vector<std::vector<double>> g(static_cast<std::size_t>(d), std::vector<double>(y.size()));
        // Walk backwards with one-step maps so Y(tau; tau) = f(tau) exactly.
        Eigen::MatrixXd C = A;
        for (int k = m; k >= 0; --k) {
            if (k < m) C = maps.step(k) * C;
            for (Eigen::Index q = 0; q < F; ++q) {
                for (Eigen::Index j = 0; j < J; ++j) y[static_cast<std::size_t>((k * F + q) * J + j)] = C(q, j);
            }
            for (int l = 0; l < d; ++l) {
                const Eigen::MatrixXd G = maps.gradient(l) * C;
                for (Eigen::Index q = 0; q < F; ++q) {
                    for (Eigen::Index j = 0; j < J; ++j) g[static_cast<std::size_t>(l)][static_cast<std::size_t>((k * F + q) * J + j)] = G(q, j);
                }
            }
        }
        fam.y.push_back(std::move(y));
        fam.g.push_back(std::move(g));
    }
    return fam;
}

}  // namespace bspde
