#include <algorithm>
#include <cmath>
#include <sstream>

#include "solver_detail.hpp"

namespace bspde {

namespace {

using detail::DerivativeMap;

struct PicardProblem {
    const CoefficientSet* coeffs = nullptr;
    std::shared_ptr<const FactorBasis> basis;
    TimeGrid time;
    SpaceGrid space;
    HeatKernel kernel{DiffusionCoefficient::constant(SmallMatrix::identity(1))};
    DriftVector sigma_bar{0.0, 0.0};
    DerivativeMap phi;
    /// Data part of the source with analytic derivatives (f, or the affine driver's f0).
    DerivativeMap data;
    std::shared_ptr<const FactorSamples> samples;
    bool variable_a = false;
    bool variable_sigma = false;
    /// The iteration map does not depend on the iterate.
    bool constant_map = false;
    /// Explicit s = t node unstable on this grid: assemble with the right-point rule.
    bool right_point = false;
    std::string endpoint_advisory;
};

/// Part of the source that depends on the iterate: frozen-coefficient corrections and the driver.
SeparableSeries iterate_source(const PicardProblem& p, const SolutionField& it, const SolverConfig& config) {
    const CoefficientSet& c = *p.coeffs;
    const int n = p.space.dim();
    const TimeGrid& time = p.time;
    const SpaceGrid& space = p.space;
    SeparableSeries s(p.basis, time, space.size());
    if (p.variable_a) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                detail::add_scaled(s, it.du(MultiIndex::pair(n, i, j)), [&](int k, std::size_t q) {
                    const double t = time.node(k);
                    return c.a_at(t, space.point(q))(i, j) - c.a_at(t, config.x_ref)(i, j);
                });
            }
        }
    }
    if (c.has_b()) {
        for (int i = 0; i < n; ++i) {
            detail::add_scaled(s, it.du(MultiIndex::unit(n, i)), [&](int k, std::size_t q) {
                return c.b_at(time.node(k), space.point(q))[static_cast<std::size_t>(i)];
            });
        }
    }
    if (c.has_c()) {
        detail::add_scaled(s, it.du(MultiIndex::zero(n)), [&](int k, std::size_t q) { return c.c_at(time.node(k), space.point(q)); });
    }
    if (p.variable_sigma) {
        for (int l = 0; l < it.noise_dim; ++l) {
            detail::add_scaled(s, it.dv(l, MultiIndex::zero(n)), [&](int k, std::size_t q) {
                const double t = time.node(k);
                return c.sigma_at(t, space.point(q))[static_cast<std::size_t>(l)] -
                       c.sigma_at(t, config.x_ref)[static_cast<std::size_t>(l)];
            });
        }
    }
    if (c.driver) {
        const SemilinearDriver& d = *c.driver;
        if (d.affine) {
            if (d.cu != 0.0) detail::add_scaled(s, it.du(MultiIndex::zero(n)), [&](int, std::size_t) { return d.cu; });
            for (int i = 0; i < n; ++i) {
                const double cq = d.cq[static_cast<std::size_t>(i)];
                if (cq != 0.0) detail::add_scaled(s, it.du(MultiIndex::unit(n, i)), [cq](int, std::size_t) { return cq; });
            }
            for (int l = 0; l < it.noise_dim; ++l) {
                const double cv = d.cv[static_cast<std::size_t>(l)];
                if (cv != 0.0) detail::add_scaled(s, it.dv(l, MultiIndex::zero(n)), [cv](int, std::size_t) { return cv; });
            }
        } else {
            s += detail::forcing_series(it, c);
        }
    }
    return s;
}

DerivativeMap full_source(const PicardProblem& p, const SolutionField& it, const SolverConfig& config) {
    DerivativeMap out;
    if (!p.constant_map || p.coeffs->driver) {
        out[MultiIndex::zero(p.space.dim())] = iterate_source(p, it, config);
        detail::fill_fd_derivatives(out, p.space, 2);
    }
    for (const auto& [g, s] : p.data) {
        auto itr = out.find(g);
        if (itr == out.end()) {
            out.emplace(g, s);
        } else {
            itr->second += s;
        }
    }
    return out;
}

/// ||e^{beta t}(a - b)||: u in the 2 + alpha, v in the alpha L2 family.
double weighted_norm(const SolutionField& a, const SolutionField* b, double beta, const PicardProblem& p, double alpha) {
    const int n = p.space.dim();
    const std::size_t J = p.space.size();
    const std::size_t F = p.basis->size();
    auto weighted = [&](const SeparableSeries& x, const SeparableSeries* y) {
        std::vector<double> c = x.coef;
        for (int k = 0; k <= p.time.steps(); ++k) {
            const double w = beta == 0.0 ? 1.0 : std::exp(beta * p.time.node(k));
            const std::size_t off = static_cast<std::size_t>(k) * F * J;
            for (std::size_t i = off; i < off + F * J; ++i) c[i] = w * (c[i] - (y ? y->coef[i] : 0.0));
        }
        return c;
    };
    FieldSample u(NormFamily::l2, p.space, p.samples);
    for (const MultiIndex& g : detail::indices_up_to(n, 2)) u.set(g, 0, weighted(a.du(g), b ? &b->du(g) : nullptr));
    double total = holder_report(u, 2, alpha).total;
    if (!a.deterministic()) {
        FieldSample v(NormFamily::l2, p.space, p.samples, a.noise_dim);
        for (int l = 0; l < a.noise_dim; ++l) {
            const MultiIndex z = MultiIndex::zero(n);
            v.set(z, l, weighted(a.dv(l, z), b ? &b->dv(l, z) : nullptr));
        }
        total += holder_report(v, 0, alpha).total;
    }
    return total;
}

/// Ratio of the least-squares geometric fit through the changes of iterations >= 2 above the noise floor.
double fitted_ratio(const std::vector<IterationRecord>& h) {
    std::vector<double> xs;
    std::vector<double> ys;
    for (const IterationRecord& r : h) {
        if (r.iteration < 2) continue;
        if (!(r.change > 1e-13 * r.norm) || !(r.change > 0.0)) break;
        xs.push_back(r.iteration);
        ys.push_back(std::log(r.change));
    }
    if (xs.size() < 2) return xs.empty() ? 0.0 : (h.size() >= 2 ? h[1].contraction : 0.0);
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return std::exp(sxy / sxx);
}

SolutionField run_picard(const PicardProblem& p, const SolverConfig& config, double beta) {
    SolutionField prev = detail::zero_field(p.basis, p.time, p.space);
    std::vector<IterationRecord> history;
    SolutionField sol;
    bool converged = false;
    SolverConfig assembly = config;
    if (p.right_point) assembly.endpoint_limit = false;
    for (int it = 1; it <= config.max_iterations; ++it) {
        const DerivativeMap src = full_source(p, prev, config);
        sol = detail::assemble_model(p.basis, p.time, p.space, p.kernel, p.sigma_bar, p.phi, &src, assembly, beta);
        IterationRecord r;
        r.iteration = it;
        r.beta = beta;
        r.norm = weighted_norm(sol, nullptr, beta, p, config.alpha);
        r.change = weighted_norm(sol, &prev, beta, p, config.alpha);
        r.relative_change = r.norm > 0.0 ? r.change / r.norm : (r.change > 0.0 ? INFINITY : 0.0);
        r.contraction = history.empty() || history.back().change == 0.0 ? 0.0 : r.change / history.back().change;
        history.push_back(r);
        prev = std::move(sol);
        if (p.constant_map || (it >= 2 && r.relative_change < config.tolerance) || r.norm == 0.0) {
            converged = true;
            break;
        }
    }
    sol = std::move(prev);
    sol.history = std::move(history);
    sol.iterations = static_cast<int>(sol.history.size());
    sol.converged = converged;
    sol.contraction_factor = fitted_ratio(sol.history);
    sol.beta = beta;
    if (p.right_point) sol.advisories.insert(sol.advisories.begin(), p.endpoint_advisory);
    return sol;
}

std::string factor_list(const std::vector<IterationRecord>& h) {
    std::ostringstream s;
    for (std::size_t i = 1; i < h.size(); ++i) s << (i > 1 ? ", " : "") << h[i].contraction;
    return s.str();
}

PicardProblem setup(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                    const PathEnsemble* paths, const SolverConfig& config) {
    config.validate();
    coeffs.validate(time, space);
    PicardProblem p;
    p.coeffs = &coeffs;
    p.time = time;
    p.space = space;
    p.basis = std::make_shared<const FactorBasis>(FactorBasis::closure(coeffs.noise_dim, coeffs.factors()));
    if (!p.basis->deterministic() && paths == nullptr)
        throw Error(ErrorCode::invalid_argument, "stochastic data needs a path ensemble");
    p.kernel = HeatKernel(detail::frozen_diffusion(coeffs, config.x_ref));
    p.sigma_bar = coeffs.sigma_at(0.0, config.x_ref);
    for (int k = 1; k <= time.steps(); ++k) {
        if (coeffs.sigma_at(time.node(k), config.x_ref) != p.sigma_bar)
            throw Error(ErrorCode::invalid_route, "time-dependent sigma(t, x_ref) has no closed-form conditional maps");
    }
    p.variable_a = !coeffs.a_space_invariant;
    p.variable_sigma = static_cast<bool>(coeffs.sigma) && !coeffs.sigma_space_invariant;
    if (p.variable_a && config.endpoint_limit) {
        // The s = t trapezoid node applies (dt/2)(a - a_ref) D^2 u explicitly; its gain at the grid
        // Nyquist frequency must stay bounded or the iteration diverges.
        const double nyquist = M_PI / space.spacing();
        double spread = 0.0;
        for (int k = 0; k <= time.steps(); k += std::max(1, time.steps() / 8)) {
            const double t = time.node(k);
            const SmallMatrix ref = coeffs.a_at(t, config.x_ref);
            for (std::size_t q = 0; q < space.size(); q += std::max<std::size_t>(1, space.size() / 256)) {
                const SmallMatrix a = coeffs.a_at(t, space.point(q));
                double s = 0.0;
                for (int i = 0; i < coeffs.dim; ++i) {
                    for (int j = 0; j < coeffs.dim; ++j) s += std::abs(a(i, j) - ref(i, j));
                }
                spread = std::max(spread, s);
            }
        }
        const double gain = 0.5 * time.dt() * spread * nyquist * nyquist;
        if (gain > 3.5) {
            std::ostringstream s;
            s << "right-point time rule: the explicit s = t node has gain (dt/2) max|a - a(x_ref)| (pi/h)^2 = " << gain
              << " > 3.5 on this grid; more time steps restore the trapezoid rule";
            p.right_point = true;
            p.endpoint_advisory = s.str();
        }
    }
    const bool nonlinear = coeffs.driver && coeffs.driver->lipschitz > 0.0;
    p.constant_map = !p.variable_a && !p.variable_sigma && !coeffs.has_b() && !coeffs.has_c() && !nonlinear;
    p.phi = detail::project_derivatives(coeffs.Phi, p.basis, time, space, 2);
    if (coeffs.driver && !coeffs.f.empty())
        throw Error(ErrorCode::invalid_argument, "give the source either as f or through the driver, not both");
    if (coeffs.driver && !coeffs.driver->affine && !p.basis->deterministic())
        throw Error(ErrorCode::invalid_route, "general drivers act on deterministic data only; use an affine driver");
    const DataFunctional& data = coeffs.driver ? coeffs.driver->f0 : coeffs.f;
    if (!data.empty()) p.data = detail::project_derivatives(data, p.basis, time, space, 2);
    p.samples = p.basis->deterministic() ? FactorSamples::deterministic(time)
                                         : FactorSamples::from_ensemble(*p.basis, subset_paths(*paths, config.norm_paths));
    return p;
}

void attach_residual(SolutionField& sol, const CoefficientSet& coeffs, const PathEnsemble* paths, const SolverConfig& config) {
    if (!config.compute_residual || (!sol.deterministic() && paths == nullptr)) return;
    sol.residual = solution_residual(sol, coeffs, paths, config.residual_points, config.residual_paths);
    sol.has_residual = true;
}

}  // namespace

SolutionField solve_variable_linear(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                                    const PathEnsemble* paths, const SolverConfig& config) {
    if (coeffs.driver) throw Error(ErrorCode::invalid_route, "semilinear drivers go through solve_semilinear");
    const PicardProblem p = setup(coeffs, time, space, paths, config);
    const double beta = config.beta.value_or(0.0);
    SolutionField sol = run_picard(p, config, beta);
    if (!sol.converged) {
        std::ostringstream s;
        s << "frozen-coefficient iteration did not converge in " << config.max_iterations
          << " iterations at beta = " << beta << "; contraction factors per iteration: " << factor_list(sol.history)
          << "; consider rerunning with beta damping";
        throw Error(ErrorCode::divergence, s.str());
    }
    sol.route = "variable-linear";
    attach_residual(sol, coeffs, paths, config);
    return sol;
}

SolutionField solve_deterministic_pde(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                                      const SolverConfig& config) {
    if (!coeffs.deterministic_data()) throw Error(ErrorCode::invalid_route, "stochastic data present; use solve_model or solve_variable_linear");
    if (coeffs.driver) throw Error(ErrorCode::invalid_route, "semilinear drivers go through solve_semilinear");
    SolutionField sol = solve_variable_linear(coeffs, time, space, nullptr, config);
    sol.route = "deterministic";
    return sol;
}

SolutionField solve_semilinear(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                               const PathEnsemble* paths, const SolverConfig& config) {
    if (!coeffs.driver) throw Error(ErrorCode::invalid_argument, "semilinear solve needs a driver with a Lipschitz constant");
    const PicardProblem p = setup(coeffs, time, space, paths, config);
    double beta = config.beta.value_or(8.0);
    std::vector<std::string> advisories;
    for (int attempt = 0;; ++attempt) {
        SolutionField sol = run_picard(p, config, beta);
        const bool contracting = sol.contraction_factor < 1.0;
        if (sol.converged && contracting) {
            sol.advisories.insert(sol.advisories.begin(), advisories.begin(), advisories.end());
            sol.route = "semilinear";
            attach_residual(sol, coeffs, paths, config);
            return sol;
        }
        std::ostringstream s;
        s << "raise-beta: observed contraction factor " << sol.contraction_factor << " at beta = " << beta;
        if (config.auto_raise_beta && attempt < config.max_beta_doublings) {
            const double next = beta > 0.0 ? 2.0 * beta : 1.0;
            s << "; retrying with beta = " << next;
            advisories.push_back(s.str());
            beta = next;
            continue;
        }
        if (!sol.converged) {
            s << "; no convergence in " << config.max_iterations << " iterations; factors per iteration: "
              << factor_list(sol.history);
            throw Error(ErrorCode::divergence, s.str());
        }
        advisories.push_back(s.str());
        sol.advisories.insert(sol.advisories.begin(), advisories.begin(), advisories.end());
        sol.route = "semilinear";
        attach_residual(sol, coeffs, paths, config);
        return sol;
    }
}

}  // namespace bspde
