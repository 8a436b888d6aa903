#include <algorithm>
#include <cmath>

#include "solver_detail.hpp"
#include "stencil.hpp"

namespace bspde::detail {

namespace {

using Eigen::Index;

/// Factor-by-point block of a series at one time.
Eigen::MatrixXd block(const SeparableSeries& s, int k) {
    Eigen::MatrixXd m(static_cast<Index>(s.factors()), static_cast<Index>(s.points));
    for (std::size_t q = 0; q < s.factors(); ++q) {
        const double* a = s.slice(k, q);
        for (std::size_t j = 0; j < s.points; ++j) m(static_cast<Index>(q), static_cast<Index>(j)) = a[j];
    }
    return m;
}

void store(SeparableSeries& s, int k, const Eigen::MatrixXd& m) {
    for (std::size_t q = 0; q < s.factors(); ++q) {
        double* a = s.slice(k, q);
        for (std::size_t j = 0; j < s.points; ++j) a[j] = m(static_cast<Index>(q), static_cast<Index>(j));
    }
}

Eigen::MatrixXd convolve_rows(const StencilPlan& plan, const Eigen::MatrixXd& in, const MultiIndex& g) {
    Eigen::MatrixXd out(in.rows(), in.cols());
    std::vector<double> row(static_cast<std::size_t>(in.cols()));
    std::vector<double> res(row.size());
    for (Index q = 0; q < in.rows(); ++q) {
        bool zero = true;
        for (Index j = 0; j < in.cols(); ++j) {
            row[static_cast<std::size_t>(j)] = in(q, j);
            zero = zero && in(q, j) == 0.0;
        }
        if (zero) {
            out.row(q).setZero();
            continue;
        }
        plan.apply(row.data(), g, res.data());
        for (Index j = 0; j < in.cols(); ++j) out(q, j) = res[static_cast<std::size_t>(j)];
    }
    return out;
}

SolutionField empty_field(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time, const SpaceGrid& space) {
    SolutionField sol;
    sol.basis = basis;
    sol.time = time;
    sol.space = space;
    sol.noise_dim = basis->dim();
    for (const MultiIndex& g : indices_up_to(space.dim(), 2)) sol.u.emplace(g, SeparableSeries(basis, time, space.size()));
    sol.v.resize(static_cast<std::size_t>(sol.noise_dim));
    return sol;
}

}  // namespace

SolutionField zero_field(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time, const SpaceGrid& space) {
    SolutionField sol = empty_field(basis, time, space);
    for (int l = 0; l < sol.noise_dim; ++l) {
        for (const MultiIndex& g : indices_up_to(space.dim(), 1)) sol.v[static_cast<std::size_t>(l)][g] = SeparableSeries(basis, time, space.size());
    }
    sol.terminal = SeparableSeries(basis, time, space.size());
    return sol;
}

namespace {

void fill_v(SolutionField& sol) {
    for (int l = 0; l < sol.noise_dim; ++l) {
        const Eigen::MatrixXd D = sol.basis->gradient(l);
        for (const MultiIndex& g : indices_up_to(sol.space.dim(), 1)) sol.v[static_cast<std::size_t>(l)][g] = apply_factor_map(sol.u.at(g), D);
    }
}

/// One-step kernels narrower than the lattice lose or gain mass; the recursion compounds it over the steps.
void check_resolution(const HeatKernel& kernel, const TimeGrid& time, const SpaceGrid& space, int compounding,
                      SolutionField& sol) {
    const int K = time.steps();
    const double defect = std::max(StencilPlan::mass_defect(kernel.covariance(time.node(0), time.node(1)), space),
                                   StencilPlan::mass_defect(kernel.covariance(time.node(K - 1), time.node(K)), space));
    const double total = defect * compounding;
    if (total > 1e-2) {
        throw Error(ErrorCode::ill_conditioned,
                    "space grid under-resolves the one-step kernel (lattice mass defect " + std::to_string(defect) +
                        " per step, spacing " + std::to_string(space.spacing()) +
                        "); refine the space grid or use fewer time steps");
    }
    if (total > 1e-6) {
        sol.advisories.push_back("under-resolved one-step kernel: lattice mass defect " + std::to_string(total) +
                                 " accumulated over the steps");
    }
}

}  // namespace

SolutionField assemble_model(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time,
                             const SpaceGrid& space, const HeatKernel& kernel, DriftVector sigma,
                             const DerivativeMap& terminal, const DerivativeMap* source, const SolverConfig& config,
                             double beta) {
    const int n = space.dim();
    const int K = time.steps();
    const double dt = time.dt();
    const HeatKernel damped = kernel.with_beta(beta);
    const ConditionalMaps maps = ConditionalMaps::closed_form(basis, time, sigma);
    const std::vector<MultiIndex> gammas = indices_up_to(n, 2);
    const MultiIndex zero = MultiIndex::zero(n);
    const bool have_source = source != nullptr && !source->empty();
    auto weight = [&](int k) { return beta == 0.0 ? 1.0 : std::exp(beta * time.node(k)); };

    SolutionField sol = empty_field(basis, time, space);
    sol.beta = beta;
    check_resolution(kernel, time, space, K, sol);
    for (const MultiIndex& g : gammas) {
        Eigen::MatrixXd tk = block(terminal.at(g), K) * weight(K);
        store(sol.u.at(g), K, tk);
    }

    std::unique_ptr<StencilPlan> fixed;
    if (damped.diffusion().time_constant) fixed = std::make_unique<StencilPlan>(damped.frame(0.0, dt), space, 2);
    for (int k = K - 1; k >= 0; --k) {
        std::unique_ptr<StencilPlan> local;
        if (!fixed) local = std::make_unique<StencilPlan>(damped.frame(time.node(k), time.node(k + 1)), space, 2);
        const StencilPlan& plan = fixed ? *fixed : *local;
        Eigen::MatrixXd bracket = block(sol.u.at(zero), k + 1);
        if (have_source) {
            // Trapezoid rule with the exact s = t endpoint; otherwise the right-point rule on each step.
            const double w = config.endpoint_limit ? 0.5 * dt : dt;
            bracket += w * weight(k + 1) * block(source->at(zero), k + 1);
        }
        const Eigen::MatrixXd& P = maps.step(k);
        for (const MultiIndex& g : gammas) {
            Eigen::MatrixXd out = P * convolve_rows(plan, bracket, g);
            if (have_source && config.endpoint_limit) out += 0.5 * dt * weight(k) * block(source->at(g), k);
            store(sol.u.at(g), k, out);
        }
    }
    if (beta != 0.0) {
        for (auto& [g, s] : sol.u) {
            for (int k = 0; k <= K; ++k) {
                const double w = std::exp(-beta * time.node(k));
                for (std::size_t q = 0; q < s.factors(); ++q) {
                    double* a = s.slice(k, q);
                    for (std::size_t j = 0; j < s.points; ++j) a[j] *= w;
                }
            }
        }
    }
    fill_v(sol);
    sol.terminal = terminal.at(zero);
    sol.route = "model";
    sol.derivative_source = "analytic";
    return sol;
}

SolutionField assemble_model_direct(const std::shared_ptr<const FactorBasis>& basis, const TimeGrid& time,
                                    const SpaceGrid& space, const HeatKernel& kernel, DriftVector sigma,
                                    const DataFunctional& terminal, const DataFunctional& source,
                                    const SolverConfig& config) {
    const int n = space.dim();
    const int K = time.steps();
    const double dt = time.dt();
    const std::size_t F = basis->size();
    const std::size_t J = space.size();
    const int d = basis->dim();
    const ConditionalMaps maps = ConditionalMaps::closed_form(basis, time, sigma);
    const std::vector<MultiIndex> gammas = indices_up_to(n, 2);
    const MultiIndex zero = MultiIndex::zero(n);
    const DerivativeMap phi = project_derivatives(terminal, basis, time, space, 2);
    const bool have_source = !source.empty();
    const SecondFamily family = have_source ? solve_second_family(source, maps, space) : SecondFamily{};
    const DerivativeMap src = have_source ? project_derivatives(source, basis, time, space, 2) : DerivativeMap{};

    SolutionField sol = empty_field(basis, time, space);
    check_resolution(kernel, time, space, 1, sol);
    for (int l = 0; l < d; ++l) {
        for (const MultiIndex& g : indices_up_to(n, 1)) sol.v[static_cast<std::size_t>(l)][g] = SeparableSeries(basis, time, J);
    }
    auto family_block = [&](int m, int k, int l) {
        Eigen::MatrixXd b(static_cast<Index>(F), static_cast<Index>(J));
        for (std::size_t q = 0; q < F; ++q) {
            const double* a = l < 0 ? family.y_slice(m, k, q) : family.g_slice(l, m, k, q);
            for (std::size_t j = 0; j < J; ++j) b(static_cast<Index>(q), static_cast<Index>(j)) = a[j];
        }
        return b;
    };
    const Eigen::MatrixXd phiK = block(phi.at(zero), K);
    for (int k = 0; k <= K; ++k) {
        std::map<MultiIndex, Eigen::MatrixXd> acc;
        std::vector<std::map<MultiIndex, Eigen::MatrixXd>> vacc(static_cast<std::size_t>(d));
        const Eigen::MatrixXd phik = maps.map(k, K) * phiK;
        if (k == K) {
            for (const MultiIndex& g : gammas) acc[g] = block(phi.at(g), K);
        } else {
            const StencilPlan plan(kernel.frame(time.node(k), time.node(K)), space, 2);
            for (const MultiIndex& g : gammas) acc[g] = convolve_rows(plan, phik, g);
        }
        for (int l = 0; l < d; ++l) {
            // v_l(t) = R^T_t psi_l(t) + int_t^T R^s_t g_l(t; s) ds with psi_l(t) = D_l phi(t).
            const Eigen::MatrixXd psi = maps.gradient(l) * phik;
            for (const MultiIndex& g : indices_up_to(n, 1)) {
                if (k == K) {
                    vacc[static_cast<std::size_t>(l)][g] = maps.gradient(l) * block(phi.at(g), K);
                } else {
                    const StencilPlan plan(kernel.frame(time.node(k), time.node(K)), space, 1);
                    vacc[static_cast<std::size_t>(l)][g] = convolve_rows(plan, psi, g);
                }
            }
        }
        if (have_source) {
            for (int m = k; m <= K; ++m) {
                double w = dt;
                if (config.endpoint_limit) {
                    if (m == K) w = 0.5 * dt;
                    if (m == k) w = k == K ? 0.0 : 0.5 * dt;
                } else if (m == k) {
                    w = 0.0;
                }
                if (w == 0.0) continue;
                if (m == k) {
                    for (const MultiIndex& g : gammas) acc[g] += w * block(src.at(g), k);
                    for (int l = 0; l < d; ++l) {
                        for (const MultiIndex& g : indices_up_to(n, 1))
                            vacc[static_cast<std::size_t>(l)][g] += w * maps.gradient(l) * block(src.at(g), k);
                    }
                    continue;
                }
                const StencilPlan plan(kernel.frame(time.node(k), time.node(m)), space, 2);
                const Eigen::MatrixXd y = family_block(m, k, -1);
                for (const MultiIndex& g : gammas) acc[g] += w * convolve_rows(plan, y, g);
                for (int l = 0; l < d; ++l) {
                    const Eigen::MatrixXd gl = family_block(m, k, l);
                    for (const MultiIndex& g : indices_up_to(n, 1)) vacc[static_cast<std::size_t>(l)][g] += w * convolve_rows(plan, gl, g);
                }
            }
        }
        for (const MultiIndex& g : gammas) store(sol.u.at(g), k, acc[g]);
        for (int l = 0; l < d; ++l) {
            for (const MultiIndex& g : indices_up_to(n, 1)) store(sol.v[static_cast<std::size_t>(l)][g], k, vacc[static_cast<std::size_t>(l)][g]);
        }
    }
    sol.terminal = phi.at(zero);
    sol.route = "model-direct";
    return sol;
}

}  // namespace bspde::detail

namespace bspde {

DiffusionCoefficient detail::frozen_diffusion(const CoefficientSet& coeffs, const Point& x_ref) {
    const MatrixField a = coeffs.a;
    if (coeffs.a_time_constant) return DiffusionCoefficient::constant(a(0.0, x_ref), "frozen");
    return DiffusionCoefficient::time_dependent(
        coeffs.dim, [a, x_ref](double t) { return a(t, x_ref); }, coeffs.lambda, coeffs.Lambda, "frozen");
}

SolutionField solve_model(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                          const PathEnsemble* paths, const SolverConfig& config) {
    config.validate();
    if (coeffs.has_b() || coeffs.has_c() || !coeffs.a_space_invariant || !coeffs.sigma_space_invariant || coeffs.driver)
        throw Error(ErrorCode::invalid_route,
                    "the model solver needs b = c = 0, space-invariant a and sigma and no driver; use solve_variable_linear");
    coeffs.validate(time, space);
    const DriftVector sigma = coeffs.sigma_at(0.0, config.x_ref);
    for (int k = 1; k <= time.steps(); ++k) {
        const DriftVector s = coeffs.sigma_at(time.node(k), config.x_ref);
        if (s != sigma) throw Error(ErrorCode::invalid_route, "time-dependent sigma has no closed-form conditional maps");
    }
    auto basis = std::make_shared<const FactorBasis>(FactorBasis::closure(coeffs.noise_dim, coeffs.factors()));
    const HeatKernel kernel(detail::frozen_diffusion(coeffs, config.x_ref));
    SolutionField sol;
    if (config.assembly == AssemblyMode::direct) {
        sol = detail::assemble_model_direct(basis, time, space, kernel, sigma, coeffs.Phi, coeffs.f, config);
        if (config.beta.value_or(0.0) != 0.0) sol.advisories.push_back("direct assembly ignores beta");
    } else {
        const detail::DerivativeMap phi = detail::project_derivatives(coeffs.Phi, basis, time, space, 2);
        const detail::DerivativeMap f = coeffs.f.empty() ? detail::DerivativeMap{}
                                                         : detail::project_derivatives(coeffs.f, basis, time, space, 2);
        sol = detail::assemble_model(basis, time, space, kernel, sigma, phi, &f, config, config.beta.value_or(0.0));
    }
    if (config.compute_residual && (sol.deterministic() || paths != nullptr)) {
        sol.residual = solution_residual(sol, coeffs, paths, config.residual_points, config.residual_paths);
        sol.has_residual = true;
    }
    return sol;
}

}  // namespace bspde
