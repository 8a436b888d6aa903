#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "solver_detail.hpp"

namespace bspde {

SemilinearDriver SemilinearDriver::general(
    std::function<double(double, const Point&, const Point&, double, const DriftVector&)> f, double lipschitz,
    std::string label) {
    SemilinearDriver d;
    d.f = std::move(f);
    d.lipschitz = lipschitz;
    d.label = std::move(label);
    return d;
}

SemilinearDriver SemilinearDriver::linear(double cu, DataFunctional f0) {
    SemilinearDriver d;
    d.affine = true;
    d.cu = cu;
    d.f0 = std::move(f0);
    d.lipschitz = std::abs(cu);
    d.f = [cu](double, const Point&, const Point&, double u, const DriftVector&) { return cu * u; };
    std::ostringstream s;
    s << cu << "*u";
    d.label = s.str();
    return d;
}

CoefficientSet CoefficientSet::constant_diffusion(int dim, const SmallMatrix& a, int noise_dim) {
    CoefficientSet c;
    c.dim = dim;
    c.noise_dim = noise_dim;
    c.a = [a](double, const Point&) { return a; };
    const auto [lo, hi] = a.eigen_range();
    c.lambda = lo;
    c.Lambda = hi;
    c.label = "constant-diffusion";
    return c;
}

bool CoefficientSet::deterministic_data() const {
    if (!Phi.deterministic() || !f.deterministic()) return false;
    return !driver || !driver->affine || driver->f0.deterministic();
}

std::vector<PathFactor> CoefficientSet::factors() const {
    std::vector<PathFactor> out = Phi.factors();
    for (const PathFactor& p : f.factors()) out.push_back(p);
    if (driver && driver->affine) {
        for (const PathFactor& p : driver->f0.factors()) out.push_back(p);
    }
    return out;
}

void CoefficientSet::validate(const TimeGrid& time, const SpaceGrid& space, int samples) const {
    if (dim != space.dim()) throw Error(ErrorCode::invalid_argument, "coefficient and grid dimensions differ");
    if (noise_dim < 1 || noise_dim > kMaxDim) throw Error(ErrorCode::invalid_argument, "noise dimension must be 1 or 2");
    if (!a) throw Error(ErrorCode::invalid_argument, "diffusion coefficient missing");
    if (!(lambda > 0.0) || !(Lambda >= lambda)) {
        std::ostringstream s;
        s << "super-parabolicity needs 0 < lambda <= Lambda (lambda = " << lambda << ", Lambda = " << Lambda << ")";
        throw Error(ErrorCode::assumption_violation, s.str());
    }
    const int K = time.steps();
    const std::size_t J = space.size();
    const int tstride = std::max(1, K / std::max(1, samples / 8));
    const std::size_t xstride = std::max<std::size_t>(1, J / static_cast<std::size_t>(std::max(1, samples)));
    const Point ref{0.0, 0.0};
    auto bad = [](const std::string& what, double t, const Point& x) {
        std::ostringstream s;
        s << what << " at t = " << t << ", x = (" << x[0] << ", " << x[1] << ")";
        return Error(ErrorCode::assumption_violation, s.str());
    };
    constexpr int directions = 16;
    for (int k = 0; k <= K; k += tstride) {
        const double t = time.node(k);
        const SmallMatrix a_ref = a(t, ref);
        const DriftVector s_ref = sigma_at(t, ref);
        for (std::size_t j = 0; j < J; j += xstride) {
            const Point x = space.point(j);
            const SmallMatrix m = a(t, x);
            if (dim == 2 && std::abs(m(0, 1) - m(1, 0)) > 1e-12 * (1.0 + std::abs(m(0, 1))))
                throw bad("diffusion matrix not symmetric", t, x);
            for (int r = 0; r < (dim == 1 ? 1 : directions); ++r) {
                const double ang = M_PI * r / directions;
                const Point xi{std::cos(ang), std::sin(ang)};
                const Point e = dim == 1 ? Point{1.0, 0.0} : xi;
                const double q = m.quadratic(e);
                if (!std::isfinite(q) || q < lambda * (1.0 - 1e-12) || q > Lambda * (1.0 + 1e-12))
                    throw bad("super-parabolicity violated", t, x);
            }
            double sup = 0.0;
            for (double v : m.m) sup = std::max(sup, std::abs(v));
            const Point bv = b_at(t, x);
            const DriftVector sv = sigma_at(t, x);
            for (int i = 0; i < kMaxDim; ++i) {
                sup = std::max(sup, std::abs(bv[static_cast<std::size_t>(i)]));
                sup = std::max(sup, std::abs(sv[static_cast<std::size_t>(i)]));
            }
            sup = std::max(sup, std::abs(c_at(t, x)));
            if (!std::isfinite(sup) || sup > coefficient_bound) throw bad("coefficient bound exceeded", t, x);
            if (a_space_invariant) {
                const SmallMatrix d = m - a_ref;
                for (double v : d.m) {
                    if (std::abs(v) > 1e-12) throw Error(ErrorCode::invalid_argument, "a flagged space-invariant but varies in x");
                }
            }
            if (sigma_space_invariant && (std::abs(sv[0] - s_ref[0]) > 1e-12 || std::abs(sv[1] - s_ref[1]) > 1e-12))
                throw Error(ErrorCode::invalid_argument, "sigma flagged space-invariant but varies in x");
        }
    }
    if (driver) {
        if (!driver->f) throw Error(ErrorCode::invalid_argument, "driver function missing");
        if (!(driver->lipschitz >= 0.0)) throw Error(ErrorCode::assumption_violation, "driver Lipschitz constant must be non-negative");
        std::mt19937_64 rng(0x5eed);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        for (int i = 0; i < 4 * samples; ++i) {
            const double t = 0.5 * (u(rng) + 3.0) / 3.0 * time.horizon();
            const Point x{u(rng), dim == 2 ? u(rng) : 0.0};
            const Point q1{u(rng), u(rng)};
            const Point q2{u(rng), u(rng)};
            const DriftVector v1{u(rng), u(rng)};
            const DriftVector v2{u(rng), u(rng)};
            const double u1 = u(rng);
            const double u2 = u(rng);
            const double lhs = std::abs(driver->f(t, x, q1, u1, v1) - driver->f(t, x, q2, u2, v2));
            double dist = std::abs(u1 - u2);
            for (int l = 0; l < dim; ++l) dist += std::abs(q1[static_cast<std::size_t>(l)] - q2[static_cast<std::size_t>(l)]);
            for (int l = 0; l < noise_dim; ++l) dist += std::abs(v1[static_cast<std::size_t>(l)] - v2[static_cast<std::size_t>(l)]);
            if (!(lhs <= driver->lipschitz * dist * (1.0 + 1e-9) + 1e-12)) {
                std::ostringstream s;
                s << "driver " << driver->label << " exceeds its Lipschitz constant " << driver->lipschitz
                  << " (observed ratio " << lhs / dist << ")";
                throw Error(ErrorCode::assumption_violation, s.str());
            }
        }
    }
}

void SolverConfig::validate() const {
    if (!(tolerance > 0.0)) throw Error(ErrorCode::invalid_argument, "tolerance must be positive");
    if (max_iterations < 1) throw Error(ErrorCode::invalid_argument, "iteration cap must be at least 1");
    if (beta && !(*beta >= 0.0)) throw Error(ErrorCode::invalid_argument, "beta must be non-negative");
    if (!(theta > 0.0)) throw Error(ErrorCode::invalid_argument, "theta must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
}

const SeparableSeries& SolutionField::du(const MultiIndex& gamma) const {
    MultiIndex g = gamma;
    g.dim = space.dim();
    const auto it = u.find(g);
    if (it == u.end()) throw Error(ErrorCode::invalid_input, "missing derivative cache for u");
    return it->second;
}

const SeparableSeries& SolutionField::dv(int l, const MultiIndex& gamma) const {
    MultiIndex g = gamma;
    g.dim = space.dim();
    if (l < 0 || l >= static_cast<int>(v.size())) throw Error(ErrorCode::invalid_argument, "v component out of range");
    const auto it = v[static_cast<std::size_t>(l)].find(g);
    if (it == v[static_cast<std::size_t>(l)].end()) throw Error(ErrorCode::invalid_input, "missing derivative cache for v");
    return it->second;
}

bool SolutionField::has_caches(int order) const {
    for (const MultiIndex& g : detail::indices_up_to(space.dim(), order)) {
        if (!u.contains(g)) return false;
    }
    return true;
}

double SolutionField::u_at(int k, std::size_t j, const double* w) const {
    std::vector<double> fv(factors(), 1.0);
    const double zero[kMaxDim] = {0.0, 0.0};
    basis->evaluate(time.node(k), w == nullptr ? zero : w, fv.data());
    return du(MultiIndex::zero(space.dim())).value(k, j, fv.data());
}

double SolutionField::v_at(int l, int k, std::size_t j, const double* w) const {
    std::vector<double> fv(factors(), 1.0);
    const double zero[kMaxDim] = {0.0, 0.0};
    basis->evaluate(time.node(k), w == nullptr ? zero : w, fv.data());
    return dv(l, MultiIndex::zero(space.dim())).value(k, j, fv.data());
}

FieldSample SolutionField::u_sample(NormFamily family, std::shared_ptr<const FactorSamples> samples, int max_order) const {
    FieldSample s(family, space, std::move(samples));
    for (const MultiIndex& g : detail::indices_up_to(space.dim(), max_order)) {
        const auto it = u.find(g);
        if (it != u.end()) s.set(g, 0, it->second.coef);
    }
    s.derivative_source = derivative_source;
    return s;
}

FieldSample SolutionField::v_sample(NormFamily family, std::shared_ptr<const FactorSamples> samples, int max_order) const {
    FieldSample s(family, space, std::move(samples), noise_dim);
    for (const MultiIndex& g : detail::indices_up_to(space.dim(), max_order)) {
        for (int l = 0; l < noise_dim; ++l) {
            const auto it = v[static_cast<std::size_t>(l)].find(g);
            if (it != v[static_cast<std::size_t>(l)].end()) s.set(g, l, it->second.coef);
        }
    }
    s.derivative_source = derivative_source;
    return s;
}

void SolutionField::write_csv(std::ostream& out, const PathEnsemble* paths, int path_limit, int time_stride) const {
    const int n = space.dim();
    out << "path_id,t";
    for (int i = 0; i < n; ++i) out << ",x" << i + 1;
    out << ",u";
    for (int l = 0; l < noise_dim; ++l) out << ",v_" << l + 1;
    out << "\n";
    const int M = deterministic() || paths == nullptr ? 1 : std::min(paths->paths, std::max(1, path_limit));
    if (!deterministic() && paths == nullptr) throw Error(ErrorCode::invalid_argument, "stochastic field export needs paths");
    const std::size_t F = factors();
    std::vector<double> fv(F, 1.0);
    const double zero[kMaxDim] = {0.0, 0.0};
    const auto& u0 = du(MultiIndex::zero(n));
    out << std::setprecision(17);
    for (int m = 0; m < M; ++m) {
        for (int k = 0; k <= time.steps(); k += std::max(1, time_stride)) {
            basis->evaluate(time.node(k), deterministic() ? zero : paths->w(m, k), fv.data());
            for (std::size_t j = 0; j < space.size(); ++j) {
                const Point x = space.point(j);
                out << m << ',' << time.node(k);
                for (int i = 0; i < n; ++i) out << ',' << x[static_cast<std::size_t>(i)];
                out << ',' << u0.value(k, j, fv.data());
                for (int l = 0; l < noise_dim; ++l) out << ',' << dv(l, MultiIndex::zero(n)).value(k, j, fv.data());
                out << '\n';
            }
        }
    }
}

nlohmann::json SolutionField::summary() const {
    nlohmann::json j;
    j["route"] = route;
    j["beta"] = beta;
    j["converged"] = converged;
    j["iterations"] = iterations;
    j["contraction_factor"] = contraction_factor;
    j["derivative_source"] = derivative_source;
    j["factors"] = factors();
    j["grid"] = {{"steps", time.steps()}, {"horizon", time.horizon()}, {"dim", space.dim()},
                 {"per_axis", space.per_axis()}, {"radius", space.radius()}, {"interior_radius", space.interior_radius()}};
    if (has_residual) {
        j["residual"] = {{"rms", residual.rms}, {"worst_path", residual.worst_path}, {"max_abs", residual.max_abs},
                         {"stderr", residual.standard_error}};
    }
    nlohmann::json h = nlohmann::json::array();
    for (const IterationRecord& r : history) {
        h.push_back({{"iteration", r.iteration}, {"beta", r.beta}, {"change", r.change},
                     {"relative_change", r.relative_change}, {"norm", r.norm}, {"contraction", r.contraction}});
    }
    j["history"] = h;
    j["advisories"] = advisories;
    return j;
}

std::shared_ptr<const FactorSamples> field_samples(const SolutionField& field, const PathEnsemble* paths, int path_limit) {
    if (field.deterministic()) return FactorSamples::deterministic(field.time);
    if (paths == nullptr) throw Error(ErrorCode::invalid_argument, "stochastic field needs a path ensemble");
    return FactorSamples::from_ensemble(*field.basis, subset_paths(*paths, path_limit));
}

ResidualStats solution_residual(const SolutionField& field, const CoefficientSet& coeffs, const PathEnsemble* paths,
                                int point_limit, int path_limit) {
    const int n = field.space.dim();
    SeparableSeries integrand = detail::forcing_series(field, coeffs);
    const TimeGrid& time = field.time;
    const SpaceGrid& space = field.space;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const MultiIndex g = MultiIndex::pair(n, i, j);
            detail::add_scaled(integrand, field.du(g),
                               [&](int k, std::size_t p) { return coeffs.a_at(time.node(k), space.point(p))(i, j); });
        }
        if (coeffs.has_b()) {
            detail::add_scaled(integrand, field.du(MultiIndex::unit(n, i)), [&](int k, std::size_t p) {
                return coeffs.b_at(time.node(k), space.point(p))[static_cast<std::size_t>(i)];
            });
        }
    }
    if (coeffs.has_c()) {
        detail::add_scaled(integrand, field.du(MultiIndex::zero(n)),
                           [&](int k, std::size_t p) { return coeffs.c_at(time.node(k), space.point(p)); });
    }
    std::vector<SeparableSeries> mart;
    for (int l = 0; l < field.noise_dim; ++l) {
        const SeparableSeries& vl = field.dv(l, MultiIndex::zero(n));
        if (coeffs.sigma) {
            detail::add_scaled(integrand, vl, [&](int k, std::size_t p) {
                return coeffs.sigma_at(time.node(k), space.point(p))[static_cast<std::size_t>(l)];
            });
        }
        mart.push_back(vl);
    }
    if (field.deterministic()) mart.clear();
    const PathEnsemble sub = field.deterministic() || paths == nullptr ? PathEnsemble{} : subset_paths(*paths, path_limit);
    return integral_form_residual(field.du(MultiIndex::zero(n)), field.terminal, integrand, mart,
                                  field.deterministic() ? nullptr : &sub, detail::thin_points(space, point_limit));
}

}  // namespace bspde

namespace bspde::detail {

std::vector<MultiIndex> indices_up_to(int dim, int max_order) {
    std::vector<MultiIndex> out;
    for (int o = 0; o <= max_order; ++o) {
        for (const MultiIndex& g : multi_indices_of_order(dim, o)) out.push_back(g);
    }
    return out;
}

DerivativeMap project_derivatives(const DataFunctional& data, const std::shared_ptr<const FactorBasis>& basis,
                                  const TimeGrid& time, const SpaceGrid& space, int max_order) {
    DerivativeMap out;
    for (const MultiIndex& g : indices_up_to(space.dim(), max_order)) out.emplace(g, project_data(data, basis, time, space, g));
    return out;
}

void fill_fd_derivatives(DerivativeMap& series, const SpaceGrid& space, int max_order) {
    const int n = space.dim();
    const SeparableSeries& base = series.at(MultiIndex::zero(n));
    const std::size_t F = base.factors();
    const int J = space.per_axis();
    for (const MultiIndex& g : indices_up_to(n, max_order)) {
        if (g.order() == 0) continue;
        SeparableSeries out(base.basis, base.time, base.points);
        for (int k = 0; k <= base.time.steps(); ++k) {
            for (std::size_t q = 0; q < F; ++q) {
                const FdResult r = fd_derivative(space, std::span<const double>(base.slice(k, q), base.points), g);
                double* o = out.slice(k, q);
                for (std::size_t j = 0; j < base.points; ++j) {
                    if (r.valid[j]) {
                        o[j] = r.values[j];
                        continue;
                    }
                    auto idx = space.unflatten(j);
                    for (int i = 0; i < n; ++i) {
                        auto& c = idx[static_cast<std::size_t>(i)];
                        c = std::clamp(c, 2, J - 3);
                    }
                    o[j] = r.values[space.flatten(idx)];
                }
            }
        }
        series[g] = std::move(out);
    }
}

std::vector<std::size_t> thin_points(const SpaceGrid& space, int limit) {
    const std::vector<std::size_t>& pts = space.interior();
    if (limit <= 0 || pts.size() <= static_cast<std::size_t>(limit)) return pts;
    std::vector<std::size_t> out;
    const std::size_t stride = pts.size() / static_cast<std::size_t>(limit) + 1;
    for (std::size_t i = 0; i < pts.size(); i += stride) out.push_back(pts[i]);
    return out;
}

void add_scaled(SeparableSeries& out, const SeparableSeries& in, const std::function<double(int, std::size_t)>& scale) {
    const std::size_t F = in.factors();
    std::vector<double> s(in.points);
    for (int k = 0; k <= in.time.steps(); ++k) {
        for (std::size_t j = 0; j < in.points; ++j) s[j] = scale(k, j);
        for (std::size_t q = 0; q < F; ++q) {
            const double* a = in.slice(k, q);
            double* o = out.slice(k, q);
            for (std::size_t j = 0; j < in.points; ++j) o[j] += s[j] * a[j];
        }
    }
}

SeparableSeries apply_factor_map(const SeparableSeries& in, const Eigen::MatrixXd& D) {
    SeparableSeries out(in.basis, in.time, in.points);
    const std::size_t F = in.factors();
    for (int k = 0; k <= in.time.steps(); ++k) {
        for (std::size_t q = 0; q < F; ++q) {
            double* o = out.slice(k, q);
            for (std::size_t r = 0; r < F; ++r) {
                const double c = D(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(r));
                if (c == 0.0) continue;
                const double* a = in.slice(k, r);
                for (std::size_t j = 0; j < in.points; ++j) o[j] += c * a[j];
            }
        }
    }
    return out;
}

SeparableSeries forcing_series(const SolutionField& field, const CoefficientSet& coeffs) {
    const int n = field.space.dim();
    if (!coeffs.driver) {
        return project_data(coeffs.f, field.basis, field.time, field.space, MultiIndex::zero(n));
    }
    const SemilinearDriver& d = *coeffs.driver;
    if (d.affine) {
        SeparableSeries s = project_data(d.f0, field.basis, field.time, field.space, MultiIndex::zero(n));
        if (d.cu != 0.0) add_scaled(s, field.du(MultiIndex::zero(n)), [&](int, std::size_t) { return d.cu; });
        for (int i = 0; i < n; ++i) {
            const double c = d.cq[static_cast<std::size_t>(i)];
            if (c != 0.0) add_scaled(s, field.du(MultiIndex::unit(n, i)), [c](int, std::size_t) { return c; });
        }
        for (int l = 0; l < field.noise_dim; ++l) {
            const double c = d.cv[static_cast<std::size_t>(l)];
            if (c != 0.0) add_scaled(s, field.dv(l, MultiIndex::zero(n)), [c](int, std::size_t) { return c; });
        }
        return s;
    }
    if (!field.deterministic())
        throw Error(ErrorCode::invalid_route, "general drivers act on deterministic fields only; use an affine driver");
    SeparableSeries s(field.basis, field.time, field.space.size());
    const auto& u0 = field.du(MultiIndex::zero(n));
    for (int k = 0; k <= field.time.steps(); ++k) {
        const double t = field.time.node(k);
        double* o = s.slice(k, 0);
        for (std::size_t j = 0; j < field.space.size(); ++j) {
            Point q{0.0, 0.0};
            for (int i = 0; i < n; ++i) q[static_cast<std::size_t>(i)] = field.du(MultiIndex::unit(n, i)).at(k, 0, j);
            DriftVector v{0.0, 0.0};
            for (int l = 0; l < field.noise_dim; ++l) v[static_cast<std::size_t>(l)] = field.dv(l, MultiIndex::zero(n)).at(k, 0, j);
            o[j] = d.f(t, field.space.point(j), q, u0.at(k, 0, j), v);
        }
    }
    return s;
}

}  // namespace bspde::detail
