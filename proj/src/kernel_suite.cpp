#include <algorithm>
#include <cmath>
#include <sstream>

#include "bspde/verify.hpp"

namespace bspde {

namespace {

struct NamedKernel {
    std::string name;
    HeatKernel kernel;
};

std::vector<NamedKernel> standard_kernels(const std::vector<int>& dims) {
    std::vector<NamedKernel> out;
    for (int n : dims) {
        if (n < 1 || n > kMaxDim) throw Error(ErrorCode::invalid_argument, "kernel dimension must be 1 or 2");
        out.push_back({"identity_" + std::to_string(n), HeatKernel(DiffusionCoefficient::constant(SmallMatrix::identity(n)))});
        out.push_back({"growing_" + std::to_string(n),
                       HeatKernel(DiffusionCoefficient::time_dependent(
                           n, [n](double t) { return SmallMatrix::identity(n) * (1.0 + t); }, 1.0, 2.0))});
        if (n == 2) out.push_back({"diag12_2", HeatKernel(DiffusionCoefficient::constant(SmallMatrix::diagonal(1.0, 2.0)))});
    }
    return out;
}

std::string gamma_label(const MultiIndex& g) {
    std::string s = "gamma_" + std::to_string(g.g[0]);
    if (g.dim == 2) s += "_" + std::to_string(g.g[1]);
    return s;
}

std::vector<MultiIndex> indices_up_to(int dim, int order) {
    std::vector<MultiIndex> out;
    for (int o = 0; o <= order; ++o) {
        for (const MultiIndex& g : multi_indices_of_order(dim, o)) out.push_back(g);
    }
    return out;
}

/// Trapezoid integral of D^gamma G_{s,t} over a box of 10 standard deviations.
double lattice_integral(const HeatKernel& k, double t, double s, const MultiIndex& gamma) {
    const GaussianFrame f = k.frame(t, s);
    const double sd = std::sqrt(2.0 * f.covariance().eigen_range()[1]);
    const int per_axis = k.dim() == 1 ? 801 : 241;
    const SpaceGrid g = build_space_grid(k.dim(), 10.0 * sd, per_axis);
    const auto w = cell_weights(g);
    double total = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) total += w[j] * f.derivative(g.point(j), gamma);
    return total;
}

/// Deterministic scatter of n points in [-1.5, 1.5]^dim (golden-ratio sequence).
std::vector<Point> probe_points(int dim, int count) {
    std::vector<Point> out;
    const double g1 = 0.6180339887498949;
    const double g2 = 0.7548776662466927;
    for (int i = 0; i < count; ++i) {
        const double u = std::fmod(0.5 + g1 * (i + 1), 1.0);
        const double v = std::fmod(0.5 + g2 * (i + 1), 1.0);
        out.push_back({3.0 * u - 1.5, dim == 2 ? 3.0 * v - 1.5 : 0.0});
    }
    return out;
}

double contract(const SmallMatrix& a, const HeatKernel& k, double t, double s, const Point& x) {
    double total = 0.0;
    const int n = k.dim();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) total += a(i, j) * k.derivative(t, s, x, MultiIndex::pair(n, i, j));
    }
    return total;
}

/// Largest |d_s G - a(s):D^2 G| and |d_t G + a(t):D^2 G| relative to (s - t)^{-(n+2)/2}.
double identity_defect(const HeatKernel& k, int points) {
    const double t = 0.2;
    const double s = 0.8;
    const double h = 1e-5;
    const double scale = std::pow(s - t, -(k.dim() + 2) / 2.0);
    const auto& a = k.diffusion().a;
    double worst = 0.0;
    for (const Point& x : probe_points(k.dim(), points)) {
        const double ds = (k.value(t, s + h, x) - k.value(t, s - h, x)) / (2.0 * h);
        const double dt = (k.value(t + h, s, x) - k.value(t - h, s, x)) / (2.0 * h);
        worst = std::max(worst, std::abs(ds - contract(a(s), k, t, s, x)) / scale);
        worst = std::max(worst, std::abs(dt + contract(a(t), k, t, s, x)) / scale);
    }
    return worst;
}

/// Largest |int G_{r,t}(x - y) G_{s,r}(y) dy - G_{s,t}(x)| relative to sup G_{s,t}.
double chapman_kolmogorov_defect(const HeatKernel& k) {
    const double t = 0.1;
    const double r = 0.45;
    const double s = 0.9;
    const GaussianFrame inner = k.frame(r, s);
    const GaussianFrame outer = k.frame(t, r);
    const GaussianFrame full = k.frame(t, s);
    const double sd = std::sqrt(2.0 * full.covariance().eigen_range()[1]);
    const int per_axis = k.dim() == 1 ? 801 : 201;
    const SpaceGrid g = build_space_grid(k.dim(), 12.0 * sd, per_axis);
    const auto w = cell_weights(g);
    const double peak = full.value({0.0, 0.0});
    double worst = 0.0;
    for (const Point& x : probe_points(k.dim(), 6)) {
        double total = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            const Point y = g.point(j);
            total += w[j] * outer.value({x[0] - y[0], x[1] - y[1]}) * inner.value(y);
        }
        worst = std::max(worst, std::abs(total - full.value(x)) / peak);
    }
    return worst;
}

bool zero_by_symmetry(const KernelConstantReport& r) {
    double m = 0.0;
    for (double v : r.levels) m = std::max(m, std::abs(v));
    return m <= 1e-12;
}

void judge_report(VerdictBundle& out, const std::string& prefix, const KernelConstantReport& r, double spread_tol) {
    const std::string id = prefix + "." + r.estimate_id + "." + gamma_label(r.gamma);
    const double spread = zero_by_symmetry(r) ? 1.0 : r.refinement_spread();
    nlohmann::json details = r.to_json();
    const Expectation stable{"refinement spread of the empirical constant", Provenance::theorem, spread_tol};
    if (r.advisory) {
        out.add(Verdict::advisory(id + ".spread", spread, stable, details));
    } else {
        out.add(Verdict::judge(id + ".spread", r.finite() ? spread : INFINITY, stable, details));
    }
    if (r.has_exponent) {
        const Expectation exponent{"fitted exponent within 0.3 of the predicted rate", Provenance::theorem, 0.3};
        const double gap = std::abs(r.fitted_exponent - r.predicted_exponent);
        if (r.advisory) {
            out.add(Verdict::advisory(id + ".exponent", gap, exponent, details));
        } else {
            out.add(Verdict::judge(id + ".exponent", gap, exponent, details));
        }
    }
}

}  // namespace

VerdictBundle run_kernel_suite(const KernelSuiteParams& params, nlohmann::json* reports) {
    VerdictBundle out;
    nlohmann::json all = nlohmann::json::object();
    for (const NamedKernel& nk : standard_kernels(params.dims)) {
        const HeatKernel& k = nk.kernel;
        const std::string p = "kernel." + nk.name;
        nlohmann::json entry = nlohmann::json::array();
        const int n = k.dim();

        double mass = 0.0;
        double derivative_mass = 0.0;
        for (const MultiIndex& g : indices_up_to(n, 2)) {
            const double v = lattice_integral(k, 0.0, 0.5, g);
            if (g.order() == 0) {
                mass = std::abs(v - 1.0);
            } else {
                derivative_mass = std::max(derivative_mass, std::abs(v));
            }
        }
        out.add(Verdict::judge(p + ".normalization", mass, {"unit mass", Provenance::identity, 1e-6}));
        out.add(Verdict::judge(p + ".derivative_mass", derivative_mass,
                               {"derivatives integrate to zero", Provenance::identity, 1e-6}));
        out.add(Verdict::judge(p + ".fundamental_identities", identity_defect(k, params.identity_points),
                               {"backward and forward equations in both time variables", Provenance::identity, 1e-3},
                               {{"points", params.identity_points}}));
        out.add(Verdict::judge(p + ".chapman_kolmogorov", chapman_kolmogorov_defect(k),
                               {"semigroup property at an intermediate time", Provenance::identity, 1e-4}));

        if (params.estimates) {
            PointwiseProbe pointwise;
            // c = 1 / (4 Lambda) is the sharp Gaussian rate; derivatives need a strictly smaller one.
            pointwise.decay_c = 1.0 / (8.0 * k.diffusion().Lambda);
            for (const MultiIndex& g : indices_up_to(n, 2)) {
                const KernelConstantReport r = probe_pointwise_bound(k, g, pointwise);
                entry.push_back(r.to_json());
                judge_report(out, p, r, 1.3);
            }
            for (const MultiIndex& g : indices_up_to(n, 2)) {
                for (const KernelConstantReport& r : probe_integral_estimates(k, g, params.alpha, params.integral)) {
                    entry.push_back(r.to_json());
                    judge_report(out, p, r, 1.3);
                }
            }
            const SupIntegrabilityResult sup = probe_sup_kernel_integrability(k, params.alpha, 0.0, 0.125, params.integral.horizon, 3);
            double spread = INFINITY;
            if (sup.levels.size() >= 2 && std::isfinite(sup.value)) {
                const double a = sup.levels[sup.levels.size() - 2];
                const double b = sup.levels.back();
                spread = std::max(a, b) / std::min(a, b);
            }
            out.add(Verdict::judge(p + ".sup_kernel_moment.spread", sup.out_of_scope ? INFINITY : spread,
                                   {"sup-in-time kernel moment is finite and stable", Provenance::theorem, 1.1},
                                   {{"value", sup.value}, {"levels", sup.levels}, {"warning", sup.warning}}));
            entry.push_back({{"estimate_id", "sup_kernel_moment"}, {"value", sup.value}, {"levels", sup.levels}});
        }
        all[nk.name] = entry;
    }
    if (reports != nullptr) *reports = std::move(all);
    return out;
}

VerdictBundle run_bsde_cross_validation(int paths, int steps, std::uint64_t seed, Table* table) {
    if (paths < 100) throw Error(ErrorCode::invalid_argument, "cross-validation needs at least 100 paths");
    const TimeGrid g = build_time_grid(1.0, steps);
    const PathEnsemble e = sample_paths(paths, 1, g, seed);
    const double xs[] = {0.5, -1.3};
    // Columns: W_T, W_T^2, sin(x) W_T at each x.
    const int cols = 2 + static_cast<int>(std::size(xs));
    Eigen::MatrixXd terminal(e.paths, cols);
    for (int m = 0; m < e.paths; ++m) {
        const double w = e.w(m, steps)[0];
        terminal(m, 0) = w;
        terminal(m, 1) = w * w;
        for (std::size_t i = 0; i < std::size(xs); ++i) terminal(m, 2 + static_cast<int>(i)) = std::sin(xs[i]) * w;
    }
    const BsdeSolution reg = solve_bsde_regression(terminal, constant_sigma({0.0, 0.0}), e);
    auto phi_exact = [&](int j, double t, double w) {
        if (j == 0) return w;
        if (j == 1) return w * w + 1.0 - t;
        return std::sin(xs[j - 2]) * w;
    };
    auto psi_exact = [&](int j, double w) {
        if (j == 0) return 1.0;
        if (j == 1) return 2.0 * w;
        return std::sin(xs[j - 2]);
    };
    const char* names[] = {"w_terminal", "w_squared", "sin_x_w_a", "sin_x_w_b"};
    if (table != nullptr) *table = Table{{"column", "k", "phi_rms_error", "phi_se", "psi_rms_error", "psi_se"}, {}};
    VerdictBundle out;
    std::vector<double> fv(reg.phi.factors());
    for (int j = 0; j < cols; ++j) {
        double phi_sq = 0.0;
        double psi_sq = 0.0;
        double phi_se = 0.0;
        double psi_se = 0.0;
        for (int k = 0; k < steps; ++k) {
            double e_phi = 0.0;
            double e_psi = 0.0;
            for (int m = 0; m < e.paths; ++m) {
                const double w = e.w(m, k)[0];
                reg.phi.basis->evaluate(g.node(k), e.w(m, k), fv.data());
                e_phi += std::pow(reg.phi.value(k, static_cast<std::size_t>(j), fv.data()) - phi_exact(j, g.node(k), w), 2);
                e_psi += std::pow(reg.psi[0].value(k, static_cast<std::size_t>(j), fv.data()) - psi_exact(j, w), 2);
            }
            e_phi /= e.paths;
            e_psi /= e.paths;
            const std::size_t at = static_cast<std::size_t>(k) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j);
            const double s_phi = reg.phi_standard_error[at];
            const double s_psi = reg.psi_standard_error[at];
            phi_sq += e_phi / steps;
            psi_sq += e_psi / steps;
            phi_se += s_phi * s_phi / steps;
            psi_se += s_psi * s_psi / steps;
            if (table != nullptr) table->rows.push_back({double(j), double(k), std::sqrt(e_phi), s_phi, std::sqrt(e_psi), s_psi});
        }
        const std::string id = std::string("bsde_regression.") + names[j];
        out.add(Verdict::judge(id + ".phi", std::sqrt(phi_sq),
                               {"RMS error against the closed form within 3 RMS standard errors", Provenance::computed,
                                3.0 * std::sqrt(phi_se) + 1e-12},
                               {{"paths", paths}, {"steps", steps}}));
        out.add(Verdict::judge(id + ".psi", std::sqrt(psi_sq),
                               {"RMS error against the closed form within 3 RMS standard errors", Provenance::computed,
                                3.0 * std::sqrt(psi_se) + 1e-12},
                               {{"paths", paths}, {"steps", steps}}));
    }
    out.add(Verdict::judge("bsde_regression.condition", reg.condition,
                           {"normal equations well conditioned", Provenance::computed, 1e8}));
    return out;
}

}  // namespace bspde
