#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bspde/grid.hpp"
#include "bspde/holder.hpp"
#include "bspde/kernel.hpp"
#include "bspde/linalg.hpp"
#include "bspde/stochastic.hpp"

namespace bspde {

using MatrixField = std::function<SmallMatrix(double t, const Point& x)>;
using VectorField = std::function<Point(double t, const Point& x)>;
using ScalarField = std::function<double(double t, const Point& x)>;
using NoiseField = std::function<DriftVector(double t, const Point& x)>;

/// Driver f(t, x, grad u, u, v) of the semilinear equation with Lipschitz constant L.
///
/// General drivers act on deterministic fields only. Affine drivers
/// f0 + cu u + cq . grad u + cv . v also act on stochastic fields.
struct SemilinearDriver {
    std::function<double(double t, const Point& x, const Point& q, double u, const DriftVector& v)> f;
    double lipschitz = 0.0;
    std::string label;

    bool affine = false;
    DataFunctional f0;
    double cu = 0.0;
    Point cq{0.0, 0.0};
    DriftVector cv{0.0, 0.0};

    static SemilinearDriver general(
        std::function<double(double, const Point&, const Point&, double, const DriftVector&)> f, double lipschitz,
        std::string label);
    static SemilinearDriver linear(double cu, DataFunctional f0 = {});
};

struct CoefficientSet {
    int dim = 1;
    int noise_dim = 1;
    MatrixField a;
    bool a_space_invariant = true;
    bool a_time_constant = true;
    VectorField b;  // empty: zero
    ScalarField c;  // empty: zero
    NoiseField sigma;  // empty: zero
    bool sigma_space_invariant = true;
    DataFunctional f;
    DataFunctional Phi;
    std::optional<SemilinearDriver> driver;
    double lambda = 1.0;
    double Lambda = 1.0;
    /// Bound on the sampled sup norms of a, b, c and sigma.
    double coefficient_bound = 1e6;
    std::string label;

    /// a constant in (t, x); everything else zero.
    static CoefficientSet constant_diffusion(int dim, const SmallMatrix& a, int noise_dim = 1);

    [[nodiscard]] SmallMatrix a_at(double t, const Point& x) const { return a(t, x); }
    [[nodiscard]] Point b_at(double t, const Point& x) const { return b ? b(t, x) : Point{0.0, 0.0}; }
    [[nodiscard]] double c_at(double t, const Point& x) const { return c ? c(t, x) : 0.0; }
    [[nodiscard]] DriftVector sigma_at(double t, const Point& x) const { return sigma ? sigma(t, x) : DriftVector{0.0, 0.0}; }
    [[nodiscard]] bool has_b() const noexcept { return static_cast<bool>(b); }
    [[nodiscard]] bool has_c() const noexcept { return static_cast<bool>(c); }
    /// Terminal data, source and affine driver data are all deterministic.
    [[nodiscard]] bool deterministic_data() const;
    [[nodiscard]] std::vector<PathFactor> factors() const;

    /// Super-parabolicity, coefficient bounds and the driver Lipschitz bound on sampled arguments.
    /// Throws assumption_violation.
    void validate(const TimeGrid& time, const SpaceGrid& space, int samples = 64) const;
};

enum class AssemblyMode { recursive, direct };

struct SolverConfig {
    /// Unset: 0 for linear solves, 8 for semilinear ones.
    std::optional<double> beta;
    double theta = 0.5;
    int max_iterations = 60;
    double tolerance = 1e-9;
    /// Trapezoid time quadrature with the exact s = t endpoint; false uses the right-point rule.
    bool endpoint_limit = true;
    AssemblyMode assembly = AssemblyMode::recursive;
    Point x_ref{0.0, 0.0};
    double alpha = 0.5;
    bool compute_residual = true;
    int residual_points = 32;
    int residual_paths = 2000;
    /// Paths used by the Picard convergence norms of stochastic fields.
    int norm_paths = 512;
    bool auto_raise_beta = true;
    int max_beta_doublings = 4;

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    double beta = 0.0;
    double change = 0.0;
    double relative_change = 0.0;
    double norm = 0.0;
    /// change / previous change; 0 for the first iteration.
    double contraction = 0.0;
};

/// (u, v) on the time grid x space grid in separable form, with derivative caches.
struct SolutionField {
    std::shared_ptr<const FactorBasis> basis;
    TimeGrid time;
    SpaceGrid space;
    int noise_dim = 1;
    /// u and D^gamma u for |gamma| <= 2.
    std::map<MultiIndex, SeparableSeries> u;
    /// v_l and D^gamma v_l for |gamma| <= 1.
    std::vector<std::map<MultiIndex, SeparableSeries>> v;
    /// Phi projected on the basis (only the last time slice is meaningful).
    SeparableSeries terminal;
    std::string derivative_source = "analytic";
    std::string route;
    double beta = 0.0;
    bool converged = true;
    int iterations = 1;
    double contraction_factor = 0.0;
    std::vector<IterationRecord> history;
    std::vector<std::string> advisories;
    ResidualStats residual;
    bool has_residual = false;

    [[nodiscard]] bool deterministic() const noexcept { return basis->deterministic(); }
    [[nodiscard]] std::size_t factors() const noexcept { return basis->size(); }
    [[nodiscard]] const SeparableSeries& du(const MultiIndex& gamma) const;
    [[nodiscard]] const SeparableSeries& dv(int l, const MultiIndex& gamma) const;
    [[nodiscard]] bool has_caches(int order) const;
    /// Value of u at (t_k, x_j) on a path position w (ignored for deterministic fields).
    [[nodiscard]] double u_at(int k, std::size_t j, const double* w = nullptr) const;
    [[nodiscard]] double v_at(int l, int k, std::size_t j, const double* w = nullptr) const;

    [[nodiscard]] FieldSample u_sample(NormFamily family, std::shared_ptr<const FactorSamples> samples,
                                       int max_order = 2) const;
    /// Components are v_1..v_d.
    [[nodiscard]] FieldSample v_sample(NormFamily family, std::shared_ptr<const FactorSamples> samples,
                                       int max_order = 1) const;

    /// Columns path_id, t, x..., u, v_1..v_d; 17 significant digits.
    void write_csv(std::ostream& out, const PathEnsemble* paths, int path_limit = 4, int time_stride = 1) const;
    [[nodiscard]] nlohmann::json summary() const;
};

/// Factor samples matching the field: one constant path when deterministic, else the first `path_limit` paths.
std::shared_ptr<const FactorSamples> field_samples(const SolutionField& field, const PathEnsemble* paths,
                                                   int path_limit);

/// Integral-form defect of (u, v) for the full equation with the given coefficients.
ResidualStats solution_residual(const SolutionField& field, const CoefficientSet& coeffs, const PathEnsemble* paths,
                                int point_limit = 32, int path_limit = 2000);

/// R^s_t applied to a nodal field (|gamma| = 2 in the subtracted form).
std::vector<double> convolve(const HeatKernel& kernel, double t, double s, const SpaceGrid& grid,
                             const std::vector<double>& field, const MultiIndex& gamma);

/// Model equation: space-invariant a and sigma, b = c = 0.
SolutionField solve_model(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                          const PathEnsemble* paths, const SolverConfig& config = {});
/// Deterministic coefficients and data; v = 0.
SolutionField solve_deterministic_pde(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                                      const SolverConfig& config = {});
/// Frozen-coefficient Picard iteration around a(t, x_ref), sigma(t, x_ref).
SolutionField solve_variable_linear(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                                    const PathEnsemble* paths, const SolverConfig& config = {});
/// Picard iteration in the e^{beta t} weighted unknowns.
SolutionField solve_semilinear(const CoefficientSet& coeffs, const TimeGrid& time, const SpaceGrid& space,
                               const PathEnsemble* paths, const SolverConfig& config = {});

/// eta(x) = phi((x - z) / theta) with phi(x) = S(2 - |x|).
struct BumpField {
    int dim = 1;
    Point z{0.0, 0.0};
    double theta = 1.0;

    [[nodiscard]] double value(const Point& x) const;
    /// |gamma| <= 2.
    [[nodiscard]] double derivative(const Point& x, const MultiIndex& gamma) const;
};

/// Smooth step: 0 for t <= 0, 1 for t >= 1; derivatives up to order 2.
double smooth_step(double t, int order = 0);

struct LocalizedProblem {
    BumpField bump;
    SmallMatrix a_frozen;
    DriftVector sigma_frozen{0.0, 0.0};
    /// eta u with derivatives up to order 2, and eta v_l.
    std::map<MultiIndex, SeparableSeries> u;
    std::vector<SeparableSeries> v;
    SeparableSeries terminal;
    /// The seven source terms and their sum.
    std::vector<std::pair<std::string, SeparableSeries>> terms;
    SeparableSeries source;
    ResidualStats residual;
    ResidualStats parent_residual;
};

/// Throws invalid_input when the field lacks second-order caches.
LocalizedProblem localize(const SolutionField& solution, const CoefficientSet& coeffs, const Point& z, double theta,
                          const PathEnsemble* paths, int point_limit = 32, int path_limit = 500);

struct LocalizationReport {
    double theta = 0.0;
    int m = 2;
    double alpha = 0.5;
    double norm = 0.0;
    double local_sup = 0.0;
    double base = 0.0;
    double top_seminorm = 0.0;
    /// Smallest C with norm <= 2 local_sup + C base.
    double smallest_C = 0.0;
    /// 2 local_sup + 2 theta^{-alpha} [h]_m - norm.
    double slack = 0.0;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Masks h by eta^z_theta for every z among the field points and compares the norms.
LocalizationReport check_localization_inequality(const FieldSample& h, double theta, int m, double alpha);

/// ||u(t) - u(t - tau)||_{alpha, L2} over t in [tau, T]; throws invalid_shift off the grid.
double time_shift_norm(const SolutionField& solution, double tau, const PathEnsemble* paths, double alpha = 0.5,
                       int path_limit = 512);

}  // namespace bspde
