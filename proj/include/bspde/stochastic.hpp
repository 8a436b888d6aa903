#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bspde/grid.hpp"

namespace bspde {

/// M Brownian paths of dimension d on a time grid.
///
/// Layout: increments[(m * K + k) * d + l] = W^l_{t_{k+1}} - W^l_{t_k},
/// positions[(m * (K + 1) + k) * d + l] = W^l_{t_k}.
struct PathEnsemble {
    int paths = 0;
    int dim = 1;
    TimeGrid grid;
    std::uint64_t seed = 0;
    std::vector<double> increments;
    std::vector<double> positions;

    [[nodiscard]] double dw(int m, int k, int l) const noexcept {
        return increments[(static_cast<std::size_t>(m) * grid.steps() + k) * dim + l];
    }
    [[nodiscard]] const double* w(int m, int k) const noexcept {
        return positions.data() + (static_cast<std::size_t>(m) * grid.size() + k) * dim;
    }
};

/// Same seed gives identical increments; path m draws from its own generator.
PathEnsemble sample_paths(int paths, int dim, const TimeGrid& grid, std::uint64_t seed);

/// First `paths` paths of an ensemble (all of them if paths >= ensemble.paths).
PathEnsemble subset_paths(const PathEnsemble& ensemble, int paths);

/// Flat binary file: uint64 header (M, d, K, seed) then row-major little-endian doubles.
void save_ensemble(const PathEnsemble& ensemble, const std::string& file);
PathEnsemble load_ensemble(const std::string& file, double horizon);

using DriftVector = std::array<double, 2>;
/// sigma(t, W_t); may depend on the path through its current position.
using SigmaFunction = std::function<DriftVector(double t, const double* w)>;

SigmaFunction constant_sigma(DriftVector sigma);

/// Girsanov change of measure removing the sigma drift.
struct GirsanovWeight {
    int dim = 1;
    std::vector<double> shifted;  // same layout as PathEnsemble::positions
    std::vector<double> density;  // D_T per path

    [[nodiscard]] double mean_density() const;
    [[nodiscard]] double density_standard_error() const;
};

/// Throws assumption_violation if |sigma| exceeds `bound` on any path.
GirsanovWeight girsanov_shift(const PathEnsemble& paths, const SigmaFunction& sigma, double bound);

/// Function of (t, W_t): a monomial w^a or the exponential martingale exp(theta.w - |theta|^2 t / 2).
struct PathFactor {
    enum class Kind { monomial, exponential };
    Kind kind = Kind::monomial;
    std::array<int, 2> power{0, 0};
    std::array<double, 2> theta{0.0, 0.0};

    static PathFactor one() { return {}; }
    static PathFactor monomial(int a0, int a1 = 0) { return {Kind::monomial, {a0, a1}, {0.0, 0.0}}; }
    static PathFactor exponential(double th0, double th1 = 0.0) { return {Kind::exponential, {0, 0}, {th0, th1}}; }

    [[nodiscard]] int degree() const noexcept { return kind == Kind::monomial ? power[0] + power[1] : 0; }
    [[nodiscard]] bool is_one() const noexcept { return kind == Kind::monomial && degree() == 0; }
    [[nodiscard]] double value(double t, const double* w, int dim) const noexcept;
    [[nodiscard]] std::string label() const;
    bool operator==(const PathFactor&) const = default;
};

/// Ordered set of path factors closed under conditional expectation and w-gradients.
class FactorBasis {
public:
    FactorBasis() = default;
    FactorBasis(int dim, std::vector<PathFactor> factors);

    /// Smallest closed basis containing the seeds; the constant factor comes first.
    static FactorBasis closure(int dim, const std::vector<PathFactor>& seeds);
    static FactorBasis monomials(int dim, int degree);

    [[nodiscard]] int dim() const noexcept { return dim_; }
    [[nodiscard]] std::size_t size() const noexcept { return factors_.size(); }
    [[nodiscard]] const PathFactor& operator[](std::size_t i) const noexcept { return factors_[i]; }
    [[nodiscard]] const std::vector<PathFactor>& factors() const noexcept { return factors_; }
    [[nodiscard]] int find(const PathFactor& f) const noexcept;
    [[nodiscard]] bool deterministic() const noexcept { return factors_.size() == 1; }
    [[nodiscard]] bool polynomial() const noexcept;

    void evaluate(double t, const double* w, double* out) const noexcept;
    /// Coefficient map of d/dw_l: column r holds the expansion of d/dw_l of factor r.
    [[nodiscard]] Eigen::MatrixXd gradient(int l) const;

private:
    int dim_ = 1;
    std::vector<PathFactor> factors_;
};

/// Coefficient maps of E^Q[ . | F_{t_k}] from the factor basis at t_m to the basis at t_k.
class ConditionalMaps {
public:
    ConditionalMaps() = default;

    /// Closed form for a deterministic, time-constant sigma.
    static ConditionalMaps closed_form(std::shared_ptr<const FactorBasis> basis, const TimeGrid& grid,
                                       DriftVector sigma);
    /// One-step maps by density-weighted least squares on the ensemble (any sigma).
    static ConditionalMaps regression(std::shared_ptr<const FactorBasis> basis, const PathEnsemble& paths,
                                      const SigmaFunction& sigma);

    [[nodiscard]] const std::string& provenance() const noexcept { return provenance_; }
    [[nodiscard]] const FactorBasis& basis() const noexcept { return *basis_; }
    [[nodiscard]] std::shared_ptr<const FactorBasis> basis_ptr() const noexcept { return basis_; }
    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }

    /// P(k, k + 1).
    [[nodiscard]] const Eigen::MatrixXd& step(int k) const { return steps_.at(static_cast<std::size_t>(k)); }
    /// P(k, m) for k <= m.
    [[nodiscard]] Eigen::MatrixXd map(int k, int m) const;
    /// Pz_l(k, m) = D_l P(k, m): the martingale-representation integrand map.
    [[nodiscard]] Eigen::MatrixXd gradient_map(int l, int k, int m) const;
    [[nodiscard]] const Eigen::MatrixXd& gradient(int l) const { return gradients_.at(static_cast<std::size_t>(l)); }
    [[nodiscard]] double worst_condition() const noexcept { return condition_; }

private:
    std::shared_ptr<const FactorBasis> basis_;
    TimeGrid grid_;
    std::string provenance_;
    bool closed_ = false;
    DriftVector sigma_{0.0, 0.0};
    std::vector<Eigen::MatrixXd> steps_;
    std::vector<Eigen::MatrixXd> gradients_;
    double condition_ = 1.0;
};

/// Closed-form closed-in-time space factor h(t, x) with derivatives up to order 2.
struct SpaceFunction {
    std::function<double(double t, const Point& x, const MultiIndex& gamma)> eval;
    std::string label;

    [[nodiscard]] double operator()(double t, const Point& x) const { return eval(t, x, MultiIndex::zero(kMaxDim)); }

    static SpaceFunction constant(double c);
    /// sin(k.x + phase) * exp(rate * t).
    static SpaceFunction sine(Point wave, double phase = 0.0, double rate = 0.0);
    /// x_0^p0 x_1^p1.
    static SpaceFunction monomial(int p0, int p1 = 0);
    /// Sum of two space functions.
    static SpaceFunction sum(SpaceFunction a, SpaceFunction b);
};

struct DataTerm {
    SpaceFunction space;
    PathFactor path;
    double scale = 1.0;
};

/// Finite sum of space factors times path factors: Phi(x) or f(t, x).
struct DataFunctional {
    std::vector<DataTerm> terms;
    /// Claimed Hoelder class m + alpha of the space factors.
    double holder_class = 1.5;

    [[nodiscard]] bool empty() const noexcept { return terms.empty(); }
    [[nodiscard]] bool deterministic() const noexcept;
    [[nodiscard]] std::vector<PathFactor> factors() const;
    [[nodiscard]] DataFunctional scaled(double kappa) const;
    [[nodiscard]] double value(double t, const Point& x, const double* w, int dim) const;

    static DataFunctional zero() { return {}; }
    static DataFunctional deterministic_term(SpaceFunction h, double holder_class = 1.5);
    static DataFunctional single(SpaceFunction h, PathFactor p, double holder_class = 1.5);
    friend DataFunctional operator+(DataFunctional a, const DataFunctional& b);
};

/// Separable random field on (time grid) x (space points): value(k, j) = sum_q coef(k, q, j) B_q(t_k, W_{t_k}).
struct SeparableSeries {
    std::shared_ptr<const FactorBasis> basis;
    TimeGrid time;
    std::size_t points = 0;
    std::vector<double> coef;

    SeparableSeries() = default;
    SeparableSeries(std::shared_ptr<const FactorBasis> b, TimeGrid t, std::size_t n)
        : basis(std::move(b)), time(t), points(n), coef(time.size() * basis->size() * n, 0.0) {}

    [[nodiscard]] std::size_t factors() const noexcept { return basis->size(); }
    [[nodiscard]] double* slice(int k, std::size_t q) noexcept {
        return coef.data() + (static_cast<std::size_t>(k) * factors() + q) * points;
    }
    [[nodiscard]] const double* slice(int k, std::size_t q) const noexcept {
        return coef.data() + (static_cast<std::size_t>(k) * factors() + q) * points;
    }
    [[nodiscard]] double at(int k, std::size_t q, std::size_t j) const noexcept { return slice(k, q)[j]; }
    /// Value at time k, point j, given factor values B(t_k, W_{t_k}).
    [[nodiscard]] double value(int k, std::size_t j, const double* factor_values) const noexcept;

    SeparableSeries& operator+=(const SeparableSeries& o);
    SeparableSeries& operator*=(double s);
};

/// Coefficients of a data functional on the basis at every grid time and every space point.
SeparableSeries project_data(const DataFunctional& data, std::shared_ptr<const FactorBasis> basis,
                             const TimeGrid& time, const SpaceGrid& space, const MultiIndex& gamma);

struct ResidualStats {
    double rms = 0.0;
    double worst_path = 0.0;
    double max_abs = 0.0;
    double standard_error = 0.0;
};

/// Solutions of phi = Phi + int sigma psi dr - int psi dW (first family).
struct BsdeSolution {
    std::string provenance;
    SeparableSeries phi;
    std::vector<SeparableSeries> psi;
    /// Regression only: condition number of the worst normal-equation system.
    double condition = 1.0;
    /// Regression only: projection standard errors, layout k * J + j (psi: max over components).
    std::vector<double> phi_standard_error;
    std::vector<double> psi_standard_error;
    ResidualStats residual;
};

/// Second family Y(t; tau, x) = E^Q[f(tau, x) | F_t] and g(t; tau, x), stored tau-major:
/// entry m holds coefficients for times 0..m, layout ((k * F) + q) * J + j.
struct SecondFamily {
    std::string provenance;
    std::shared_ptr<const FactorBasis> basis;
    std::size_t points = 0;
    std::vector<std::vector<double>> y;
    std::vector<std::vector<std::vector<double>>> g;

    [[nodiscard]] const double* y_slice(int m, int k, std::size_t q) const noexcept {
        return y[static_cast<std::size_t>(m)].data() + (static_cast<std::size_t>(k) * basis->size() + q) * points;
    }
    [[nodiscard]] const double* g_slice(int l, int m, int k, std::size_t q) const noexcept {
        return g[static_cast<std::size_t>(m)][static_cast<std::size_t>(l)].data() +
               (static_cast<std::size_t>(k) * basis->size() + q) * points;
    }
};

/// Per-path defect of value(t) - [terminal + int_t^T integrand ds - int_t^T martingale . dW] at every grid time.
///
/// Trapezoid rule for the ds integral; Ito sums with a Milstein term for martingales that depend on W.
/// A deterministic basis may pass paths == nullptr (one path, no noise).
ResidualStats integral_form_residual(const SeparableSeries& value, const SeparableSeries& terminal,
                                     const SeparableSeries& integrand, const std::vector<SeparableSeries>& martingale,
                                     const PathEnsemble* paths, const std::vector<std::size_t>& points);

/// Per-path residual of the first-family BSDE, with a Milstein correction for non-constant psi.
ResidualStats bsde_residual(const BsdeSolution& solution, const SeparableSeries& terminal, const DriftVector& sigma,
                            const PathEnsemble& paths, const std::vector<std::size_t>& points);

BsdeSolution solve_bsde_closed(const DataFunctional& terminal, DriftVector sigma,
                               std::shared_ptr<const FactorBasis> basis, const TimeGrid& time,
                               const SpaceGrid& space, const PathEnsemble* paths = nullptr);

/// Least-squares Monte Carlo backward induction.
struct RegressionSpec {
    int degree = 3;
    double singular_tolerance = 1e-12;
};

/// terminal(m, j): terminal sample of path m at space point j (M x J).
BsdeSolution solve_bsde_regression(const Eigen::MatrixXd& terminal, const SigmaFunction& sigma,
                                   const PathEnsemble& paths, const RegressionSpec& spec = {});

SecondFamily solve_second_family(const DataFunctional& f, const ConditionalMaps& maps, const SpaceGrid& space);

/// Least-squares fit of targets on the design columns via LDLT of the normal equations.
struct RegressionFit {
    Eigen::MatrixXd coef;
    double condition = 1.0;
    Eigen::VectorXd residual_variance;
};
/// Throws singular_regression (with the condition number) when cond(X'X) exceeds 1 / singular_tolerance.
RegressionFit least_squares(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets, double singular_tolerance);

}  // namespace bspde
