#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bspde/grid.hpp"
#include "bspde/linalg.hpp"

namespace bspde {

/// Space-invariant diffusion a(t) with ellipticity bounds lambda <= a <= Lambda.
struct DiffusionCoefficient {
    int dim = 1;
    std::function<SmallMatrix(double)> a;
    double lambda = 1.0;
    double Lambda = 1.0;
    bool time_constant = false;
    std::string label;

    static DiffusionCoefficient constant(const SmallMatrix& a, std::string label = "constant");
    static DiffusionCoefficient time_dependent(int dim, std::function<SmallMatrix(double)> a, double lambda,
                                               double Lambda, std::string label = "time-dependent");

    /// Checks the ellipticity bounds on sampled times and directions; throws assumption_violation.
    void validate(double horizon, int time_samples = 64, int direction_samples = 32) const;
};

/// Gaussian with a fixed covariance A: (4 pi)^{-n/2} det(A)^{-1/2} exp(-x.A^{-1}x / 4), times a damping factor.
class GaussianFrame {
public:
    GaussianFrame() = default;
    /// Throws ill_conditioned if cond(A) > 1e12 or A is not positive.
    GaussianFrame(const SmallMatrix& covariance, double damping = 1.0);

    [[nodiscard]] int dim() const noexcept { return n_; }
    [[nodiscard]] const SmallMatrix& covariance() const noexcept { return a_; }
    [[nodiscard]] const SmallMatrix& precision() const noexcept { return b_; }
    [[nodiscard]] double value(const Point& x) const noexcept;
    [[nodiscard]] double log_value(const Point& x) const noexcept;
    /// Ratio D^gamma G / G, a polynomial in x.
    [[nodiscard]] double hermite_factor(const Point& x, const MultiIndex& gamma) const;
    /// D^gamma of the Gaussian for |gamma| <= 3.
    [[nodiscard]] double derivative(const Point& x, const MultiIndex& gamma) const;

private:
    int n_ = 1;
    SmallMatrix a_;
    SmallMatrix b_;
    double scale_ = 0.0;
};

/// Heat potential G_{s,t} generated by a(t), optionally damped by exp(-beta (s - t)).
class HeatKernel {
public:
    explicit HeatKernel(DiffusionCoefficient diffusion, double beta = 0.0);

    [[nodiscard]] const DiffusionCoefficient& diffusion() const noexcept { return diffusion_; }
    [[nodiscard]] int dim() const noexcept { return diffusion_.dim; }
    [[nodiscard]] double beta() const noexcept { return beta_; }
    [[nodiscard]] HeatKernel with_beta(double beta) const { return HeatKernel(diffusion_, beta); }

    /// A_{s,t}: integral of a over [t, s]. Throws invalid_interval if t > s.
    [[nodiscard]] SmallMatrix covariance(double t, double s) const;
    /// Gaussian frame of G_{s,t} (including damping). Throws invalid_interval if s <= t.
    [[nodiscard]] GaussianFrame frame(double t, double s) const;
    [[nodiscard]] double value(double t, double s, const Point& x) const;
    [[nodiscard]] double derivative(double t, double s, const Point& x, const MultiIndex& gamma) const;

private:
    DiffusionCoefficient diffusion_;
    double beta_ = 0.0;
};

SmallMatrix accumulate_covariance(const HeatKernel& kernel, double t, double s);
double eval_kernel(const HeatKernel& kernel, double t, double s, const Point& x);
double eval_kernel_derivative(const HeatKernel& kernel, double t, double s, const Point& x, const MultiIndex& gamma);

/// Empirical constant of one kernel estimate.
struct KernelConstantReport {
    std::string estimate_id;
    MultiIndex gamma;
    double alpha = 0.0;
    double beta = 0.0;
    double decay_c = 0.0;
    /// Value of the estimate at each refinement level; the last entry is the reported one.
    std::vector<double> levels;
    double empirical_C = 0.0;
    /// Optional sweep (radius, beta or window) with the values measured along it.
    std::vector<double> sweep_points;
    std::vector<double> sweep_values;
    double fitted_exponent = 0.0;
    double predicted_exponent = 0.0;
    bool has_exponent = false;
    bool advisory = false;
    std::vector<std::string> flags;

    [[nodiscard]] bool finite() const noexcept;
    /// max/min over the last two refinement levels.
    [[nodiscard]] double refinement_spread() const noexcept;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct PointwiseProbe {
    double min_lag = 0.01;
    double max_lag = 1.0;
    double radius = 4.0;
    double decay_c = 0.125;
    int levels = 3;
};

/// Smallest C with |D^gamma G| <= C (s-t)^{-(n+|gamma|)/2} exp(-c|x|^2/(s-t)) on the probe set.
KernelConstantReport probe_pointwise_bound(const HeatKernel& kernel, const MultiIndex& gamma,
                                           const PointwiseProbe& probe);

struct IntegralProbe {
    double horizon = 1.0;
    int levels = 2;
    std::vector<double> radii{0.5, 0.25, 0.125};
    std::vector<double> betas{1.0, 4.0, 16.0, 64.0};
};

/// Weighted moment, time-integral decay, ball cancellation, ball moment, difference moment
/// and the damped variants, as applicable to |gamma|.
std::vector<KernelConstantReport> probe_integral_estimates(const HeatKernel& kernel, const MultiIndex& gamma,
                                                           double alpha, const IntegralProbe& probe);

struct SupIntegrabilityResult {
    double value = 0.0;
    std::vector<double> levels;
    bool out_of_scope = false;
    std::string warning;
};

/// Integral over z of sup_{r in [t, t + window]} G_{r,t}(z) |z|^{2 alpha}.
SupIntegrabilityResult probe_sup_kernel_integrability(const HeatKernel& kernel, double alpha, double t,
                                                      double window, double horizon, int levels = 3);

}  // namespace bspde
