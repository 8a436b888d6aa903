#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bspde/grid.hpp"
#include "bspde/stochastic.hpp"

namespace bspde {

enum class NormFamily { l2, s2, linf, l2_terminal };

std::string_view to_string(NormFamily family) noexcept;

/// Path-factor values B_q(t_k, W_{t_k}(m)) on every path and time, shared between fields.
struct FactorSamples {
    int paths = 1;
    std::size_t factors = 1;
    TimeGrid time;
    std::vector<double> values;  // (k * M + m) * F + q
    std::vector<Eigen::MatrixXd> gram;

    [[nodiscard]] const double* row(int k, int m) const noexcept {
        return values.data() + (static_cast<std::size_t>(k) * paths + m) * factors;
    }

    static std::shared_ptr<const FactorSamples> from_ensemble(const FactorBasis& basis, const PathEnsemble& paths);
    /// One path, one constant factor.
    static std::shared_ptr<const FactorSamples> deterministic(const TimeGrid& time);
    /// Factors [B(t_k), B(t_{k-shift})] for differences u(t) - u(t - tau); entries with k < shift are zero.
    static std::shared_ptr<const FactorSamples> shifted_pair(const FactorSamples& base, int shift);

private:
    void build_gram();
};

/// Field sampled in separable form: value(m, k, j) = sum_q coef(k, q, j) B_q(t_k, W_{t_k}(m)), per component.
class FieldSample {
public:
    FieldSample(NormFamily family, SpaceGrid space, std::shared_ptr<const FactorSamples> samples, int components = 1);

    /// Deterministic field from a closed-form evaluator (derivatives up to max_order from the evaluator).
    static FieldSample from_function(NormFamily family, const SpaceGrid& space, const TimeGrid& time,
                                     const std::function<double(double t, const Point& x, const MultiIndex& g)>& f,
                                     int max_order);

    [[nodiscard]] NormFamily family() const noexcept { return family_; }
    [[nodiscard]] const SpaceGrid& space() const noexcept { return space_; }
    [[nodiscard]] const FactorSamples& samples() const noexcept { return *samples_; }
    [[nodiscard]] std::shared_ptr<const FactorSamples> samples_ptr() const noexcept { return samples_; }
    [[nodiscard]] int components() const noexcept { return components_; }

    /// coef layout: ((k * F) + q) * J + j.
    void set(const MultiIndex& gamma, int component, std::vector<double> coef);
    [[nodiscard]] bool has(const MultiIndex& gamma) const;
    [[nodiscard]] int max_order() const;
    [[nodiscard]] const std::vector<double>& coef(const MultiIndex& gamma, int component) const;
    /// Fill missing derivatives up to `order` by central differences of the level-0 values.
    void fill_by_differences(int order);

    /// Same field with the family tag replaced (coefficients shared by copy).
    [[nodiscard]] FieldSample with_family(NormFamily family) const;
    [[nodiscard]] FieldSample scaled(double kappa) const;
    /// Pointwise sum of two fields on the same samples.
    [[nodiscard]] FieldSample plus(const FieldSample& other) const;

    std::string derivative_source = "analytic";
    /// Time window [first_time, last_time] of grid indices used by the time quadrature / sup.
    int first_time = 0;
    int last_time = 0;
    /// Space points over which sups are taken (default: the grid interior window).
    std::vector<std::size_t> points;
    /// Path subsample used by fractional S2 pair sups.
    int s2_fractional_paths = 256;

private:
    NormFamily family_;
    SpaceGrid space_;
    std::shared_ptr<const FactorSamples> samples_;
    int components_ = 1;
    std::map<MultiIndex, std::vector<std::vector<double>>> cache_;
};

/// [field]_{k, family}: sup over points of the family norm, summed over |gamma| = k.
double estimate_seminorm(const FieldSample& field, int k, NormFamily family);
/// [field]_{m + alpha, family}: sup over point pairs of the family norm of the difference / |x - y|^alpha.
double estimate_fractional_seminorm(const FieldSample& field, int m, double alpha, NormFamily family);

struct HolderReport {
    NormFamily family = NormFamily::l2;
    int m = 0;
    double alpha = 0.5;
    std::vector<double> seminorms;
    double fractional = 0.0;
    double total = 0.0;
    double standard_error = 0.0;
    nlohmann::json grid_meta;

    [[nodiscard]] nlohmann::json to_json() const;
};

HolderReport holder_report(const FieldSample& field, int m, double alpha);

struct InequalityCheck {
    std::string id;
    double lhs = 0.0;
    double rhs = 0.0;
    [[nodiscard]] double slack() const noexcept { return rhs - lhs; }
};

struct ProductReport {
    std::vector<InequalityCheck> checks;
    [[nodiscard]] int violations(double tolerance = 1e-9) const;
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Products of a deterministic multiplier h (L-infinity tag) with psi.
ProductReport check_product_inequalities(const FieldSample& h, const FieldSample& psi, double alpha);

struct InterpolationEntry {
    std::string id;
    double epsilon = 0.0;
    double lhs = 0.0;
    double top = 0.0;
    double base = 0.0;
    /// Smallest C with lhs <= eps * top + C * base; infinite if none exists.
    double smallest_C = 0.0;
};

struct InterpolationReport {
    double alpha = 0.5;
    std::vector<InterpolationEntry> entries;
    std::vector<std::string> flags;
    [[nodiscard]] int violations() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

InterpolationReport check_interpolation(const FieldSample& field, double alpha, const std::vector<double>& epsilons,
                                        double envelope_margin = 0.5);

}  // namespace bspde
