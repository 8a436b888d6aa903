#pragma once

#include <map>
#include <vector>

#include "bspde/grid.hpp"
#include "bspde/kernel.hpp"

namespace bspde::detail {

/// Kernel derivatives sampled on the lattice offsets of a space grid, for one fixed covariance.
///
/// apply() evaluates sum_y w_y D^gamma G(x - y) f(y) over the box; second derivatives use
/// the subtracted form sum_y w_y D^gamma G(x - y) [f(y) - f(x)].
class StencilPlan {
public:
    StencilPlan(const GaussianFrame& frame, const SpaceGrid& grid, int max_order);

    [[nodiscard]] int max_order() const noexcept { return max_order_; }
    /// |h^n sum over lattice offsets of G - 1| for the undamped Gaussian with this covariance.
    static double mass_defect(const SmallMatrix& covariance, const SpaceGrid& grid);
    void apply(const double* field, const MultiIndex& gamma, double* out) const;
    [[nodiscard]] std::vector<double> apply(const std::vector<double>& field, const MultiIndex& gamma) const;

private:
    struct Taps {
        std::vector<double> values;  // (o0 + r0) * w1 + (o1 + r1)
        std::vector<double> mass;    // per grid node, second order only
    };

    const SpaceGrid* grid_;
    int max_order_;
    std::array<int, kMaxDim> reach_{0, 0};
    std::vector<double> weights_;
    std::map<MultiIndex, Taps> taps_;

    void convolve(const std::vector<double>& taps, const double* weighted, double* out) const;
};

}  // namespace bspde::detail
