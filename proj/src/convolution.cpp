#include <algorithm>
#include <cmath>

#include "bspde/solver.hpp"
#include "stencil.hpp"

namespace bspde::detail {

StencilPlan::StencilPlan(const GaussianFrame& frame, const SpaceGrid& grid, int max_order)
    : grid_(&grid), max_order_(max_order), weights_(cell_weights(grid)) {
    if (max_order < 0 || max_order > 2) throw Error(ErrorCode::unsupported_order, "stencil order must be at most 2");
    const int n = grid.dim();
    const double h = grid.spacing();
    for (int i = 0; i < n; ++i) {
        const double sd = std::sqrt(2.0 * frame.covariance()(i, i));
        reach_[static_cast<std::size_t>(i)] = std::min(grid.per_axis() - 1, static_cast<int>(std::ceil(9.0 * sd / h)));
    }
    const int w0 = 2 * reach_[0] + 1;
    const int w1 = n == 2 ? 2 * reach_[1] + 1 : 1;
    for (int order = 0; order <= max_order; ++order) {
        for (const MultiIndex& g : multi_indices_of_order(n, order)) {
            Taps t;
            t.values.resize(static_cast<std::size_t>(w0) * w1);
            for (int a = 0; a < w0; ++a) {
                for (int b = 0; b < w1; ++b) {
                    const Point x{(a - reach_[0]) * h, n == 2 ? (b - reach_[1]) * h : 0.0};
                    t.values[static_cast<std::size_t>(a) * w1 + b] = order == 0 ? frame.value(x) : frame.derivative(x, g);
                }
            }
            if (order == 2) {
                t.mass.resize(grid.size());
                convolve(t.values, weights_.data(), t.mass.data());
            }
            taps_.emplace(g, std::move(t));
        }
    }
}

double StencilPlan::mass_defect(const SmallMatrix& covariance, const SpaceGrid& grid) {
    const GaussianFrame frame(covariance);
    const int n = grid.dim();
    const double h = grid.spacing();
    std::array<int, kMaxDim> r{0, 0};
    for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = static_cast<int>(std::ceil(12.0 * std::sqrt(2.0 * covariance(i, i)) / h));
    double sum = 0.0;
    for (int a = -r[0]; a <= r[0]; ++a) {
        for (int b = -r[1]; b <= r[1]; ++b) sum += frame.value({a * h, b * h});
    }
    return std::abs(sum * std::pow(h, n) - 1.0);
}

void StencilPlan::convolve(const std::vector<double>& taps, const double* weighted, double* out) const {
    const SpaceGrid& g = *grid_;
    const int J = g.per_axis();
    if (g.dim() == 1) {
        const int r = reach_[0];
        for (int i = 0; i < J; ++i) {
            const int lo = std::max(-r, i - (J - 1));
            const int hi = std::min(r, i);
            double s = 0.0;
            for (int o = lo; o <= hi; ++o) s += taps[static_cast<std::size_t>(o + r)] * weighted[i - o];
            out[i] = s;
        }
        return;
    }
    const int r0 = reach_[0];
    const int r1 = reach_[1];
    const int w1 = 2 * r1 + 1;
    for (int i0 = 0; i0 < J; ++i0) {
        const int lo0 = std::max(-r0, i0 - (J - 1));
        const int hi0 = std::min(r0, i0);
        for (int i1 = 0; i1 < J; ++i1) {
            const int lo1 = std::max(-r1, i1 - (J - 1));
            const int hi1 = std::min(r1, i1);
            double s = 0.0;
            for (int o0 = lo0; o0 <= hi0; ++o0) {
                const double* tap = taps.data() + static_cast<std::size_t>(o0 + r0) * w1 + r1;
                const double* f = weighted + static_cast<std::size_t>(i0 - o0) * J + i1;
                for (int o1 = lo1; o1 <= hi1; ++o1) s += tap[o1] * f[-o1];
            }
            out[static_cast<std::size_t>(i0) * J + i1] = s;
        }
    }
}

void StencilPlan::apply(const double* field, const MultiIndex& gamma, double* out) const {
    MultiIndex g = gamma;
    g.dim = grid_->dim();
    const auto it = taps_.find(g);
    if (it == taps_.end()) throw Error(ErrorCode::unsupported_order, "derivative order above the stencil plan");
    const std::size_t J = grid_->size();
    std::vector<double> weighted(J);
    for (std::size_t j = 0; j < J; ++j) weighted[j] = weights_[j] * field[j];
    convolve(it->second.values, weighted.data(), out);
    if (!it->second.mass.empty()) {
        for (std::size_t j = 0; j < J; ++j) out[j] -= field[j] * it->second.mass[j];
    }
}

std::vector<double> StencilPlan::apply(const std::vector<double>& field, const MultiIndex& gamma) const {
    std::vector<double> out(field.size());
    apply(field.data(), gamma, out.data());
    return out;
}

}  // namespace bspde::detail

namespace bspde {

std::vector<double> convolve(const HeatKernel& kernel, double t, double s, const SpaceGrid& grid,
                             const std::vector<double>& field, const MultiIndex& gamma) {
    if (gamma.order() > 2) throw Error(ErrorCode::unsupported_order, "convolution supports |gamma| <= 2");
    if (field.size() != grid.size()) throw Error(ErrorCode::invalid_argument, "field size does not match the grid");
    if (!(s > t)) throw Error(ErrorCode::invalid_interval, "convolution needs s > t");
    const detail::StencilPlan plan(kernel.frame(t, s), grid, gamma.order());
    return plan.apply(field, gamma);
}

}  // namespace bspde
