#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "bspde/error.hpp"

namespace bspde {

/// Spatial dimensions supported throughout the library.
inline constexpr int kMaxDim = 2;

using Point = std::array<double, kMaxDim>;

/// Uniform partition of [0, T] with K steps.
class TimeGrid {
public:
    TimeGrid() = default;

    [[nodiscard]] double horizon() const noexcept { return horizon_; }
    [[nodiscard]] int steps() const noexcept { return steps_; }
    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(steps_) + 1; }
    [[nodiscard]] double dt() const noexcept { return horizon_ / steps_; }
    [[nodiscard]] double node(int k) const noexcept {
        return k == steps_ ? horizon_ : horizon_ * static_cast<double>(k) / steps_;
    }
    [[nodiscard]] std::vector<double> nodes() const;

    /// Index of the node equal to t (within 1e-9 relative); throws invalid_shift otherwise.
    [[nodiscard]] int index_of(double t) const;

    friend TimeGrid build_time_grid(double horizon, int steps);

private:
    double horizon_ = 1.0;
    int steps_ = 1;
};

TimeGrid build_time_grid(double horizon, int steps);

/// Uniform lattice on [-R, R]^n with J nodes per axis.
///
/// The interior radius marks the window where truncation error of the box
/// is negligible; estimators and error reports restrict to it.
class SpaceGrid {
public:
    SpaceGrid() = default;

    [[nodiscard]] int dim() const noexcept { return dim_; }
    [[nodiscard]] double radius() const noexcept { return radius_; }
    [[nodiscard]] int per_axis() const noexcept { return per_axis_; }
    [[nodiscard]] double spacing() const noexcept { return spacing_; }
    [[nodiscard]] double interior_radius() const noexcept { return interior_radius_; }
    [[nodiscard]] std::size_t size() const noexcept { return size_; }

    [[nodiscard]] double axis_node(int i) const noexcept { return -radius_ + spacing_ * i; }
    [[nodiscard]] Point point(std::size_t flat) const noexcept;
    [[nodiscard]] std::array<int, kMaxDim> unflatten(std::size_t flat) const noexcept;
    [[nodiscard]] std::size_t flatten(std::array<int, kMaxDim> idx) const noexcept;

    /// Flat indices of nodes with max_i |x_i| <= interior radius.
    [[nodiscard]] const std::vector<std::size_t>& interior() const noexcept { return interior_; }
    [[nodiscard]] bool same_layout(const SpaceGrid& other) const noexcept;

    friend SpaceGrid build_space_grid(int dim, double radius, int per_axis, double interior_radius);

private:
    int dim_ = 1;
    double radius_ = 1.0;
    int per_axis_ = 3;
    double spacing_ = 1.0;
    double interior_radius_ = 1.0;
    std::size_t size_ = 3;
    std::vector<std::size_t> interior_;
};

/// `interior_radius` <= 0 selects the whole box.
SpaceGrid build_space_grid(int dim, double radius, int per_axis, double interior_radius = 0.0);

/// Box radius that keeps Gaussian tail mass beyond the interior window below 1e-8.
double truncation_radius(double interior_radius, double ellipticity_upper, double horizon);

/// Multi-index gamma = (gamma_1, ..., gamma_n) with n <= 2.
struct MultiIndex {
    int dim = 1;
    std::array<int, kMaxDim> g{0, 0};

    [[nodiscard]] int order() const noexcept;
    [[nodiscard]] bool operator==(const MultiIndex&) const = default;
    [[nodiscard]] auto operator<=>(const MultiIndex&) const = default;

    static MultiIndex zero(int dim) { return MultiIndex{dim, {0, 0}}; }
    static MultiIndex unit(int dim, int axis);
    static MultiIndex pair(int dim, int i, int j);
};

/// All multi-indices of dimension `dim` with |gamma| == order, in lexicographic order.
std::vector<MultiIndex> multi_indices_of_order(int dim, int order);

/// Trapezoid weights on the time grid.
std::vector<double> quadrature_weights(const TimeGrid& grid);
/// Trapezoid weights on one axis of the space grid.
std::vector<double> quadrature_weights(const SpaceGrid& grid);
/// Tensor trapezoid weights on the full space grid.
std::vector<double> cell_weights(const SpaceGrid& grid);

/// Central-difference derivative of a nodal field.
///
/// Nodes within |gamma| of the boundary (per axis) get NaN and `valid[j] == false`.
struct FdResult {
    std::vector<double> values;
    std::vector<bool> valid;
};

FdResult fd_derivative(const SpaceGrid& grid, std::span<const double> field, MultiIndex gamma);

}  // namespace bspde
