#include "bspde/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bspde {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::invalid_interval: return "invalid-interval";
        case ErrorCode::ill_conditioned: return "ill-conditioned";
        case ErrorCode::unsupported_order: return "unsupported-order";
        case ErrorCode::undefined_seminorm: return "undefined-seminorm";
        case ErrorCode::assumption_violation: return "assumption-violation";
        case ErrorCode::unsupported_closed_form: return "unsupported-closed-form";
        case ErrorCode::singular_regression: return "singular-regression";
        case ErrorCode::invalid_route: return "invalid-route";
        case ErrorCode::invalid_input: return "invalid-input";
        case ErrorCode::invalid_shift: return "invalid-shift";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::io_error: return "io-error";
    }
    return "unknown";
}

std::vector<double> TimeGrid::nodes() const {
    std::vector<double> out(size());
    for (int k = 0; k <= steps_; ++k) out[static_cast<std::size_t>(k)] = node(k);
    return out;
}

int TimeGrid::index_of(double t) const {
    const double pos = t / dt();
    const double rounded = std::round(pos);
    if (std::abs(pos - rounded) > 1e-9 * std::max(1.0, std::abs(pos)) || rounded < 0 ||
        rounded > steps_) {
        throw Error(ErrorCode::invalid_shift,
                    "time " + std::to_string(t) + " is not a node of the time grid");
    }
    return static_cast<int>(rounded);
}

TimeGrid build_time_grid(double horizon, int steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw Error(ErrorCode::invalid_argument, "time horizon must be positive");
    }
    if (steps < 1) throw Error(ErrorCode::invalid_argument, "time grid needs at least one step");
    TimeGrid grid;
    grid.horizon_ = horizon;
    grid.steps_ = steps;
    return grid;
}

Point SpaceGrid::point(std::size_t flat) const noexcept {
    const auto idx = unflatten(flat);
    Point p{0.0, 0.0};
    for (int d = 0; d < dim_; ++d) p[static_cast<std::size_t>(d)] = axis_node(idx[static_cast<std::size_t>(d)]);
    return p;
}

std::array<int, kMaxDim> SpaceGrid::unflatten(std::size_t flat) const noexcept {
    if (dim_ == 1) return {static_cast<int>(flat), 0};
    const auto j = static_cast<std::size_t>(per_axis_);
    return {static_cast<int>(flat / j), static_cast<int>(flat % j)};
}

std::size_t SpaceGrid::flatten(std::array<int, kMaxDim> idx) const noexcept {
    if (dim_ == 1) return static_cast<std::size_t>(idx[0]);
    return static_cast<std::size_t>(idx[0]) * static_cast<std::size_t>(per_axis_) +
           static_cast<std::size_t>(idx[1]);
}

bool SpaceGrid::same_layout(const SpaceGrid& other) const noexcept {
    return dim_ == other.dim_ && per_axis_ == other.per_axis_ &&
           std::abs(radius_ - other.radius_) <= 1e-12 * radius_;
}

SpaceGrid build_space_grid(int dim, double radius, int per_axis, double interior_radius) {
    if (dim < 1 || dim > kMaxDim) throw Error(ErrorCode::invalid_argument, "space dimension must be 1 or 2");
    if (!(radius > 0.0)) throw Error(ErrorCode::invalid_argument, "box radius must be positive");
    if (per_axis < 2) throw Error(ErrorCode::invalid_argument, "space grid needs at least two nodes per axis");
    if (per_axis % 2 == 0) {
        throw Error(ErrorCode::invalid_argument, "node count per axis must be odd so the origin is a node");
    }
    SpaceGrid grid;
    grid.dim_ = dim;
    grid.radius_ = radius;
    grid.per_axis_ = per_axis;
    grid.spacing_ = 2.0 * radius / (per_axis - 1);
    grid.interior_radius_ = interior_radius > 0.0 ? std::min(interior_radius, radius) : radius;
    grid.size_ = dim == 1 ? static_cast<std::size_t>(per_axis)
                          : static_cast<std::size_t>(per_axis) * static_cast<std::size_t>(per_axis);
    const double cut = grid.interior_radius_ + 1e-9 * grid.spacing_;
    for (std::size_t j = 0; j < grid.size_; ++j) {
        const Point p = grid.point(j);
        double m = 0.0;
        for (int d = 0; d < dim; ++d) m = std::max(m, std::abs(p[static_cast<std::size_t>(d)]));
        if (m <= cut) grid.interior_.push_back(j);
    }
    return grid;
}

double truncation_radius(double interior_radius, double ellipticity_upper, double horizon) {
    return interior_radius + 6.0 * std::sqrt(2.0 * ellipticity_upper * horizon);
}

int MultiIndex::order() const noexcept {
    int s = 0;
    for (int d = 0; d < dim; ++d) s += g[static_cast<std::size_t>(d)];
    return s;
}

MultiIndex MultiIndex::unit(int dim, int axis) {
    MultiIndex m = zero(dim);
    m.g[static_cast<std::size_t>(axis)] = 1;
    return m;
}

MultiIndex MultiIndex::pair(int dim, int i, int j) {
    MultiIndex m = zero(dim);
    m.g[static_cast<std::size_t>(i)] += 1;
    m.g[static_cast<std::size_t>(j)] += 1;
    return m;
}

std::vector<MultiIndex> multi_indices_of_order(int dim, int order) {
    std::vector<MultiIndex> out;
    if (dim == 1) {
        out.push_back(MultiIndex{1, {order, 0}});
        return out;
    }
    for (int a = order; a >= 0; --a) out.push_back(MultiIndex{2, {a, order - a}});
    return out;
}

namespace {

std::vector<double> trapezoid(std::size_t count, double step) {
    std::vector<double> w(count, step);
    w.front() *= 0.5;
    w.back() *= 0.5;
    return w;
}

}  // namespace

std::vector<double> quadrature_weights(const TimeGrid& grid) { return trapezoid(grid.size(), grid.dt()); }

std::vector<double> quadrature_weights(const SpaceGrid& grid) {
    return trapezoid(static_cast<std::size_t>(grid.per_axis()), grid.spacing());
}

std::vector<double> cell_weights(const SpaceGrid& grid) {
    const auto axis = quadrature_weights(grid);
    std::vector<double> w(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto idx = grid.unflatten(j);
        double v = axis[static_cast<std::size_t>(idx[0])];
        if (grid.dim() == 2) v *= axis[static_cast<std::size_t>(idx[1])];
        w[j] = v;
    }
    return w;
}

FdResult fd_derivative(const SpaceGrid& grid, std::span<const double> field, MultiIndex gamma) {
    const int order = gamma.order();
    if (order > 2) throw Error(ErrorCode::unsupported_order, "finite differences support |gamma| <= 2");
    if (field.size() != grid.size()) throw Error(ErrorCode::invalid_argument, "field size does not match grid");

    FdResult out{std::vector<double>(field.begin(), field.end()), std::vector<bool>(grid.size(), true)};
    if (order == 0) return out;

    const int J = grid.per_axis();
    const double h = grid.spacing();
    const auto at = [&](std::array<int, kMaxDim> idx) { return field[grid.flatten(idx)]; };

    for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto idx = grid.unflatten(j);
        bool inside = true;
        for (int d = 0; d < grid.dim(); ++d) {
            if (gamma.g[static_cast<std::size_t>(d)] == 0) continue;
            const int i = idx[static_cast<std::size_t>(d)];
            if (i < order || i > J - 1 - order) inside = false;
        }
        if (!inside) {
            out.values[j] = std::numeric_limits<double>::quiet_NaN();
            out.valid[j] = false;
            continue;
        }
        auto shifted = [&](int axis, int delta) {
            auto s = idx;
            s[static_cast<std::size_t>(axis)] += delta;
            return s;
        };
        double value = 0.0;
        if (order == 1) {
            const int a = gamma.g[0] == 1 ? 0 : 1;
            value = (at(shifted(a, 1)) - at(shifted(a, -1))) / (2.0 * h);
        } else if (gamma.g[0] == 2 || gamma.g[1] == 2) {
            const int a = gamma.g[0] == 2 ? 0 : 1;
            value = (at(shifted(a, 1)) - 2.0 * field[j] + at(shifted(a, -1))) / (h * h);
        } else {
            auto corner = [&](int d0, int d1) {
                auto s = idx;
                s[0] += d0;
                s[1] += d1;
                return at(s);
            };
            value = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4.0 * h * h);
        }
        out.values[j] = value;
    }
    return out;
}

}  // namespace bspde
