#pragma once

#include <array>
#include <cmath>

#include "bspde/grid.hpp"

namespace bspde {

/// Dense n x n matrix with n <= 2, stored row-major in a fixed 2x2 block.
struct SmallMatrix {
    int n = 1;
    std::array<double, 4> m{0.0, 0.0, 0.0, 0.0};

    [[nodiscard]] double operator()(int i, int j) const noexcept { return m[static_cast<std::size_t>(2 * i + j)]; }
    double& operator()(int i, int j) noexcept { return m[static_cast<std::size_t>(2 * i + j)]; }

    static SmallMatrix zero(int n) { return SmallMatrix{n, {0.0, 0.0, 0.0, 0.0}}; }
    static SmallMatrix identity(int n) {
        SmallMatrix a = zero(n);
        for (int i = 0; i < n; ++i) a(i, i) = 1.0;
        return a;
    }
    static SmallMatrix diagonal(double d0, double d1) { return SmallMatrix{2, {d0, 0.0, 0.0, d1}}; }

    [[nodiscard]] double det() const noexcept { return n == 1 ? m[0] : m[0] * m[3] - m[1] * m[2]; }
    [[nodiscard]] double trace() const noexcept { return n == 1 ? m[0] : m[0] + m[3]; }

    [[nodiscard]] SmallMatrix inverse() const noexcept {
        SmallMatrix r = zero(n);
        if (n == 1) {
            r.m[0] = 1.0 / m[0];
            return r;
        }
        const double d = det();
        r.m = {m[3] / d, -m[1] / d, -m[2] / d, m[0] / d};
        return r;
    }

    /// Extreme eigenvalues of the symmetric part.
    [[nodiscard]] std::array<double, 2> eigen_range() const noexcept {
        if (n == 1) return {m[0], m[0]};
        const double a = m[0];
        const double d = m[3];
        const double b = 0.5 * (m[1] + m[2]);
        const double mid = 0.5 * (a + d);
        const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
        return {mid - rad, mid + rad};
    }

    /// Spectral condition number of a symmetric positive matrix (infinite if not positive).
    [[nodiscard]] double condition() const noexcept {
        const auto [lo, hi] = eigen_range();
        if (!(lo > 0.0)) return INFINITY;
        return hi / lo;
    }

    [[nodiscard]] Point apply(const Point& x) const noexcept {
        if (n == 1) return {m[0] * x[0], 0.0};
        return {m[0] * x[0] + m[1] * x[1], m[2] * x[0] + m[3] * x[1]};
    }

    [[nodiscard]] double quadratic(const Point& x) const noexcept {
        const Point y = apply(x);
        return n == 1 ? x[0] * y[0] : x[0] * y[0] + x[1] * y[1];
    }

    SmallMatrix& operator+=(const SmallMatrix& o) noexcept {
        for (std::size_t i = 0; i < 4; ++i) m[i] += o.m[i];
        return *this;
    }
    SmallMatrix& operator*=(double s) noexcept {
        for (double& v : m) v *= s;
        return *this;
    }
    friend SmallMatrix operator+(SmallMatrix a, const SmallMatrix& b) noexcept { return a += b; }
    friend SmallMatrix operator-(SmallMatrix a, const SmallMatrix& b) noexcept {
        for (std::size_t i = 0; i < 4; ++i) a.m[i] -= b.m[i];
        return a;
    }
    friend SmallMatrix operator*(SmallMatrix a, double s) noexcept { return a *= s; }
    friend SmallMatrix operator*(double s, SmallMatrix a) noexcept { return a *= s; }
};

inline double norm(const Point& x, int n) noexcept {
    return n == 1 ? std::abs(x[0]) : std::hypot(x[0], x[1]);
}

}  // namespace bspde
