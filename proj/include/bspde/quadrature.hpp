#pragma once

#include <functional>
#include <vector>

namespace bspde {

/// Nodes and weights of a one-dimensional quadrature rule.
struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;

    [[nodiscard]] std::size_t size() const noexcept { return nodes.size(); }
    [[nodiscard]] double apply(const std::function<double(double)>& f) const;
};

/// Gauss-Legendre rule with `points` nodes on [-1, 1].
const Rule& gauss_legendre(int points);

/// Composite Gauss-Legendre on [a, b] with `panels` equal panels.
Rule composite_gauss(double a, double b, int panels, int points = 8);

/// Composite Gauss-Legendre on [a, b] with panel edges graded geometrically toward a.
/// The first panel is [a, a + (b - a) * ratio^(panels - 1)] scaled, each next one `1/ratio` wider.
Rule graded_gauss(double a, double b, int panels, double ratio = 0.5, int points = 8);

/// Composite Gauss-Legendre in log scale on [a, b] with 0 < a < b.
Rule log_gauss(double a, double b, int panels, int points = 8);

}  // namespace bspde
