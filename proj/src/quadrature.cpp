#include "bspde/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "bspde/error.hpp"

namespace bspde {

double Rule::apply(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
}

namespace {

Rule make_gauss_legendre(int n) {
    Rule r;
    r.nodes.resize(static_cast<std::size_t>(n));
    r.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        r.nodes[static_cast<std::size_t>(i)] = -x;
        r.weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

void append_panel(Rule& out, double a, double b, const Rule& base) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < base.size(); ++i) {
        out.nodes.push_back(mid + half * base.nodes[i]);
        out.weights.push_back(half * base.weights[i]);
    }
}

}  // namespace

const Rule& gauss_legendre(int points) {
    if (points < 1 || points > 64) throw Error(ErrorCode::invalid_argument, "Gauss-Legendre order must be in [1, 64]");
    static std::mutex lock;
    static std::map<int, Rule> cache;
    const std::lock_guard guard(lock);
    auto it = cache.find(points);
    if (it == cache.end()) it = cache.emplace(points, make_gauss_legendre(points)).first;
    return it->second;
}

Rule composite_gauss(double a, double b, int panels, int points) {
    const Rule& base = gauss_legendre(points);
    Rule out;
    const double w = (b - a) / panels;
    for (int p = 0; p < panels; ++p) append_panel(out, a + p * w, a + (p + 1) * w, base);
    return out;
}

Rule graded_gauss(double a, double b, int panels, double ratio, int points) {
    const Rule& base = gauss_legendre(points);
    Rule out;
    std::vector<double> edges{b};
    double width = b - a;
    for (int p = 1; p < panels; ++p) {
        width *= ratio;
        edges.push_back(a + width);
    }
    edges.push_back(a);
    for (std::size_t i = edges.size() - 1; i > 0; --i) append_panel(out, edges[i], edges[i - 1], base);
    return out;
}

Rule log_gauss(double a, double b, int panels, int points) {
    if (!(a > 0.0) || !(b > a)) throw Error(ErrorCode::invalid_argument, "log-scale rule needs 0 < a < b");
    Rule u = composite_gauss(std::log(a), std::log(b), panels, points);
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double x = std::exp(u.nodes[i]);
        u.nodes[i] = x;
        u.weights[i] *= x;
    }
    return u;
}

}  // namespace bspde
