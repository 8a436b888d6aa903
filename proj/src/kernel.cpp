#include "bspde/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bspde/quadrature.hpp"

namespace bspde {

DiffusionCoefficient DiffusionCoefficient::constant(const SmallMatrix& a, std::string label) {
    DiffusionCoefficient d;
    d.dim = a.n;
    d.a = [a](double) { return a; };
    const auto [lo, hi] = a.eigen_range();
    d.lambda = lo;
    d.Lambda = hi;
    d.time_constant = true;
    d.label = std::move(label);
    return d;
}

DiffusionCoefficient DiffusionCoefficient::time_dependent(int dim, std::function<SmallMatrix(double)> a,
                                                          double lambda, double Lambda, std::string label) {
    DiffusionCoefficient d;
    d.dim = dim;
    d.a = std::move(a);
    d.lambda = lambda;
    d.Lambda = Lambda;
    d.time_constant = false;
    d.label = std::move(label);
    return d;
}

void DiffusionCoefficient::validate(double horizon, int time_samples, int direction_samples) const {
    if (!(lambda > 0.0) || !(Lambda >= lambda)) {
        throw Error(ErrorCode::assumption_violation,
                    "super-parabolicity requires 0 < lambda <= Lambda (got lambda=" + std::to_string(lambda) +
                        ", Lambda=" + std::to_string(Lambda) + ")");
    }
    const double slack = 1e-12 * Lambda;
    for (int i = 0; i < time_samples; ++i) {
        const double t = time_samples == 1 ? 0.0 : horizon * i / (time_samples - 1);
        const SmallMatrix m = a(t);
        if (m.n != dim) throw Error(ErrorCode::invalid_argument, "diffusion matrix has the wrong dimension");
        if (dim == 2 && std::abs(m(0, 1) - m(1, 0)) > 1e-12 * (1.0 + std::abs(m(0, 1)))) {
            throw Error(ErrorCode::assumption_violation, "diffusion matrix is not symmetric");
        }
        const int dirs = dim == 1 ? 1 : direction_samples;
        for (int j = 0; j < dirs; ++j) {
            const double th = std::numbers::pi * j / dirs;
            const Point xi = dim == 1 ? Point{1.0, 0.0} : Point{std::cos(th), std::sin(th)};
            const double q = m.quadratic(xi);
            if (q < lambda - slack || q > Lambda + slack) {
                std::ostringstream msg;
                msg << "super-parabolicity violated at t=" << t << ": xi.a.xi=" << q << " outside [" << lambda
                    << ", " << Lambda << "]";
                throw Error(ErrorCode::assumption_violation, msg.str());
            }
        }
    }
}

GaussianFrame::GaussianFrame(const SmallMatrix& covariance, double damping) : n_(covariance.n), a_(covariance) {
    const double cond = covariance.condition();
    if (!std::isfinite(cond) || cond > 1e12) {
        throw Error(ErrorCode::ill_conditioned, "kernel covariance is singular or has condition number above 1e12");
    }
    b_ = covariance.inverse();
    scale_ = damping * std::pow(4.0 * std::numbers::pi, -0.5 * n_) / std::sqrt(covariance.det());
}

double GaussianFrame::value(const Point& x) const noexcept { return scale_ * std::exp(-0.25 * b_.quadratic(x)); }

double GaussianFrame::log_value(const Point& x) const noexcept {
    return std::log(scale_) - 0.25 * b_.quadratic(x);
}

double GaussianFrame::derivative(const Point& x, const MultiIndex& gamma) const {
    if (gamma.order() == 0) return value(x);
    return hermite_factor(x, gamma) * value(x);
}

double GaussianFrame::hermite_factor(const Point& x, const MultiIndex& gamma) const {
    const int order = gamma.order();
    if (order > 3) throw Error(ErrorCode::unsupported_order, "kernel derivatives are available for |gamma| <= 3");
    if (order == 0) return 1.0;
    const Point bx = b_.apply(x);
    const Point p{-0.5 * bx[0], -0.5 * bx[1]};
    std::array<int, 3> idx{};
    int k = 0;
    for (int d = 0; d < n_; ++d) {
        for (int c = 0; c < gamma.g[static_cast<std::size_t>(d)]; ++c) idx[static_cast<std::size_t>(k++)] = d;
    }
    const auto P = [&](int i) { return p[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]; };
    const auto B = [&](int i, int j) { return b_(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]); };
    if (order == 1) return P(0);
    if (order == 2) return P(0) * P(1) - 0.5 * B(0, 1);
    return P(0) * P(1) * P(2) - 0.5 * (B(0, 1) * P(2) + B(0, 2) * P(1) + B(1, 2) * P(0));
}

HeatKernel::HeatKernel(DiffusionCoefficient diffusion, double beta) : diffusion_(std::move(diffusion)), beta_(beta) {
    if (!(beta >= 0.0)) throw Error(ErrorCode::invalid_argument, "damping beta must be nonnegative");
    if (!diffusion_.a) throw Error(ErrorCode::invalid_argument, "diffusion coefficient has no evaluator");
}

SmallMatrix HeatKernel::covariance(double t, double s) const {
    if (t > s) throw Error(ErrorCode::invalid_interval, "covariance needs t <= s");
    const int n = diffusion_.dim;
    if (s == t) return SmallMatrix::zero(n);
    if (diffusion_.time_constant) return diffusion_.a(t) * (s - t);
    // Six-point Gauss panels no wider than 1/8.
    const Rule& base = gauss_legendre(6);
    const int panels = std::max(1, static_cast<int>(std::ceil(8.0 * (s - t))));
    const double w = (s - t) / panels;
    SmallMatrix acc = SmallMatrix::zero(n);
    for (int p = 0; p < panels; ++p) {
        const double mid = t + (p + 0.5) * w;
        for (std::size_t i = 0; i < base.size(); ++i) acc += diffusion_.a(mid + 0.5 * w * base.nodes[i]) * (0.5 * w * base.weights[i]);
    }
    return acc;
}

GaussianFrame HeatKernel::frame(double t, double s) const {
    if (!(s > t)) throw Error(ErrorCode::invalid_interval, "kernel needs s > t");
    return GaussianFrame(covariance(t, s), std::exp(-beta_ * (s - t)));
}

double HeatKernel::value(double t, double s, const Point& x) const { return frame(t, s).value(x); }

double HeatKernel::derivative(double t, double s, const Point& x, const MultiIndex& gamma) const {
    if (gamma.order() > 3) throw Error(ErrorCode::unsupported_order, "kernel derivatives are available for |gamma| <= 3");
    return frame(t, s).derivative(x, gamma);
}

SmallMatrix accumulate_covariance(const HeatKernel& kernel, double t, double s) { return kernel.covariance(t, s); }

double eval_kernel(const HeatKernel& kernel, double t, double s, const Point& x) { return kernel.value(t, s, x); }

double eval_kernel_derivative(const HeatKernel& kernel, double t, double s, const Point& x, const MultiIndex& gamma) {
    return kernel.derivative(t, s, x, gamma);
}

}  // namespace bspde
