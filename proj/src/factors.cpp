#include <algorithm>
#include <cmath>
#include <sstream>

#include "bspde/stochastic.hpp"

namespace bspde {

double PathFactor::value(double t, const double* w, int dim) const noexcept {
    if (kind == Kind::monomial) {
        double v = 1.0;
        for (int l = 0; l < dim; ++l) {
            for (int p = 0; p < power[static_cast<std::size_t>(l)]; ++p) v *= w[l];
        }
        return v;
    }
    double e = 0.0;
    double th2 = 0.0;
    for (int l = 0; l < dim; ++l) {
        e += theta[static_cast<std::size_t>(l)] * w[l];
        th2 += theta[static_cast<std::size_t>(l)] * theta[static_cast<std::size_t>(l)];
    }
    return std::exp(e - 0.5 * th2 * t);
}

std::string PathFactor::label() const {
    std::ostringstream s;
    if (kind == Kind::exponential) {
        s << "exp(" << theta[0] << "," << theta[1] << ")";
        return s.str();
    }
    if (degree() == 0) return "1";
    s << "W^(" << power[0] << "," << power[1] << ")";
    return s.str();
}

FactorBasis::FactorBasis(int dim, std::vector<PathFactor> factors) : dim_(dim), factors_(std::move(factors)) {
    if (dim < 1 || dim > kMaxDim) throw Error(ErrorCode::invalid_argument, "Brownian dimension must be 1 or 2");
    if (factors_.empty() || !factors_.front().is_one())
        throw Error(ErrorCode::invalid_argument, "factor basis must start with the constant factor");
}

FactorBasis FactorBasis::closure(int dim, const std::vector<PathFactor>& seeds) {
    std::vector<PathFactor> monos;
    std::vector<PathFactor> exps;
    for (const PathFactor& s : seeds) {
        if (s.kind == PathFactor::Kind::exponential) {
            PathFactor e = s;
            if (dim == 1) e.theta[1] = 0.0;
            if (std::find(exps.begin(), exps.end(), e) == exps.end()) exps.push_back(e);
            continue;
        }
        if (dim == 1 && s.power[1] != 0)
            throw Error(ErrorCode::unsupported_closed_form, "factor uses a second Brownian component in d = 1");
        if (s.degree() > 3) throw Error(ErrorCode::unsupported_closed_form, "monomial factors above degree 3");
        for (int a = 0; a <= s.power[0]; ++a) {
            for (int b = 0; b <= s.power[1]; ++b) {
                const PathFactor m = PathFactor::monomial(a, b);
                if (std::find(monos.begin(), monos.end(), m) == monos.end()) monos.push_back(m);
            }
        }
    }
    if (std::find(monos.begin(), monos.end(), PathFactor::one()) == monos.end()) monos.push_back(PathFactor::one());
    std::sort(monos.begin(), monos.end(), [](const PathFactor& x, const PathFactor& y) {
        if (x.degree() != y.degree()) return x.degree() < y.degree();
        return x.power > y.power;
    });
    monos.insert(monos.end(), exps.begin(), exps.end());
    return FactorBasis(dim, std::move(monos));
}

FactorBasis FactorBasis::monomials(int dim, int degree) {
    std::vector<PathFactor> seeds;
    for (int a = 0; a <= degree; ++a) {
        for (int b = 0; b <= (dim == 2 ? degree - a : 0); ++b) seeds.push_back(PathFactor::monomial(a, b));
    }
    return closure(dim, seeds);
}

int FactorBasis::find(const PathFactor& f) const noexcept {
    PathFactor g = f;
    if (dim_ == 1 && g.kind == PathFactor::Kind::exponential) g.theta[1] = 0.0;
    for (std::size_t i = 0; i < factors_.size(); ++i) {
        if (factors_[i] == g) return static_cast<int>(i);
    }
    return -1;
}

bool FactorBasis::polynomial() const noexcept {
    return std::all_of(factors_.begin(), factors_.end(),
                       [](const PathFactor& f) { return f.kind == PathFactor::Kind::monomial; });
}

void FactorBasis::evaluate(double t, const double* w, double* out) const noexcept {
    for (std::size_t q = 0; q < factors_.size(); ++q) out[q] = factors_[q].value(t, w, dim_);
}

Eigen::MatrixXd FactorBasis::gradient(int l) const {
    const auto F = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(F, F);
    for (Eigen::Index r = 0; r < F; ++r) {
        const PathFactor& f = factors_[static_cast<std::size_t>(r)];
        if (f.kind == PathFactor::Kind::exponential) {
            D(r, r) = f.theta[static_cast<std::size_t>(l)];
            continue;
        }
        const int a = f.power[static_cast<std::size_t>(l)];
        if (a == 0) continue;
        PathFactor lower = f;
        lower.power[static_cast<std::size_t>(l)] -= 1;
        D(find(lower), r) = a;
    }
    return D;
}

namespace {

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Raw moments E[X^j], X ~ N(mu, v), j = 0..3.
std::array<double, 4> raw_moments(double mu, double v) {
    std::array<double, 4> m{1.0, mu, 0.0, 0.0};
    for (int j = 2; j < 4; ++j) m[static_cast<std::size_t>(j)] = mu * m[static_cast<std::size_t>(j - 1)] + (j - 1) * v * m[static_cast<std::size_t>(j - 2)];
    return m;
}

Eigen::MatrixXd closed_map(const FactorBasis& basis, double lag, const DriftVector& sigma) {
    const auto F = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(F, F);
    const int d = basis.dim();
    std::array<std::array<double, 4>, 2> mom{};
    for (int l = 0; l < d; ++l) mom[static_cast<std::size_t>(l)] = raw_moments(sigma[static_cast<std::size_t>(l)] * lag, lag);
    for (Eigen::Index r = 0; r < F; ++r) {
        const PathFactor& f = basis[static_cast<std::size_t>(r)];
        if (f.kind == PathFactor::Kind::exponential) {
            double shift = 0.0;
            for (int l = 0; l < d; ++l) shift += f.theta[static_cast<std::size_t>(l)] * sigma[static_cast<std::size_t>(l)] * lag;
            P(r, r) = std::exp(shift);
            continue;
        }
        for (int b0 = 0; b0 <= f.power[0]; ++b0) {
            for (int b1 = 0; b1 <= f.power[1]; ++b1) {
                double c = binomial(f.power[0], b0) * mom[0][static_cast<std::size_t>(f.power[0] - b0)];
                if (d == 2) c *= binomial(f.power[1], b1) * mom[1][static_cast<std::size_t>(f.power[1] - b1)];
                P(basis.find(PathFactor::monomial(b0, b1)), r) += c;
            }
        }
    }
    return P;
}

}  // namespace

ConditionalMaps ConditionalMaps::closed_form(std::shared_ptr<const FactorBasis> basis, const TimeGrid& grid,
                                             DriftVector sigma) {
    ConditionalMaps c;
    c.basis_ = std::move(basis);
    c.grid_ = grid;
    c.provenance_ = "closed-form";
    c.closed_ = true;
    c.sigma_ = sigma;
    if (c.basis_->dim() == 1) c.sigma_[1] = 0.0;
    for (int k = 0; k < grid.steps(); ++k) c.steps_.push_back(closed_map(*c.basis_, grid.node(k + 1) - grid.node(k), c.sigma_));
    for (int l = 0; l < c.basis_->dim(); ++l) c.gradients_.push_back(c.basis_->gradient(l));
    return c;
}

ConditionalMaps ConditionalMaps::regression(std::shared_ptr<const FactorBasis> basis, const PathEnsemble& paths,
                                            const SigmaFunction& sigma) {
    if (basis->dim() != paths.dim) throw Error(ErrorCode::invalid_argument, "basis and ensemble dimensions differ");
    ConditionalMaps c;
    c.basis_ = std::move(basis);
    c.grid_ = paths.grid;
    c.provenance_ = "regression";
    const auto F = static_cast<Eigen::Index>(c.basis_->size());
    const Eigen::Index M = paths.paths;
    const int d = paths.dim;
    const double dt = paths.grid.dt();
    std::vector<double> buf(static_cast<std::size_t>(F));
    Eigen::MatrixXd now(M, F);
    Eigen::MatrixXd next(M, F);
    for (Eigen::Index m = 0; m < M; ++m) {
        c.basis_->evaluate(0.0, paths.w(static_cast<int>(m), 0), buf.data());
        for (Eigen::Index q = 0; q < F; ++q) now(m, q) = buf[static_cast<std::size_t>(q)];
    }
    for (int k = 0; k < paths.grid.steps(); ++k) {
        const double t1 = paths.grid.node(k + 1);
        for (Eigen::Index m = 0; m < M; ++m) {
            const DriftVector s = sigma(paths.grid.node(k), paths.w(static_cast<int>(m), k));
            double log_ratio = 0.0;
            for (int l = 0; l < d; ++l) {
                log_ratio += s[static_cast<std::size_t>(l)] * paths.dw(static_cast<int>(m), k, l) -
                             0.5 * s[static_cast<std::size_t>(l)] * s[static_cast<std::size_t>(l)] * dt;
            }
            const double ratio = std::exp(log_ratio);
            c.basis_->evaluate(t1, paths.w(static_cast<int>(m), k + 1), buf.data());
            for (Eigen::Index q = 0; q < F; ++q) next(m, q) = buf[static_cast<std::size_t>(q)] * ratio;
        }
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(F, F);
        if (k == 0) {
            // All paths start at W = 0: only the value of the fitted function there is identifiable.
            const Eigen::RowVectorXd mean = next.colwise().mean();
            const Eigen::RowVectorXd base = now.row(0);
            P.row(0) = mean / base(0);
        } else {
            Eigen::VectorXd scale = (now.array().square().colwise().mean()).sqrt().transpose();
            for (Eigen::Index q = 0; q < F; ++q) scale(q) = scale(q) > 0.0 ? scale(q) : 1.0;
            const Eigen::MatrixXd design = now * scale.cwiseInverse().asDiagonal();
            const RegressionFit fit = least_squares(design, next, 1e-12);
            P = scale.cwiseInverse().asDiagonal() * fit.coef;
            c.condition_ = std::max(c.condition_, fit.condition);
        }
        c.steps_.push_back(P);
        for (Eigen::Index m = 0; m < M; ++m) {
            c.basis_->evaluate(t1, paths.w(static_cast<int>(m), k + 1), buf.data());
            for (Eigen::Index q = 0; q < F; ++q) now(m, q) = buf[static_cast<std::size_t>(q)];
        }
    }
    for (int l = 0; l < d; ++l) c.gradients_.push_back(c.basis_->gradient(l));
    return c;
}

Eigen::MatrixXd ConditionalMaps::map(int k, int m) const {
    if (k > m) throw Error(ErrorCode::invalid_interval, "conditional map needs k <= m");
    if (closed_) return closed_map(*basis_, grid_.node(m) - grid_.node(k), sigma_);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(basis_->size()),
                                                  static_cast<Eigen::Index>(basis_->size()));
    for (int i = m - 1; i >= k; --i) P = steps_[static_cast<std::size_t>(i)] * P;
    return P;
}

Eigen::MatrixXd ConditionalMaps::gradient_map(int l, int k, int m) const {
    return gradients_.at(static_cast<std::size_t>(l)) * map(k, m);
}

SpaceFunction SpaceFunction::constant(double c) {
    return {[c](double, const Point&, const MultiIndex& g) { return g.order() == 0 ? c : 0.0; },
            "constant"};
}

SpaceFunction SpaceFunction::sine(Point wave, double phase, double rate) {
    return {[wave, phase, rate](double t, const Point& x, const MultiIndex& g) {
                double arg = phase + wave[0] * x[0] + wave[1] * x[1];
                double factor = std::pow(wave[0], g.g[0]) * std::pow(wave[1], g.g[1]);
                arg += 0.5 * M_PI * g.order();
                return factor * std::sin(arg) * std::exp(rate * t);
            },
            "sine"};
}

SpaceFunction SpaceFunction::monomial(int p0, int p1) {
    return {[p0, p1](double, const Point& x, const MultiIndex& g) {
                double v = 1.0;
                const int p[2] = {p0, p1};
                for (int i = 0; i < 2; ++i) {
                    const int k = g.g[static_cast<std::size_t>(i)];
                    if (k > p[i]) return 0.0;
                    for (int j = 0; j < k; ++j) v *= p[i] - j;
                    v *= std::pow(x[static_cast<std::size_t>(i)], p[i] - k);
                }
                return v;
            },
            "monomial"};
}

SpaceFunction SpaceFunction::sum(SpaceFunction a, SpaceFunction b) {
    std::string label = a.label + "+" + b.label;
    return {[a = std::move(a), b = std::move(b)](double t, const Point& x, const MultiIndex& g) {
                return a.eval(t, x, g) + b.eval(t, x, g);
            },
            label};
}

bool DataFunctional::deterministic() const noexcept {
    return std::all_of(terms.begin(), terms.end(), [](const DataTerm& t) { return t.path.is_one(); });
}

std::vector<PathFactor> DataFunctional::factors() const {
    std::vector<PathFactor> out;
    for (const DataTerm& t : terms) out.push_back(t.path);
    return out;
}

DataFunctional DataFunctional::scaled(double kappa) const {
    DataFunctional d = *this;
    for (DataTerm& t : d.terms) t.scale *= kappa;
    return d;
}

double DataFunctional::value(double t, const Point& x, const double* w, int dim) const {
    double v = 0.0;
    for (const DataTerm& term : terms) v += term.scale * term.space(t, x) * term.path.value(t, w, dim);
    return v;
}

DataFunctional DataFunctional::deterministic_term(SpaceFunction h, double holder_class) {
    return single(std::move(h), PathFactor::one(), holder_class);
}

DataFunctional DataFunctional::single(SpaceFunction h, PathFactor p, double holder_class) {
    DataFunctional d;
    d.terms.push_back({std::move(h), p, 1.0});
    d.holder_class = holder_class;
    return d;
}

DataFunctional operator+(DataFunctional a, const DataFunctional& b) {
    a.terms.insert(a.terms.end(), b.terms.begin(), b.terms.end());
    a.holder_class = std::min(a.holder_class, b.holder_class);
    return a;
}

double SeparableSeries::value(int k, std::size_t j, const double* factor_values) const noexcept {
    double v = 0.0;
    for (std::size_t q = 0; q < factors(); ++q) v += slice(k, q)[j] * factor_values[q];
    return v;
}

SeparableSeries& SeparableSeries::operator+=(const SeparableSeries& o) {
    if (o.coef.size() != coef.size()) throw Error(ErrorCode::invalid_argument, "series layouts differ");
    for (std::size_t i = 0; i < coef.size(); ++i) coef[i] += o.coef[i];
    return *this;
}

SeparableSeries& SeparableSeries::operator*=(double s) {
    for (double& c : coef) c *= s;
    return *this;
}

SeparableSeries project_data(const DataFunctional& data, std::shared_ptr<const FactorBasis> basis,
                             const TimeGrid& time, const SpaceGrid& space, const MultiIndex& gamma) {
    SeparableSeries s(basis, time, space.size());
    MultiIndex g = gamma;
    g.dim = space.dim();
    for (const DataTerm& term : data.terms) {
        const int q = basis->find(term.path);
        if (q < 0) throw Error(ErrorCode::unsupported_closed_form, "path factor " + term.path.label() + " not in basis");
        for (int k = 0; k <= time.steps(); ++k) {
            double* out = s.slice(k, static_cast<std::size_t>(q));
            const double t = time.node(k);
            for (std::size_t j = 0; j < space.size(); ++j) out[j] += term.scale * term.space.eval(t, space.point(j), g);
        }
    }
    return s;
}

}  // namespace bspde
