#include "bspde/holder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "bspde/linalg.hpp"

namespace bspde {

std::string_view to_string(NormFamily family) noexcept {
    switch (family) {
        case NormFamily::l2: return "L2";
        case NormFamily::s2: return "S2";
        case NormFamily::linf: return "Linf";
        case NormFamily::l2_terminal: return "L2_terminal";
    }
    return "?";
}

void FactorSamples::build_gram() {
    gram.clear();
    const auto F = static_cast<Eigen::Index>(factors);
    for (int k = 0; k <= time.steps(); ++k) {
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(row(k, 0), paths, F);
        gram.push_back(S.transpose() * S / static_cast<double>(paths));
    }
}

std::shared_ptr<const FactorSamples> FactorSamples::from_ensemble(const FactorBasis& basis, const PathEnsemble& paths) {
    auto s = std::make_shared<FactorSamples>();
    s->paths = paths.paths;
    s->factors = basis.size();
    s->time = paths.grid;
    s->values.resize(paths.grid.size() * static_cast<std::size_t>(paths.paths) * basis.size());
    for (int k = 0; k <= paths.grid.steps(); ++k) {
        for (int m = 0; m < paths.paths; ++m) {
            basis.evaluate(paths.grid.node(k), paths.w(m, k),
                           s->values.data() + (static_cast<std::size_t>(k) * paths.paths + m) * basis.size());
        }
    }
    s->build_gram();
    return s;
}

std::shared_ptr<const FactorSamples> FactorSamples::deterministic(const TimeGrid& time) {
    auto s = std::make_shared<FactorSamples>();
    s->time = time;
    s->values.assign(time.size(), 1.0);
    s->build_gram();
    return s;
}

std::shared_ptr<const FactorSamples> FactorSamples::shifted_pair(const FactorSamples& base, int shift) {
    auto s = std::make_shared<FactorSamples>();
    s->paths = base.paths;
    s->factors = 2 * base.factors;
    s->time = base.time;
    s->values.assign(base.time.size() * static_cast<std::size_t>(base.paths) * s->factors, 0.0);
    for (int k = shift; k <= base.time.steps(); ++k) {
        for (int m = 0; m < base.paths; ++m) {
            double* out = s->values.data() + (static_cast<std::size_t>(k) * base.paths + m) * s->factors;
            std::copy_n(base.row(k, m), base.factors, out);
            std::copy_n(base.row(k - shift, m), base.factors, out + base.factors);
        }
    }
    s->build_gram();
    return s;
}

FieldSample::FieldSample(NormFamily family, SpaceGrid space, std::shared_ptr<const FactorSamples> samples, int components)
    : first_time(0),
      last_time(samples->time.steps()),
      points(space.interior()),
      family_(family),
      space_(std::move(space)),
      samples_(std::move(samples)),
      components_(components) {
    if (components < 1) throw Error(ErrorCode::invalid_argument, "field needs at least one component");
}

FieldSample FieldSample::from_function(NormFamily family, const SpaceGrid& space, const TimeGrid& time,
                                       const std::function<double(double, const Point&, const MultiIndex&)>& f,
                                       int max_order) {
    FieldSample s(family, space, FactorSamples::deterministic(time));
    for (int order = 0; order <= max_order; ++order) {
        for (const MultiIndex& g : multi_indices_of_order(space.dim(), order)) {
            std::vector<double> c(time.size() * space.size());
            for (int k = 0; k <= time.steps(); ++k) {
                for (std::size_t j = 0; j < space.size(); ++j) c[static_cast<std::size_t>(k) * space.size() + j] = f(time.node(k), space.point(j), g);
            }
            s.set(g, 0, std::move(c));
        }
    }
    return s;
}

void FieldSample::set(const MultiIndex& gamma, int component, std::vector<double> coef) {
    if (component < 0 || component >= components_) throw Error(ErrorCode::invalid_argument, "component out of range");
    if (coef.size() != samples_->time.size() * samples_->factors * space_.size())
        throw Error(ErrorCode::invalid_argument, "coefficient array has the wrong size");
    auto& slot = cache_[gamma];
    slot.resize(static_cast<std::size_t>(components_));
    slot[static_cast<std::size_t>(component)] = std::move(coef);
}

bool FieldSample::has(const MultiIndex& gamma) const {
    const auto it = cache_.find(gamma);
    if (it == cache_.end()) return false;
    return std::all_of(it->second.begin(), it->second.end(), [](const auto& v) { return !v.empty(); });
}

int FieldSample::max_order() const {
    int best = -1;
    for (int order = 0; order <= 2; ++order) {
        for (const MultiIndex& g : multi_indices_of_order(space_.dim(), order)) {
            if (!has(g)) return best;
        }
        best = order;
    }
    return best;
}

const std::vector<double>& FieldSample::coef(const MultiIndex& gamma, int component) const {
    const auto it = cache_.find(gamma);
    if (it == cache_.end() || it->second[static_cast<std::size_t>(component)].empty())
        throw Error(ErrorCode::invalid_input, "derivative cache missing for requested order");
    return it->second[static_cast<std::size_t>(component)];
}

void FieldSample::fill_by_differences(int order) {
    const MultiIndex zero = MultiIndex::zero(space_.dim());
    const std::size_t J = space_.size();
    const std::size_t slices = samples_->time.size() * samples_->factors;
    bool filled = false;
    for (int o = 1; o <= order; ++o) {
        for (const MultiIndex& g : multi_indices_of_order(space_.dim(), o)) {
            if (has(g)) continue;
            for (int c = 0; c < components_; ++c) {
                const std::vector<double>& base = coef(zero, c);
                std::vector<double> out(base.size());
                for (std::size_t s = 0; s < slices; ++s) {
                    const FdResult d = fd_derivative(space_, std::span<const double>(base.data() + s * J, J), g);
                    std::copy(d.values.begin(), d.values.end(), out.begin() + static_cast<std::ptrdiff_t>(s * J));
                }
                set(g, c, std::move(out));
            }
            filled = true;
        }
    }
    if (filled) derivative_source = derivative_source == "analytic" ? "finite-difference" : derivative_source;
}

FieldSample FieldSample::with_family(NormFamily family) const {
    FieldSample s = *this;
    s.family_ = family;
    return s;
}

FieldSample FieldSample::scaled(double kappa) const {
    FieldSample s = *this;
    for (auto& [g, comps] : s.cache_) {
        for (auto& v : comps) {
            for (double& x : v) x *= kappa;
        }
    }
    return s;
}

FieldSample FieldSample::plus(const FieldSample& other) const {
    if (other.samples_ != samples_ || !other.space_.same_layout(space_) || other.components_ != components_)
        throw Error(ErrorCode::invalid_argument, "fields live on different samples");
    FieldSample s = *this;
    for (auto& [g, comps] : s.cache_) {
        if (!other.has(g)) continue;
        for (int c = 0; c < components_; ++c) {
            const auto& o = other.coef(g, c);
            auto& v = comps[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += o[i];
        }
    }
    return s;
}

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

/// Evaluates family norms of D^gamma field at a point or of a point difference.
class NormEvaluator {
public:
    NormEvaluator(const FieldSample& field, const MultiIndex& gamma, NormFamily family, int path_limit)
        : field_(field), family_(family) {
        const FactorSamples& s = field.samples();
        F_ = s.factors;
        J_ = field.space().size();
        for (int c = 0; c < field.components(); ++c) arrays_.push_back(&field.coef(gamma, c));
        k0_ = field.first_time;
        k1_ = field.last_time;
        if (family == NormFamily::l2_terminal) k0_ = k1_;
        paths_ = std::min(s.paths, path_limit);
        weights_.assign(static_cast<std::size_t>(k1_ - k0_ + 1), 0.0);
        if (k1_ > k0_) {
            const double dt = s.time.dt();
            for (int k = k0_; k <= k1_; ++k) weights_[static_cast<std::size_t>(k - k0_)] = (k == k0_ || k == k1_) ? 0.5 * dt : dt;
        } else {
            weights_[0] = 1.0;
        }
        buf_.resize(static_cast<std::size_t>(k1_ - k0_ + 1) * arrays_.size() * F_);
    }

    /// Squared norm (L2 / terminal) or the squared path-mean of the sup (S2); NaN if any entry is not finite.
    double squared(std::size_t x, std::size_t y) {
        gather(x, y);
        if (!finite_) return NAN;
        const FactorSamples& s = field_.samples();
        const std::size_t C = arrays_.size();
        switch (family_) {
            case NormFamily::l2:
            case NormFamily::l2_terminal: {
                double total = 0.0;
                for (int k = k0_; k <= k1_; ++k) {
                    const Eigen::MatrixXd& G = s.gram[static_cast<std::size_t>(k)];
                    double at_k = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* d = slot(k, c);
                        for (std::size_t q = 0; q < F_; ++q) {
                            if (d[q] == 0.0) continue;
                            for (std::size_t r = 0; r < F_; ++r) at_k += d[q] * G(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(r)) * d[r];
                        }
                    }
                    total += weights_[static_cast<std::size_t>(k - k0_)] * at_k;
                }
                return std::max(total, 0.0);
            }
            case NormFamily::s2: {
                double total = 0.0;
                for (int m = 0; m < paths_; ++m) total += path_sup(m);
                return total / paths_;
            }
            case NormFamily::linf: {
                double best = 0.0;
                for (int m = 0; m < paths_; ++m) best = std::max(best, path_sup(m));
                return best;
            }
        }
        return NAN;
    }

    /// Per-path contributions at a point (used for standard errors).
    std::vector<double> per_path(std::size_t x) {
        gather(x, kNone);
        const FactorSamples& s = field_.samples();
        std::vector<double> out(static_cast<std::size_t>(s.paths));
        for (int m = 0; m < s.paths; ++m) {
            if (family_ == NormFamily::s2) {
                out[static_cast<std::size_t>(m)] = path_sup(m);
                continue;
            }
            double total = 0.0;
            for (int k = k0_; k <= k1_; ++k) total += weights_[static_cast<std::size_t>(k - k0_)] * at(m, k);
            out[static_cast<std::size_t>(m)] = total;
        }
        return out;
    }

private:
    const double* slot(int k, std::size_t c) const { return buf_.data() + (static_cast<std::size_t>(k - k0_) * arrays_.size() + c) * F_; }

    void gather(std::size_t x, std::size_t y) {
        finite_ = true;
        for (int k = k0_; k <= k1_; ++k) {
            for (std::size_t c = 0; c < arrays_.size(); ++c) {
                double* d = buf_.data() + (static_cast<std::size_t>(k - k0_) * arrays_.size() + c) * F_;
                const double* a = arrays_[c]->data() + static_cast<std::size_t>(k) * F_ * J_;
                for (std::size_t q = 0; q < F_; ++q) {
                    double v = a[q * J_ + x];
                    if (y != kNone) v -= a[q * J_ + y];
                    d[q] = v;
                    finite_ = finite_ && std::isfinite(v);
                }
            }
        }
    }

    double at(int m, int k) const {
        const double* b = field_.samples().row(k, m);
        double sq = 0.0;
        for (std::size_t c = 0; c < arrays_.size(); ++c) {
            const double* d = slot(k, c);
            double v = 0.0;
            for (std::size_t q = 0; q < F_; ++q) v += d[q] * b[q];
            sq += v * v;
        }
        return sq;
    }

    double path_sup(int m) const {
        double best = 0.0;
        for (int k = k0_; k <= k1_; ++k) best = std::max(best, at(m, k));
        return best;
    }

    const FieldSample& field_;
    NormFamily family_;
    std::size_t F_ = 1;
    std::size_t J_ = 1;
    std::vector<const std::vector<double>*> arrays_;
    int k0_ = 0;
    int k1_ = 0;
    int paths_ = 1;
    std::vector<double> weights_;
    std::vector<double> buf_;
    bool finite_ = true;
};

void require_family(const FieldSample& field, NormFamily family) {
    if (field.family() != family)
        throw Error(ErrorCode::invalid_argument, "requested family " + std::string(to_string(family)) +
                                                     " does not match the field tag " + std::string(to_string(field.family())));
}

double distance(const Point& a, const Point& b, int n) {
    Point d{a[0] - b[0], a[1] - b[1]};
    return norm(d, n);
}

/// Exhaustive pairs up to 1200 points; otherwise all pairs within 8h plus 1e5 seeded random far pairs.
std::vector<std::pair<std::size_t, std::size_t>> pair_set(const FieldSample& field) {
    const auto& pts = field.points;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t P = pts.size();
    if (P <= 1200) {
        out.reserve(P * (P - 1) / 2);
        for (std::size_t a = 0; a < P; ++a) {
            for (std::size_t b = a + 1; b < P; ++b) out.emplace_back(pts[a], pts[b]);
        }
        return out;
    }
    const SpaceGrid& g = field.space();
    const double near = 8.0 * g.spacing() * (1.0 + 1e-12);
    for (std::size_t a = 0; a < P; ++a) {
        for (std::size_t b = a + 1; b < P; ++b) {
            if (distance(g.point(pts[a]), g.point(pts[b]), g.dim()) <= near) out.emplace_back(pts[a], pts[b]);
        }
    }
    std::mt19937_64 rng(0x5eed);
    std::uniform_int_distribution<std::size_t> pick(0, P - 1);
    for (int i = 0; i < 100000; ++i) {
        const std::size_t a = pick(rng);
        const std::size_t b = pick(rng);
        if (a != b) out.emplace_back(pts[a], pts[b]);
    }
    return out;
}

}  // namespace

double estimate_seminorm(const FieldSample& field, int k, NormFamily family) {
    require_family(field, family);
    if (k < 0 || k > 2) throw Error(ErrorCode::unsupported_order, "seminorm order must be 0, 1 or 2");
    double total = 0.0;
    for (const MultiIndex& g : multi_indices_of_order(field.space().dim(), k)) {
        NormEvaluator ev(field, g, family, std::numeric_limits<int>::max());
        double best = 0.0;
        for (std::size_t x : field.points) {
            const double v = ev.squared(x, kNone);
            if (std::isfinite(v)) best = std::max(best, v);
        }
        total += std::sqrt(best);
    }
    return total;
}

double estimate_fractional_seminorm(const FieldSample& field, int m, double alpha, NormFamily family) {
    require_family(field, family);
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
    if (m < 0 || m > 2) throw Error(ErrorCode::unsupported_order, "fractional order must have m <= 2");
    if (field.points.size() < 2) throw Error(ErrorCode::undefined_seminorm, "Hoelder quotient needs at least two points");
    const auto pairs = pair_set(field);
    const SpaceGrid& g = field.space();
    const int limit = family == NormFamily::s2 ? field.s2_fractional_paths : std::numeric_limits<int>::max();
    double total = 0.0;
    for (const MultiIndex& gamma : multi_indices_of_order(g.dim(), m)) {
        NormEvaluator ev(field, gamma, family, limit);
        double best = 0.0;
        for (const auto& [x, y] : pairs) {
            const double v = ev.squared(x, y);
            if (!std::isfinite(v)) continue;
            const double q = std::sqrt(v) / std::pow(distance(g.point(x), g.point(y), g.dim()), alpha);
            best = std::max(best, q);
        }
        total += best;
    }
    return total;
}

nlohmann::json HolderReport::to_json() const {
    return {{"family", std::string(to_string(family))},
            {"m", m},
            {"alpha", alpha},
            {"seminorms", seminorms},
            {"fractional", fractional},
            {"total", total},
            {"grid_meta", grid_meta},
            {"stderr", standard_error}};
}

HolderReport holder_report(const FieldSample& field, int m, double alpha) {
    HolderReport r;
    r.family = field.family();
    r.m = m;
    r.alpha = alpha;
    for (int k = 0; k <= m; ++k) r.seminorms.push_back(estimate_seminorm(field, k, field.family()));
    r.fractional = estimate_fractional_seminorm(field, m, alpha, field.family());
    r.total = r.fractional;
    for (double s : r.seminorms) r.total += s;

    const FactorSamples& s = field.samples();
    if (s.paths > 1 && (field.family() == NormFamily::l2 || field.family() == NormFamily::s2 ||
                        field.family() == NormFamily::l2_terminal)) {
        NormEvaluator ev(field, MultiIndex::zero(field.space().dim()), field.family(), std::numeric_limits<int>::max());
        std::size_t arg = field.points.front();
        double best = -1.0;
        for (std::size_t x : field.points) {
            const double v = ev.squared(x, kNone);
            if (std::isfinite(v) && v > best) {
                best = v;
                arg = x;
            }
        }
        const std::vector<double> per = ev.per_path(arg);
        double mean = 0.0;
        for (double v : per) mean += v;
        mean /= static_cast<double>(per.size());
        double var = 0.0;
        for (double v : per) var += (v - mean) * (v - mean);
        var /= static_cast<double>(per.size() - 1);
        if (mean > 0.0) r.standard_error = std::sqrt(var / static_cast<double>(per.size())) / (2.0 * std::sqrt(mean));
    }
    const SpaceGrid& g = field.space();
    r.grid_meta = {{"dim", g.dim()},
                   {"per_axis", g.per_axis()},
                   {"spacing", g.spacing()},
                   {"points", field.points.size()},
                   {"time_steps", s.time.steps()},
                   {"time_window", {field.first_time, field.last_time}},
                   {"paths", s.paths},
                   {"fractional_paths", field.family() == NormFamily::s2 ? std::min(s.paths, field.s2_fractional_paths) : s.paths},
                   {"pair_rule", field.points.size() <= 1200 ? "exhaustive" : "near-8h-plus-1e5-far"},
                   {"derivative_source", field.derivative_source}};
    return r;
}

int ProductReport::violations(double tolerance) const {
    int n = 0;
    for (const auto& c : checks) {
        if (!(c.slack() >= -tolerance)) ++n;
    }
    return n;
}

nlohmann::json ProductReport::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : checks) j.push_back({{"id", c.id}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"slack", c.slack()}});
    return j;
}

ProductReport check_product_inequalities(const FieldSample& h, const FieldSample& psi, double alpha) {
    require_family(h, NormFamily::linf);
    if (h.samples().factors != 1 || h.samples().paths != 1 || h.components() != 1)
        throw Error(ErrorCode::invalid_argument, "multiplier must be a deterministic scalar field");
    if (!h.space().same_layout(psi.space())) throw Error(ErrorCode::invalid_argument, "grids are not compatible");
    if (h.samples().time.steps() != psi.samples().time.steps())
        throw Error(ErrorCode::invalid_argument, "time grids are not compatible");

    const MultiIndex zero = MultiIndex::zero(psi.space().dim());
    FieldSample prod(psi.family(), psi.space(), psi.samples_ptr(), psi.components());
    prod.points = psi.points;
    prod.first_time = psi.first_time;
    prod.last_time = psi.last_time;
    prod.s2_fractional_paths = psi.s2_fractional_paths;
    const std::size_t F = psi.samples().factors;
    const std::size_t J = psi.space().size();
    const auto& hc = h.coef(zero, 0);
    for (int c = 0; c < psi.components(); ++c) {
        std::vector<double> v = psi.coef(zero, c);
        for (int k = 0; k <= psi.samples().time.steps(); ++k) {
            for (std::size_t q = 0; q < F; ++q) {
                for (std::size_t j = 0; j < J; ++j) v[(static_cast<std::size_t>(k) * F + q) * J + j] *= hc[static_cast<std::size_t>(k) * J + j];
            }
        }
        prod.set(zero, c, std::move(v));
    }
    FieldSample hw = h;
    hw.points = psi.points;
    hw.first_time = psi.first_time;
    hw.last_time = psi.last_time;

    const NormFamily fam = psi.family();
    const double h0 = estimate_seminorm(hw, 0, NormFamily::linf);
    const double ha = estimate_fractional_seminorm(hw, 0, alpha, NormFamily::linf);
    const double p0 = estimate_seminorm(psi, 0, fam);
    const double pa = estimate_fractional_seminorm(psi, 0, alpha, fam);
    const double q0 = estimate_seminorm(prod, 0, fam);
    const double qa = estimate_fractional_seminorm(prod, 0, alpha, fam);

    ProductReport r;
    r.checks.push_back({"product_seminorm", qa, h0 * pa + ha * p0});
    r.checks.push_back({"product_norm_full_psi", q0 + qa, h0 * (p0 + pa) + ha * p0});
    r.checks.push_back({"product_norm_full_h", q0 + qa, h0 * pa + (h0 + ha) * p0});
    return r;
}

int InterpolationReport::violations() const {
    int n = 0;
    for (const auto& e : entries) {
        if (!std::isfinite(e.smallest_C)) ++n;
    }
    return n;
}

nlohmann::json InterpolationReport::to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["flags"] = flags;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        j["entries"].push_back({{"id", e.id},
                                {"epsilon", e.epsilon},
                                {"lhs", e.lhs},
                                {"top", e.top},
                                {"base", e.base},
                                {"smallest_C", std::isfinite(e.smallest_C) ? nlohmann::json(e.smallest_C) : nlohmann::json("inf")}});
    }
    return j;
}

InterpolationReport check_interpolation(const FieldSample& field, double alpha, const std::vector<double>& epsilons,
                                        double envelope_margin) {
    if (field.max_order() < 2) throw Error(ErrorCode::invalid_input, "interpolation check needs second derivatives");
    const NormFamily fam = field.family();
    const double s0 = estimate_seminorm(field, 0, fam);
    const double s1 = estimate_seminorm(field, 1, fam);
    const double s2 = estimate_seminorm(field, 2, fam);
    const double sa = estimate_fractional_seminorm(field, 0, alpha, fam);
    const double s1a = estimate_fractional_seminorm(field, 1, alpha, fam);
    const double s2a = estimate_fractional_seminorm(field, 2, alpha, fam);
    const std::vector<std::pair<std::string, double>> lhs{
        {"second", s2}, {"first_plus_alpha", s1a}, {"first", s1}, {"alpha", sa}};

    InterpolationReport r;
    r.alpha = alpha;
    for (const auto& [id, value] : lhs) {
        std::vector<std::pair<double, double>> curve;
        for (double eps : epsilons) {
            if (!(eps > 0.0 && eps <= 1.0)) throw Error(ErrorCode::invalid_argument, "epsilon must lie in (0, 1]");
            InterpolationEntry e{id, eps, value, s2a, s0, 0.0};
            const double excess = value - eps * s2a;
            if (excess <= 0.0) {
                e.smallest_C = 0.0;
            } else if (s0 > 0.0) {
                e.smallest_C = excess / s0;
            } else {
                e.smallest_C = INFINITY;
            }
            if (e.smallest_C > 0.0 && std::isfinite(e.smallest_C)) curve.emplace_back(eps, e.smallest_C);
            r.entries.push_back(e);
        }
        if (curve.size() >= 2) {
            std::sort(curve.begin(), curve.end());
            const double slope = std::log(curve.back().second / curve.front().second) /
                                 std::log(curve.back().first / curve.front().first);
            if (slope < -(2.0 / alpha) * (1.0 + envelope_margin)) r.flags.push_back("constant-grows-faster-than-envelope:" + id);
        }
    }
    return r;
}

}  // namespace bspde
