#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "bspde/stochastic.hpp"

namespace bspde {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void fill_positions(PathEnsemble& e) {
    const int K = e.grid.steps();
    const auto d = static_cast<std::size_t>(e.dim);
    e.positions.assign(static_cast<std::size_t>(e.paths) * e.grid.size() * d, 0.0);
    for (int m = 0; m < e.paths; ++m) {
        double* w = e.positions.data() + static_cast<std::size_t>(m) * e.grid.size() * d;
        for (int k = 0; k < K; ++k) {
            for (std::size_t l = 0; l < d; ++l) w[(k + 1) * d + l] = w[k * d + l] + e.dw(m, k, static_cast<int>(l));
        }
    }
}

}  // namespace

PathEnsemble sample_paths(int paths, int dim, const TimeGrid& grid, std::uint64_t seed) {
    if (paths < 1) throw Error(ErrorCode::invalid_argument, "path count must be positive");
    if (dim < 1 || dim > kMaxDim) throw Error(ErrorCode::invalid_argument, "Brownian dimension must be 1 or 2");
    PathEnsemble e;
    e.paths = paths;
    e.dim = dim;
    e.grid = grid;
    e.seed = seed;
    const std::size_t per_path = static_cast<std::size_t>(grid.steps()) * dim;
    e.increments.resize(per_path * paths);
    const double sd = std::sqrt(grid.dt());
    for (int m = 0; m < paths; ++m) {
        std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(m))));
        std::normal_distribution<double> normal(0.0, sd);
        double* out = e.increments.data() + per_path * m;
        for (std::size_t i = 0; i < per_path; ++i) out[i] = normal(rng);
    }
    fill_positions(e);
    return e;
}

PathEnsemble subset_paths(const PathEnsemble& ensemble, int paths) {
    if (paths < 1) throw Error(ErrorCode::invalid_argument, "path count must be positive");
    if (paths >= ensemble.paths) return ensemble;
    PathEnsemble e;
    e.paths = paths;
    e.dim = ensemble.dim;
    e.grid = ensemble.grid;
    e.seed = ensemble.seed;
    const std::size_t inc = static_cast<std::size_t>(ensemble.grid.steps()) * ensemble.dim * paths;
    const std::size_t pos = ensemble.grid.size() * ensemble.dim * paths;
    e.increments.assign(ensemble.increments.begin(), ensemble.increments.begin() + static_cast<std::ptrdiff_t>(inc));
    e.positions.assign(ensemble.positions.begin(), ensemble.positions.begin() + static_cast<std::ptrdiff_t>(pos));
    return e;
}

void save_ensemble(const PathEnsemble& e, const std::string& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_error, "cannot open " + file);
    const std::uint64_t header[4] = {static_cast<std::uint64_t>(e.paths), static_cast<std::uint64_t>(e.dim),
                                     static_cast<std::uint64_t>(e.grid.steps()), e.seed};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(e.increments.data()),
              static_cast<std::streamsize>(e.increments.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::io_error, "write failed for " + file);
}

PathEnsemble load_ensemble(const std::string& file, double horizon) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + file);
    std::uint64_t header[4];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) throw Error(ErrorCode::invalid_input, "truncated ensemble header in " + file);
    if (header[0] == 0 || header[1] == 0 || header[1] > kMaxDim || header[2] == 0)
        throw Error(ErrorCode::invalid_input, "bad ensemble header in " + file);
    PathEnsemble e;
    e.paths = static_cast<int>(header[0]);
    e.dim = static_cast<int>(header[1]);
    e.grid = build_time_grid(horizon, static_cast<int>(header[2]));
    e.seed = header[3];
    e.increments.resize(header[0] * header[1] * header[2]);
    in.read(reinterpret_cast<char*>(e.increments.data()),
            static_cast<std::streamsize>(e.increments.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::invalid_input, "truncated ensemble body in " + file);
    fill_positions(e);
    return e;
}

SigmaFunction constant_sigma(DriftVector sigma) {
    return [sigma](double, const double*) { return sigma; };
}

double GirsanovWeight::mean_density() const {
    double s = 0.0;
    for (double v : density) s += v;
    return s / static_cast<double>(density.size());
}

double GirsanovWeight::density_standard_error() const {
    const double mean = mean_density();
    double s = 0.0;
    for (double v : density) s += (v - mean) * (v - mean);
    const auto n = static_cast<double>(density.size());
    return std::sqrt(s / (n - 1.0) / n);
}

GirsanovWeight girsanov_shift(const PathEnsemble& paths, const SigmaFunction& sigma, double bound) {
    GirsanovWeight g;
    g.dim = paths.dim;
    g.shifted.resize(paths.positions.size());
    g.density.resize(static_cast<std::size_t>(paths.paths));
    const int K = paths.grid.steps();
    const double dt = paths.grid.dt();
    const auto d = static_cast<std::size_t>(paths.dim);
    for (int m = 0; m < paths.paths; ++m) {
        double* wt = g.shifted.data() + static_cast<std::size_t>(m) * paths.grid.size() * d;
        for (std::size_t l = 0; l < d; ++l) wt[l] = 0.0;
        double log_density = 0.0;
        for (int k = 0; k < K; ++k) {
            const DriftVector s = sigma(paths.grid.node(k), paths.w(m, k));
            double s2 = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                if (!(std::abs(s[l]) <= bound))
                    throw Error(ErrorCode::assumption_violation, "sigma exceeds its declared bound on a sampled path");
                const double dw = paths.dw(m, k, static_cast<int>(l));
                log_density += s[l] * dw;
                s2 += s[l] * s[l];
                wt[(k + 1) * d + l] = wt[k * d + l] + dw - s[l] * dt;
            }
            log_density -= 0.5 * s2 * dt;
        }
        g.density[static_cast<std::size_t>(m)] = std::exp(log_density);
    }
    return g;
}

}  // namespace bspde
