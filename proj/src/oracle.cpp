#include "kolmo/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "kolmo/errors.hpp"
#include "kolmo/parallel.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

namespace {

constexpr int kBatches = 64;

void require_scalar(const ModelSpec& model) {
    if (model.dim != 1 || !model.drift1 || !model.sigma1)
        throw unsupported_error("oracle: scalar d = 1 model required");
}

// Euler path with trapezoid accumulation of Y; visits the endpoint.
void for_each_euler_endpoint(const ModelSpec& model, double T, const PhasePoint& z0,
                             long long samples, int micro_steps, std::uint64_t seed,
                             const std::function<void(int, double, double)>& visit) {
    require_scalar(model);
    if (micro_steps < 200) throw argument_error("euler oracle: micro_steps >= 200");
    const double dt = T / micro_steps;
    const double sqdt = std::sqrt(dt);
    const auto b1 = model.drift1;
    const auto s1 = model.sigma1;
    run_batches(kBatches, [&](int batch) {
        CounterRng rng(seed, static_cast<std::uint64_t>(batch));
        long long count = samples / kBatches + (batch < samples % kBatches ? 1 : 0);
        for (long long p = 0; p < count; ++p) {
            double x = z0.x[0], y = z0.y[0];
            for (int k = 0; k < micro_steps; ++k) {
                const double xn = x + b1(x, y) * dt + s1(x, y) * sqdt * rng.normal();
                y += 0.5 * (x + xn) * dt;
                x = xn;
            }
            visit(batch, x, y);
        }
    });
}

} // namespace

DensityGrid euler_mc_density(const ModelSpec& model, double T, const PhasePoint& z0,
                             const GridSpec& grid, long long samples, int micro_steps,
                             double bx, double by, std::uint64_t seed) {
    if (samples < 100000) throw argument_error("euler_mc_density: need >= 1e5 samples");
    if (!(bx > 0.0) || !(by > 0.0)) throw argument_error("euler_mc_density: bandwidths > 0");
    grid.validate();
    const int nodes = grid.nodes();
    std::vector<std::vector<double>> part1(kBatches), part2(kBatches);
    for (int b = 0; b < kBatches; ++b) {
        part1[b].assign(static_cast<size_t>(nodes), 0.0);
        part2[b].assign(static_cast<size_t>(nodes), 0.0);
    }
    const double norm = 1.0 / (2.0 * M_PI * bx * by);
    const double dx = grid.cell_dx(), dy = grid.cell_dy();
    for_each_euler_endpoint(model, T, z0, samples, micro_steps, seed,
                            [&](int batch, double x, double y) {
        int i0 = 0, i1 = grid.nx - 1, j0 = 0, j1 = grid.ny - 1;
        if (dx > 0.0) {
            i0 = std::max(0, static_cast<int>(std::floor((x - 6.0 * bx - grid.x_min) / dx)));
            i1 = std::min(grid.nx - 1,
                          static_cast<int>(std::ceil((x + 6.0 * bx - grid.x_min) / dx)));
        }
        if (dy > 0.0) {
            j0 = std::max(0, static_cast<int>(std::floor((y - 6.0 * by - grid.y_min) / dy)));
            j1 = std::min(grid.ny - 1,
                          static_cast<int>(std::ceil((y + 6.0 * by - grid.y_min) / dy)));
        }
        for (int i = i0; i <= i1; ++i) {
            const double ux = (grid.x_at(i) - x) / bx;
            for (int j = j0; j <= j1; ++j) {
                const double uy = (grid.y_at(j) - y) / by;
                const double k = norm * std::exp(-0.5 * (ux * ux + uy * uy));
                part1[batch][static_cast<size_t>(i) * grid.ny + j] += k;
                part2[batch][static_cast<size_t>(i) * grid.ny + j] += k * k;
            }
        }
    });
    DensityGrid out = make_grid(grid);
    out.se.assign(static_cast<size_t>(nodes), 0.0);
    const double m = static_cast<double>(samples);
    std::vector<double> col(kBatches);
    for (int idx = 0; idx < nodes; ++idx) {
        for (int b = 0; b < kBatches; ++b) col[b] = part1[b][idx];
        const double s1 = pairwise_sum(col);
        for (int b = 0; b < kBatches; ++b) col[b] = part2[b][idx];
        const double s2 = pairwise_sum(col);
        const double mean = s1 / m;
        out.value[idx] = mean;
        out.se[idx] = std::sqrt(std::max(0.0, s2 / m - mean * mean) / m);
    }
    out.meta["estimator"] = "euler-kde";
    out.meta["micro_steps"] = std::to_string(micro_steps);
    out.meta["samples"] = std::to_string(samples);
    return out;
}

std::vector<KdeEstimate> euler_density_at_points(const ModelSpec& model, double T,
                                                 const PhasePoint& z0,
                                                 const std::vector<PhasePoint>& points,
                                                 long long samples, int micro_steps,
                                                 double bx, double by, std::uint64_t seed) {
    const int np = static_cast<int>(points.size());
    std::vector<std::vector<double>> part1(kBatches), part2(kBatches);
    for (int b = 0; b < kBatches; ++b) {
        part1[b].assign(static_cast<size_t>(np), 0.0);
        part2[b].assign(static_cast<size_t>(np), 0.0);
    }
    const double norm = 1.0 / (2.0 * M_PI * bx * by);
    for_each_euler_endpoint(model, T, z0, samples, micro_steps, seed,
                            [&](int batch, double x, double y) {
        for (int q = 0; q < np; ++q) {
            const double ux = (points[q].x[0] - x) / bx;
            const double uy = (points[q].y[0] - y) / by;
            if (std::abs(ux) > 8.0 || std::abs(uy) > 8.0) continue;
            const double k = norm * std::exp(-0.5 * (ux * ux + uy * uy));
            part1[batch][q] += k;
            part2[batch][q] += k * k;
        }
    });
    std::vector<KdeEstimate> out(static_cast<size_t>(np));
    const double m = static_cast<double>(samples);
    std::vector<double> col(kBatches);
    for (int q = 0; q < np; ++q) {
        for (int b = 0; b < kBatches; ++b) col[b] = part1[b][q];
        const double s1 = pairwise_sum(col);
        for (int b = 0; b < kBatches; ++b) col[b] = part2[b][q];
        const double s2 = pairwise_sum(col);
        out[q].value = s1 / m;
        out[q].se = std::sqrt(std::max(0.0, s2 / m - out[q].value * out[q].value) / m);
    }
    return out;
}

ProbabilityEstimate digital_asian_probability(const ModelSpec& model, double T, double K,
                                              long long samples, AsianEngine engine,
                                              const ChainConfig& chain_cfg,
                                              int euler_micro_steps, std::uint64_t seed) {
    if (!std::isfinite(K)) throw argument_error("digital asian: K must be finite");
    if (samples < 10000) throw argument_error("digital asian: need >= 1e4 samples");
    require_scalar(model);
    std::vector<long long> hits(kBatches, 0);
    const PhasePoint z0(0.0, 0.0);
    const auto indicator = [&](double x, double y) {
        const double payoff = std::max(y / T - x, 0.0);
        return payoff > K ? 1 : 0;
    };
    if (engine == AsianEngine::euler) {
        for_each_euler_endpoint(model, T, z0, samples, euler_micro_steps, seed,
                                [&](int batch, double x, double y) {
            hits[batch] += indicator(x, y);
        });
    } else {
        ChainConfig cfg = chain_cfg;
        cfg.T = T;
        cfg.seed = seed;
        const double h = cfg.h();
        const double sqh = std::sqrt(h);
        const double gam_half = 0.5 * cfg.gamma_n();
        const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(cfg.n));
        const auto b1 = model.drift1;
        const auto s1 = model.sigma1;
        cfg.validate();
        run_batches(kBatches, [&](int batch) {
            CounterRng rng(cfg.seed, static_cast<std::uint64_t>(batch));
            long long count = samples / kBatches + (batch < samples % kBatches ? 1 : 0);
            for (long long p = 0; p < count; ++p) {
                double x = 0.0, y = 0.0;
                for (int step = 0; step < cfg.N; ++step) {
                    const double bv = b1(x, y);
                    const double sv = s1(x, y);
                    double e1 = 0.0, e2 = 0.0;
                    for (int k = 1; k <= cfg.n; ++k) {
                        const double xi = sample_base(cfg.base, rng);
                        e1 += xi;
                        e2 += (1.0 - (k - 1.0) / cfg.n) * xi;
                    }
                    e1 *= inv_sqrt_n;
                    e2 *= inv_sqrt_n;
                    const double xn = x + bv * h + sv * sqh * e1;
                    y += (x + gam_half * bv * h + sv * sqh * e2) * h;
                    x = xn;
                }
                hits[batch] += indicator(x, y);
            }
        });
    }
    long long total = 0;
    for (long long hb : hits) total += hb;
    ProbabilityEstimate est;
    est.samples = samples;
    est.p = static_cast<double>(total) / static_cast<double>(samples);
    est.se = std::sqrt(std::max(est.p * (1.0 - est.p), 1e-12) / static_cast<double>(samples));
    return est;
}

} // namespace kolmo
