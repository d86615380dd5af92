#include "kolmo/chain.hpp"

#include <algorithm>
#include <cmath>

#include "kolmo/errors.hpp"
#include "kolmo/parallel.hpp"

namespace kolmo {

BaseDist base_dist_from_string(const std::string& s) {
    if (s == "gaussian") return BaseDist::gaussian;
    if (s == "scaled-uniform-mixture") return BaseDist::scaled_uniform_mixture;
    if (s == "student-like-smoothed") return BaseDist::student_like_smoothed;
    throw config_error("unknown base distribution '" + s + "'");
}

std::string to_string(BaseDist b) {
    switch (b) {
        case BaseDist::gaussian: return "gaussian";
        case BaseDist::scaled_uniform_mixture: return "scaled-uniform-mixture";
        case BaseDist::student_like_smoothed: return "student-like-smoothed";
    }
    return "?";
}

void ChainConfig::validate() const {
    if (!(T > 0.0)) throw argument_error("chain: T must be positive");
    if (N < 1) throw argument_error("chain: N must be >= 1");
    if (n < 2) throw argument_error("chain: micro count n must be >= 2");
}

Mat innovation_covariance(int n) {
    if (n < 1) throw argument_error("innovation_covariance: n >= 1");
    const double nn = n;
    Mat c(2, 2);
    c(0, 0) = 1.0;
    c(0, 1) = c(1, 0) = (nn + 1.0) / (2.0 * nn);
    c(1, 1) = (2.0 * nn * nn + 3.0 * nn + 1.0) / (6.0 * nn * nn);
    return c;
}

// scaled_uniform_mixture: asymmetric two-center uniform band plus a Gaussian
// mollifier; mean 0, variance 1, third moment 0.384.
// student_like_smoothed: Gaussian scale mixture; variance 1, excess kurtosis 1.75.
double sample_base(BaseDist base, CounterRng& rng) {
    using namespace base_params;
    switch (base) {
        case BaseDist::gaussian:
            return rng.normal();
        case BaseDist::scaled_uniform_mixture: {
            const double u = rng.uniform();
            const double c = (u < mix_p1) ? mix_c1 : mix_c2;
            const double pos = c + mix_a * (2.0 * rng.uniform() - 1.0);
            return pos + mix_eps * rng.normal();
        }
        case BaseDist::student_like_smoothed: {
            const double s = (rng.uniform() < stu_q) ? stu_s1 : stu_s2;
            return s * rng.normal();
        }
    }
    return 0.0;
}

InnovationPair aggregate_innovation(int n, int d, const std::function<double()>& micro) {
    InnovationPair p;
    p.eta1.assign(static_cast<size_t>(d), 0.0);
    p.eta2.assign(static_cast<size_t>(d), 0.0);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < d; ++i) {
        double e1 = 0.0, e2 = 0.0;
        for (int k = 1; k <= n; ++k) {
            const double xi = micro();
            e1 += xi;
            e2 += (1.0 - (k - 1.0) / n) * xi;
        }
        p.eta1[i] = e1 * inv_sqrt_n;
        p.eta2[i] = e2 * inv_sqrt_n;
    }
    return p;
}

InnovationPair sample_innovation(int n, BaseDist base, int d, CounterRng& rng) {
    return aggregate_innovation(n, d, [&] { return sample_base(base, rng); });
}

PhasePoint simulate_chain(const ModelSpec& model, const ChainConfig& cfg,
                          const PhasePoint& start, CounterRng& rng,
                          std::vector<PhasePoint>* path) {
    cfg.validate();
    const int d = model.dim;
    const double h = cfg.h();
    const double sqh = std::sqrt(h);
    const double gam_half = 0.5 * cfg.gamma_n();
    PhasePoint z = start;
    if (path) {
        path->clear();
        path->push_back(z);
    }
    Vec xnew(static_cast<size_t>(d));
    for (int step = 0; step < cfg.N; ++step) {
        const Vec b = model.drift(z.x, z.y);
        const Mat sig = model.diffusion_sqrt(z.x, z.y);
        const InnovationPair inn = sample_innovation(cfg.n, cfg.base, d, rng);
        for (int i = 0; i < d; ++i) {
            double n1 = 0.0, n2 = 0.0;
            for (int j = 0; j < d; ++j) {
                n1 += sig(i, j) * inn.eta1[j];
                n2 += sig(i, j) * inn.eta2[j];
            }
            xnew[i] = z.x[i] + b[i] * h + sqh * n1;
            z.y[i] += (z.x[i] + gam_half * b[i] * h + sqh * n2) * h;
        }
        z.x = xnew;
        if (path) path->push_back(z);
    }
    return z;
}

QnDensity qn_gaussian(int n) {
    const Mat c = innovation_covariance(n);
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(0, 1);
    if (det <= 0.0)
        throw conditioning_error("qn_gaussian: innovation covariance singular (n < 2)");
    const double i00 = c(1, 1) / det, i01 = -c(0, 1) / det, i11 = c(0, 0) / det;
    const double norm = 1.0 / (2.0 * M_PI * std::sqrt(det));
    return [=](double e1, double e2) {
        const double q = i00 * e1 * e1 + 2.0 * i01 * e1 * e2 + i11 * e2 * e2;
        return norm * std::exp(-0.5 * q);
    };
}

namespace {

double step_density_core(const Vec& b, const Mat& sigma, double h, double gamma_n,
                         const PhasePoint& z, const PhasePoint& zp, const QnDensity& qn) {
    const int d = static_cast<int>(b.size());
    const double sqh = std::sqrt(h);
    const Mat ls = cholesky(sigma); // sigma is SPD symmetric
    Vec rx(static_cast<size_t>(d)), ry(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        rx[i] = zp.x[i] - z.x[i] - b[i] * h;
        ry[i] = zp.y[i] - z.y[i] - (z.x[i] + 0.5 * gamma_n * b[i] * h) * h;
    }
    const Vec u = chol_solve(ls, rx);
    const Vec v = chol_solve(ls, ry);
    double dens = 1.0;
    for (int i = 0; i < d; ++i) dens *= qn(u[i] / sqh, v[i] / (h * sqh));
    const double det_sigma = det_from_cholesky(ls);
    const double det_a = det_sigma * det_sigma;
    return dens / (det_a * std::pow(h, 2.0 * d));
}

} // namespace

double one_step_density(const ModelSpec& model, double h, int n, const PhasePoint& z,
                        const PhasePoint& zp, const QnDensity& qn) {
    if (!(h > 0.0)) throw argument_error("one_step_density: h must be positive");
    const Vec b = model.drift(z.x, z.y);
    const Mat sigma = model.diffusion_sqrt(z.x, z.y);
    return step_density_core(b, sigma, h, 1.0 + 1.0 / n, z, zp, qn);
}

FrozenChainMoments frozen_chain_moments(const ModelSpec& model, int j, double h,
                                        const PhasePoint& start, const PhasePoint& freeze,
                                        double anchor_time, int n) {
    if (j < 1) throw argument_error("frozen_chain_moments: j >= 1");
    const int d = model.dim;
    const double tj = j * h;
    const double rho2 = tj;
    const double gamma_n = 1.0 + 1.0 / n;
    const double gamma_nj = 1.0 + 1.0 / (static_cast<double>(n) * j);

    const Vec b = model.drift(freeze.x, freeze.y);
    Mat v11(d, d), v12(d, d), v22(d, d);
    Vec ys(static_cast<size_t>(d));
    for (int i = 0; i < j; ++i) {
        const double ti = i * h;
        for (int k = 0; k < d; ++k) ys[k] = freeze.y[k] - freeze.x[k] * (anchor_time - ti);
        const Mat sig = model.diffusion_sqrt(freeze.x, ys);
        const Mat a = sig * sig;
        const double rem = tj - (ti + h);
        const double f1 = 0.5 * gamma_n * h + rem;
        const double f2 = gamma_n * h * h / 3.0 * (1.0 + 0.5 / n) + gamma_n * h * rem + rem * rem;
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c) {
                v11(r, c) += h * a(r, c) / tj;
                v12(r, c) += h * a(r, c) * f1 / (tj * tj);
                v22(r, c) += h * a(r, c) * f2 / (tj * tj * tj);
            }
    }

    FrozenChainMoments out;
    out.gamma_nj = gamma_nj;
    out.mean.resize(static_cast<size_t>(2 * d));
    for (int i = 0; i < d; ++i) {
        out.mean[i] = start.x[i] + b[i] * rho2;
        out.mean[d + i] = start.y[i] + start.x[i] * rho2 + 0.5 * rho2 * rho2 * b[i] * gamma_nj;
    }
    out.vj = Mat(2 * d, 2 * d);
    out.cov = Mat(2 * d, 2 * d);
    const double rho = std::sqrt(rho2);
    const double rho3 = rho * rho2;
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
            out.vj(r, c) = v11(r, c);
            out.vj(r, d + c) = v12(r, c);
            out.vj(d + r, c) = v12(c, r);
            out.vj(d + r, d + c) = v22(r, c);
            out.cov(r, c) = rho * rho * v11(r, c);
            out.cov(r, d + c) = rho * rho3 * v12(r, c);
            out.cov(d + r, c) = rho * rho3 * v12(c, r);
            out.cov(d + r, d + c) = rho3 * rho3 * v22(r, c);
        }
    return out;
}

double frozen_chain_density(const ModelSpec& model, int j, double h,
                            const PhasePoint& start, const PhasePoint& freeze,
                            double anchor_time, int n) {
    const FrozenChainMoments m = frozen_chain_moments(model, j, h, start, freeze, anchor_time, n);
    const int dims = 2 * model.dim;
    const Mat L = cholesky(m.cov);
    Vec u(static_cast<size_t>(dims));
    for (int i = 0; i < model.dim; ++i) {
        u[i] = freeze.x[i] - m.mean[i];
        u[model.dim + i] = freeze.y[i] - m.mean[model.dim + i];
    }
    const Vec s = solve_lower(L, u);
    const double q = dot(s, s);
    double log_det_l = 0.0;
    for (int i = 0; i < dims; ++i) log_det_l += std::log(L(i, i));
    return std::exp(-0.5 * q - 0.5 * dims * std::log(2.0 * M_PI) - log_det_l);
}

// ---------------------------------------------------------------------------
// Endpoint sampling and kernel density estimation

namespace {

constexpr int kBatches = 64;

// Visits every chain endpoint; batch-local accumulation keeps results
// independent of thread scheduling.
void for_each_endpoint(const ModelSpec& model, const ChainConfig& cfg,
                       const PhasePoint& start, long long samples,
                       const std::function<void(int batch, double x, double y)>& visit) {
    cfg.validate();
    if (model.dim != 1 || !model.drift1 || !model.sigma1)
        throw unsupported_error("endpoint sampling: scalar d = 1 model required");
    const double h = cfg.h();
    const double sqh = std::sqrt(h);
    const double gam_half = 0.5 * cfg.gamma_n();
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(cfg.n));
    const auto b1 = model.drift1;
    const auto s1 = model.sigma1;
    run_batches(kBatches, [&](int batch) {
        CounterRng rng(cfg.seed, static_cast<std::uint64_t>(batch));
        long long count = samples / kBatches + (batch < samples % kBatches ? 1 : 0);
        for (long long p = 0; p < count; ++p) {
            double x = start.x[0], y = start.y[0];
            for (int step = 0; step < cfg.N; ++step) {
                const double b = b1(x, y);
                const double s = s1(x, y);
                double e1 = 0.0, e2 = 0.0;
                for (int k = 1; k <= cfg.n; ++k) {
                    const double xi = sample_base(cfg.base, rng);
                    e1 += xi;
                    e2 += (1.0 - (k - 1.0) / cfg.n) * xi;
                }
                e1 *= inv_sqrt_n;
                e2 *= inv_sqrt_n;
                const double xn = x + b * h + s * sqh * e1;
                y += (x + gam_half * b * h + s * sqh * e2) * h;
                x = xn;
            }
            visit(batch, x, y);
        }
    });
}

} // namespace

void default_bandwidths(double T, double& bx, double& by) {
    bx = 0.35 * std::sqrt(T);
    by = 0.35 * T * std::sqrt(T) / std::sqrt(3.0);
}

DensityGrid chain_density_kde(const ModelSpec& model, const ChainConfig& cfg,
                              const PhasePoint& start, const GridSpec& grid,
                              long long samples, double bx, double by) {
    if (samples < 10000) throw argument_error("chain_density_kde: need >= 1e4 samples");
    if (!(bx > 0.0) || !(by > 0.0)) throw argument_error("chain_density_kde: bandwidths > 0");
    grid.validate();
    const int nodes = grid.nodes();
    std::vector<std::vector<double>> part1(kBatches), part2(kBatches);
    for (int b = 0; b < kBatches; ++b) {
        part1[b].assign(static_cast<size_t>(nodes), 0.0);
        part2[b].assign(static_cast<size_t>(nodes), 0.0);
    }
    const double norm = 1.0 / (2.0 * M_PI * bx * by);
    const double dx = grid.cell_dx(), dy = grid.cell_dy();
    const double reach = 6.0;
    for_each_endpoint(model, cfg, start, samples, [&](int batch, double x, double y) {
        int i0 = 0, i1 = grid.nx - 1, j0 = 0, j1 = grid.ny - 1;
        if (dx > 0.0) {
            i0 = std::max(0, static_cast<int>(std::floor((x - reach * bx - grid.x_min) / dx)));
            i1 = std::min(grid.nx - 1,
                          static_cast<int>(std::ceil((x + reach * bx - grid.x_min) / dx)));
        }
        if (dy > 0.0) {
            j0 = std::max(0, static_cast<int>(std::floor((y - reach * by - grid.y_min) / dy)));
            j1 = std::min(grid.ny - 1,
                          static_cast<int>(std::ceil((y + reach * by - grid.y_min) / dy)));
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
    out.meta["estimator"] = "kde";
    out.meta["bx"] = std::to_string(bx);
    out.meta["by"] = std::to_string(by);
    out.meta["samples"] = std::to_string(samples);
    return out;
}

std::vector<KdeEstimate> chain_kde_at_points(const ModelSpec& model, const ChainConfig& cfg,
                                             const PhasePoint& start,
                                             const std::vector<PhasePoint>& points,
                                             long long samples, double bx, double by) {
    const int np = static_cast<int>(points.size());
    std::vector<std::vector<double>> part1(kBatches), part2(kBatches);
    for (int b = 0; b < kBatches; ++b) {
        part1[b].assign(static_cast<size_t>(np), 0.0);
        part2[b].assign(static_cast<size_t>(np), 0.0);
    }
    const double norm = 1.0 / (2.0 * M_PI * bx * by);
    for_each_endpoint(model, cfg, start, samples, [&](int batch, double x, double y) {
        for (int p = 0; p < np; ++p) {
            const double ux = (points[p].x[0] - x) / bx;
            const double uy = (points[p].y[0] - y) / by;
            if (std::abs(ux) > 8.0 || std::abs(uy) > 8.0) continue;
            const double k = norm * std::exp(-0.5 * (ux * ux + uy * uy));
            part1[batch][p] += k;
            part2[batch][p] += k * k;
        }
    });
    std::vector<KdeEstimate> out(static_cast<size_t>(np));
    const double m = static_cast<double>(samples);
    std::vector<double> col(kBatches);
    for (int p = 0; p < np; ++p) {
        for (int b = 0; b < kBatches; ++b) col[b] = part1[b][p];
        const double s1 = pairwise_sum(col);
        for (int b = 0; b < kBatches; ++b) col[b] = part2[b][p];
        const double s2 = pairwise_sum(col);
        out[p].value = s1 / m;
        out[p].se = std::sqrt(std::max(0.0, s2 / m - out[p].value * out[p].value) / m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Discrete parametrix

namespace {

// Scalar gaussian innovation-pair density parameters.
struct QnGauss {
    double i00, i01, i11, log_norm;
    explicit QnGauss(int n) {
        const Mat c = innovation_covariance(n);
        const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(0, 1);
        if (det <= 0.0)
            throw conditioning_error("gaussian q_n: covariance singular (n < 2)");
        i00 = c(1, 1) / det;
        i01 = -c(0, 1) / det;
        i11 = c(0, 0) / det;
        log_norm = -std::log(2.0 * M_PI) - 0.5 * std::log(det);
    }
    double operator()(double e1, double e2) const {
        return std::exp(log_norm -
                        0.5 * (i00 * e1 * e1 + 2.0 * i01 * e1 * e2 + i11 * e2 * e2));
    }
};

// Precomputed (j-step, frozen, anchored) gaussian transition, d = 1.
struct FrozenChainGauss {
    double b = 0.0; // frozen drift
    double gamma_nj = 1.0;
    double rho2 = 0.0; // t_j
    double l00 = 0.0, l10 = 0.0, l11 = 0.0; // cholesky of the scaled covariance
    double log_norm = 0.0;

    FrozenChainGauss(const ModelSpec& model, int j, double h, double fx, double fy,
                     double anchor_time, int n) {
        const double tj = j * h;
        rho2 = tj;
        const double gamma_n = 1.0 + 1.0 / n;
        gamma_nj = 1.0 + 1.0 / (static_cast<double>(n) * j);
        b = model.drift1(fx, fy);
        double v11 = 0.0, v12 = 0.0, v22 = 0.0;
        for (int i = 0; i < j; ++i) {
            const double ti = i * h;
            const double sig = model.sigma1(fx, fy - fx * (anchor_time - ti));
            const double a = sig * sig;
            const double rem = tj - (ti + h);
            const double f1 = 0.5 * gamma_n * h + rem;
            const double f2 =
                gamma_n * h * h / 3.0 * (1.0 + 0.5 / n) + gamma_n * h * rem + rem * rem;
            v11 += h * a / tj;
            v12 += h * a * f1 / (tj * tj);
            v22 += h * a * f2 / (tj * tj * tj);
        }
        const double c11 = rho2 * v11;
        const double c12 = rho2 * rho2 * v12;
        const double c22 = rho2 * rho2 * rho2 * v22;
        l00 = std::sqrt(c11);
        l10 = c12 / l00;
        const double s = c22 - l10 * l10;
        if (!(s > 0.0)) throw conditioning_error("frozen chain: covariance not SPD");
        l11 = std::sqrt(s);
        log_norm = -std::log(2.0 * M_PI) - std::log(l00) - std::log(l11);
    }

    double density(double sx, double sy, double tx, double ty) const {
        const double u1 = tx - (sx + b * rho2);
        const double u2 = ty - (sy + sx * rho2 + 0.5 * rho2 * rho2 * b * gamma_nj);
        const double z0v = u1 / l00;
        const double z1v = (u2 - l10 * z0v) / l11;
        return std::exp(log_norm - 0.5 * (z0v * z0v + z1v * z1v));
    }
};

struct DiscreteCtx {
    const ModelSpec& model;
    double h;
    int n, N;
    double gamma_n;
    double z0x, z0y;
    QuadratureSpec quad;
    QnGauss qn;
    double c_env;   // standardization envelope
    double c_adapt; // node placement, matched to the true scales

    // Standardized lattice of term values per (order, macro step index).
    // The order-one slices carry one-step kernel differences with dipole
    // structure, so they need a denser grid than the continuous evaluator.
    int n_s = 25;
    double box = 7.0;
    std::vector<double> s_nodes;
    std::unique_ptr<ChebInterp1D> s_interp;
    // lattice[r][i] flat over (n_s x n_s); r in [1, N-1], i in [1, N-1]
    std::vector<std::vector<std::vector<double>>> lattice;
    // Per-slice frames: the chain pair carries a correlation ridge steeper
    // than the diffusion transport (slope gamma-weighted instead of t/2), so
    // slices are standardized by the chain's own covariance factor.
    std::vector<std::unique_ptr<FrozenChainGauss>> frame;

    void std_coords(int i, double wx, double wy, double& h1, double& h2) const {
        const FrozenChainGauss& g = *frame[static_cast<size_t>(i)];
        const double rho2 = i * h;
        const double mx = z0x + g.b * rho2;
        const double my = z0y + z0x * rho2 + 0.5 * rho2 * rho2 * g.b * g.gamma_nj;
        h1 = (wx - mx) / g.l00;
        h2 = (wy - my - g.l10 * h1) / g.l11;
    }
    void unstd_coords(int i, double h1, double h2, double& wx, double& wy) const {
        const FrozenChainGauss& g = *frame[static_cast<size_t>(i)];
        const double rho2 = i * h;
        const double mx = z0x + g.b * rho2;
        const double my = z0y + z0x * rho2 + 0.5 * rho2 * rho2 * g.b * g.gamma_nj;
        wx = mx + g.l00 * h1;
        wy = my + g.l10 * h1 + g.l11 * h2;
    }
    double slice_ref(int i, double wx, double wy) const {
        return frame[static_cast<size_t>(i)]->density(z0x, z0y, wx, wy);
    }

    double step_density(double bv, double sig, double ax, double ay, double bx_,
                        double by_) const {
        const double sqh = std::sqrt(h);
        const double u = (bx_ - ax - bv * h) / (sig * sqh);
        const double v = (by_ - ay - (ax + 0.5 * gamma_n * bv * h) * h) / (sig * h * sqh);
        return qn(u, v) / (sig * sig * h * h);
    }

    double chain_step(double ax, double ay, double bx_, double by_) const {
        return step_density(model.drift1(ax, ay), model.sigma1(ax, ay), ax, ay, bx_, by_);
    }

    // First step of the frozen chain anchored `remaining` before its target.
    double frozen_step(double ax, double ay, double bx_, double by_, double fx, double fy,
                       double remaining) const {
        return step_density(model.drift1(fx, fy), model.sigma1(fx, fy - fx * remaining), ax,
                            ay, bx_, by_);
    }

    double H_h(int j, double ax, double ay, double bx_, double by_) const {
        if (j == 1)
            return (chain_step(ax, ay, bx_, by_) -
                    frozen_step(ax, ay, bx_, by_, bx_, by_, h)) /
                   h;
        const double tj = j * h;
        // Node placement: one-step envelope around the chain mean plus the
        // landing envelope of the (j-1)-step frozen factor.
        const double bv = model.drift1(ax, ay);
        const double sig = model.sigma1(ax, ay);
        const double av = sig * sig;
        const Mat icov = innovation_covariance(n);
        const double c00 = 1.5 * av * h;
        const double c01 = 1.5 * av * h * h * icov(0, 1);
        const double c11 = 1.5 * av * h * h * h * icov(1, 1);
        QuadForm form(2);
        {
            const double l00 = std::sqrt(c00);
            const double l10 = c01 / l00;
            const double l11 = std::sqrt(c11 - l10 * l10);
            Mat li(2, 2);
            li(0, 0) = 1.0 / l00;
            li(1, 0) = -l10 / (l00 * l11);
            li(1, 1) = 1.0 / l11;
            const double m0 = ax + bv * h;
            const double m1 = ay + (ax + 0.5 * gamma_n * bv * h) * h;
            form.add_term(0.5, li, Vec{li(0, 0) * m0, li(1, 0) * m0 + li(1, 1) * m1});
        }
        form += hat_target_form(c_adapt, 1, tj - h, PhasePoint(bx_, by_));
        const SpaceNodes1D nodes = adapted_space_nodes_1d(form, quad);
        // The tail factor is the remaining j-1 steps towards the anchor; its
        // transport arguments run over {t_{j-1}, ..., h}, i.e. it is the
        // (j-1)-step chain anchored at its own duration. Anchoring at t_j
        // instead breaks the telescoping identity at order h.
        const FrozenChainGauss tail(model, j - 1, h, bx_, by_, tj - h, n);
        double acc = 0.0;
        for (int in = 0; in < nodes.size(); ++in) {
            const double wx = nodes.wx[in], wy = nodes.wy[in];
            const double diff =
                chain_step(ax, ay, wx, wy) - frozen_step(ax, ay, wx, wy, bx_, by_, tj);
            if (diff == 0.0) continue;
            acc += nodes.weight[in] * diff * tail.density(wx, wy, bx_, by_);
        }
        return acc / h;
    }

    double lattice_value(int r, int i, double wx, double wy) const {
        double hx, hy;
        std_coords(i, wx, wy, hx, hy);
        if (std::abs(hx) > box || std::abs(hy) > box) return 0.0;
        thread_local std::vector<double> cx, cy;
        s_interp->coefficients(hx, cx);
        s_interp->coefficients(hy, cy);
        const std::vector<double>& g =
            lattice[static_cast<size_t>(r)][static_cast<size_t>(i)];
        double acc = 0.0;
        for (int a = 0; a < n_s; ++a) {
            double sa = 0.0;
            const size_t base = static_cast<size_t>(a) * n_s;
            for (int bidx = 0; bidx < n_s; ++bidx) sa += cy[bidx] * g[base + bidx];
            acc += cx[a] * sa;
        }
        return acc * slice_ref(i, wx, wy);
    }

    // term_r(t_j, z0 -> zp) by the discrete convolution over i < j.
    double term(int r, int j, double zpx, double zpy) const {
        if (r == 0)
            return FrozenChainGauss(model, j, h, zpx, zpy, j * h, n)
                .density(z0x, z0y, zpx, zpy);
        double acc = 0.0;
        if (r == 1) acc += h * H_h(j, z0x, z0y, zpx, zpy); // i = 0 summand, delta start
        for (int i = 1; i < j; ++i) {
            QuadForm form = hat_source_form(c_adapt, 1, i * h, PhasePoint(z0x, z0y));
            form += hat_target_form(c_adapt, 1, (j - i) * h, PhasePoint(zpx, zpy));
            const SpaceNodes1D nodes = adapted_space_nodes_1d(form, quad);
            double inner = 0.0;
            for (int in = 0; in < nodes.size(); ++in) {
                const double wx = nodes.wx[in], wy = nodes.wy[in];
                const double prev = (r == 1) ? FrozenChainGauss(model, i, h, wx, wy, i * h, n)
                                                   .density(z0x, z0y, wx, wy)
                                             : lattice_value(r - 1, i, wx, wy);
                if (prev == 0.0) continue;
                inner += nodes.weight[in] * prev * H_h(j - i, wx, wy, zpx, zpy);
            }
            acc += h * inner;
        }
        return acc;
    }

    void build() {
        s_nodes = cheb_lobatto(n_s, -box, box);
        s_interp = std::make_unique<ChebInterp1D>(s_nodes);
        frame.resize(static_cast<size_t>(N) + 1);
        for (int i = 1; i <= N; ++i)
            frame[static_cast<size_t>(i)] = std::make_unique<FrozenChainGauss>(
                model, i, h, z0x, z0y, i * h, n);
        lattice.assign(static_cast<size_t>(N) + 1, {});
        // Order r at horizon t_N only ever reads orders <= N-1; term_r(t_i)
        // vanishes for r > i, so the loops below stay cheap for high r.
        for (int r = 1; r <= N - 1; ++r) {
            lattice[static_cast<size_t>(r)].assign(static_cast<size_t>(N) + 1, {});
            for (int i = 1; i < N; ++i) {
                std::vector<double> tv(static_cast<size_t>(n_s) * n_s, 0.0);
                std::vector<double> g(static_cast<size_t>(n_s) * n_s, 0.0);
                double peak = 0.0;
                for (int aidx = 0; aidx < n_s; ++aidx)
                    for (int bidx = 0; bidx < n_s; ++bidx) {
                        double wx, wy;
                        unstd_coords(i, s_nodes[aidx], s_nodes[bidx], wx, wy);
                        const double term_v = term(r, i, wx, wy);
                        tv[static_cast<size_t>(aidx) * n_s + bidx] = term_v;
                        peak = std::max(peak, std::abs(term_v));
                    }
                // drop entries below the resolvable dynamic range; the ratio
                // representation otherwise amplifies tail quadrature noise
                for (int aidx = 0; aidx < n_s; ++aidx)
                    for (int bidx = 0; bidx < n_s; ++bidx) {
                        const size_t idx = static_cast<size_t>(aidx) * n_s + bidx;
                        if (std::abs(tv[idx]) < 1e-11 * peak) continue;
                        double wx, wy;
                        unstd_coords(i, s_nodes[aidx], s_nodes[bidx], wx, wy);
                        g[idx] = tv[idx] / slice_ref(i, wx, wy);
                    }
                lattice[static_cast<size_t>(r)][static_cast<size_t>(i)] = std::move(g);
            }
        }
    }
};

} // namespace

struct DiscreteParametrixEvaluator::Impl {
    ModelSpec model;
    ChainConfig cfg;
    DiscreteCtx ctx;

    Impl(const ModelSpec& model_in, const ChainConfig& cfg_in, const PhasePoint& z0,
         const QuadratureSpec& quad)
        : model(model_in),
          cfg(cfg_in),
          ctx{model,
              cfg.h(),
              cfg.n,
              cfg.N,
              cfg.gamma_n(),
              z0.x[0],
              z0.y[0],
              quad,
              QnGauss(cfg.n),
              0.45 / std::max(model.lambda_max, 1e-12),
              1.9 / std::max(model.lambda_max, 1e-12),
              25,
              7.0,
              {},
              {},
              {},
              {}} {
        ctx.build();
    }
};

DiscreteParametrixEvaluator::DiscreteParametrixEvaluator(const ModelSpec& model,
                                                         const ChainConfig& cfg,
                                                         const PhasePoint& z0,
                                                         const QuadratureSpec& quad) {
    cfg.validate();
    if (cfg.N > 8) throw argument_error("discrete parametrix: N <= 8");
    if (model.dim != 1 || !model.sigma1 || !model.drift1)
        throw unsupported_error("discrete parametrix: scalar d = 1 model required");
    if (cfg.base != BaseDist::gaussian)
        throw unsupported_error("discrete parametrix: gaussian base innovations only");
    quad.validate();
    impl_ = std::make_unique<Impl>(model, cfg, z0, quad);
}

DiscreteParametrixEvaluator::~DiscreteParametrixEvaluator() = default;

SeriesResult DiscreteParametrixEvaluator::eval(const PhasePoint& zp) const {
    const DiscreteCtx& ctx = impl_->ctx;
    SeriesResult res;
    res.c_env = ctx.c_env;
    res.terms.resize(static_cast<size_t>(impl_->cfg.N) + 1, 0.0);
    for (int r = 0; r <= impl_->cfg.N; ++r)
        res.terms[static_cast<size_t>(r)] = ctx.term(r, impl_->cfg.N, zp.x[0], zp.y[0]);
    res.value = 0.0;
    for (double v : res.terms) res.value += v;
    res.tail_bound = 0.0; // finite series, no truncation
    return res;
}

SeriesResult discrete_parametrix_density(const ModelSpec& model, const ChainConfig& cfg,
                                         const PhasePoint& z0, const PhasePoint& zp,
                                         const QuadratureSpec& quad) {
    return DiscreteParametrixEvaluator(model, cfg, z0, quad).eval(zp);
}

// ---------------------------------------------------------------------------
// Local limit rate experiment

namespace {

// Theorem weight (1+|x'|+|x|) sup_delta hat_p(T(1+delta)) + chi_sqrtT, S' = 1.
double rate_weight(double T, const PhasePoint& z0, const PhasePoint& zp) {
    double sup_hat = 0.0;
    for (int k = 0; k <= 16; ++k)
        sup_hat = std::max(sup_hat, hat_p(1.0, 1, T * (1.0 + k / 16.0), z0, zp));
    const double rho = std::sqrt(T);
    const double chi = std::pow(rho, -4.0) * 0.5; // chi(u, v) = 1/2 at S' = 1
    return (1.0 + std::abs(zp.x[0]) + std::abs(z0.x[0])) * sup_hat + chi;
}

// Kernel-smoothed reference E_{w ~ N(zp, diag(bx^2, by^2))}[p(w)].
double smoothed_reference(const ParametrixEvaluator& ev, const PhasePoint& zp, double bx,
                          double by, int gh_nodes) {
    const Rule1D gh = gauss_hermite(gh_nodes);
    double acc = 0.0;
    const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
    for (int i = 0; i < gh.size(); ++i)
        for (int j = 0; j < gh.size(); ++j) {
            const PhasePoint w(zp.x[0] + std::sqrt(2.0) * bx * gh.x[i],
                               zp.y[0] + std::sqrt(2.0) * by * gh.x[j]);
            acc += gh.w[i] * gh.w[j] * inv_sqrt_pi * inv_sqrt_pi * ev.eval(w, false).value;
        }
    return acc;
}

void euler_kde_at_points(const ModelSpec& model, double T, const PhasePoint& z0,
                         const std::vector<PhasePoint>& points, long long samples,
                         int micro_steps, double bx, double by, std::uint64_t seed,
                         std::vector<KdeEstimate>& out) {
    if (model.dim != 1 || !model.drift1 || !model.sigma1)
        throw unsupported_error("euler reference: scalar d = 1 model required");
    const int np = static_cast<int>(points.size());
    std::vector<std::vector<double>> part1(kBatches), part2(kBatches);
    for (int b = 0; b < kBatches; ++b) {
        part1[b].assign(static_cast<size_t>(np), 0.0);
        part2[b].assign(static_cast<size_t>(np), 0.0);
    }
    const double dt = T / micro_steps;
    const double sqdt = std::sqrt(dt);
    const double norm = 1.0 / (2.0 * M_PI * bx * by);
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
            for (int q = 0; q < np; ++q) {
                const double ux = (points[q].x[0] - x) / bx;
                const double uy = (points[q].y[0] - y) / by;
                if (std::abs(ux) > 8.0 || std::abs(uy) > 8.0) continue;
                const double k = norm * std::exp(-0.5 * (ux * ux + uy * uy));
                part1[batch][q] += k;
                part2[batch][q] += k * k;
            }
        }
    });
    out.assign(static_cast<size_t>(np), {});
    const double m = static_cast<double>(samples);
    std::vector<double> col(kBatches);
    for (int q = 0; q < np; ++q) {
        for (int b = 0; b < kBatches; ++b) col[b] = part1[b][q];
        const double s1v = pairwise_sum(col);
        for (int b = 0; b < kBatches; ++b) col[b] = part2[b][q];
        const double s2v = pairwise_sum(col);
        out[q].value = s1v / m;
        out[q].se = std::sqrt(std::max(0.0, s2v / m - out[q].value * out[q].value) / m);
    }
}

} // namespace

RateReport lil_rate_experiment(const ModelSpec& model, double T, const PhasePoint& z0,
                               const std::vector<PhasePoint>& points,
                               const RateOptions& opt, const QuadratureSpec& quad) {
    if (points.empty()) throw argument_error("rate experiment: need test points");
    if (opt.N_ladder.size() < 3)
        throw argument_error("rate experiment: need a ladder of >= 3 values of N");
    RateReport rep;
    rep.bx = opt.bx;
    rep.by = opt.by;
    if (!(rep.bx > 0.0) || !(rep.by > 0.0)) default_bandwidths(T, rep.bx, rep.by);
    rep.r_max_ref = opt.r_max_ref;
    const int np = static_cast<int>(points.size());

    // Reference density, smoothed with the same kernel as the chain estimate.
    std::vector<double> ref(static_cast<size_t>(np), 0.0), ref_se(static_cast<size_t>(np), 0.0);
    if (opt.reference == RateReference::parametrix) {
        const ParametrixEvaluator ev(model, T, z0, opt.r_max_ref, quad);
        for (int p = 0; p < np; ++p)
            ref[static_cast<size_t>(p)] = smoothed_reference(ev, points[static_cast<size_t>(p)],
                                                             rep.bx, rep.by, 8);
    } else {
        std::vector<KdeEstimate> est;
        euler_kde_at_points(model, T, z0, points, opt.samples, opt.euler_micro_steps, rep.bx,
                            rep.by, opt.seed ^ 0xE011ull, est);
        for (int p = 0; p < np; ++p) {
            ref[static_cast<size_t>(p)] = est[static_cast<size_t>(p)].value;
            ref_se[static_cast<size_t>(p)] = est[static_cast<size_t>(p)].se;
        }
    }

    for (int N : opt.N_ladder) {
        ChainConfig cfg;
        cfg.T = T;
        cfg.N = N;
        cfg.n = opt.n;
        cfg.base = opt.base;
        cfg.seed = opt.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(N));
        const std::vector<KdeEstimate> est =
            chain_kde_at_points(model, cfg, z0, points, opt.samples, rep.bx, rep.by);
        for (int p = 0; p < np; ++p) {
            RateSample s;
            s.N = N;
            s.h = T / N;
            s.point = p;
            s.p_chain = est[static_cast<size_t>(p)].value;
            s.se_chain = est[static_cast<size_t>(p)].se;
            s.p_ref = ref[static_cast<size_t>(p)];
            s.se_ref = ref_se[static_cast<size_t>(p)];
            s.diff = std::abs(s.p_chain - s.p_ref);
            s.se = std::sqrt(s.se_chain * s.se_chain + s.se_ref * s.se_ref);
            s.weight_fn = rate_weight(T, z0, points[static_cast<size_t>(p)]);
            rep.samples.push_back(s);
        }
    }

    // Weighted LS with a common slope and one intercept per point:
    //   log diff = alpha_p + slope * log h.
    const int unknowns = np + 1;
    Mat ata(unknowns, unknowns);
    Vec atb(static_cast<size_t>(unknowns), 0.0);
    for (const RateSample& s : rep.samples) {
        if (!(s.diff > 0.0) || !(s.se > 0.0)) continue;
        const double snr = s.diff / s.se;
        const double w = std::min(snr * snr, 2500.0); // 1 / Var(log diff), capped
        const double lx = std::log(s.h);
        const double ly = std::log(s.diff);
        // row: e_{point}, slope column last
        const int pcol = s.point;
        ata(pcol, pcol) += w;
        ata(pcol, np) += w * lx;
        ata(np, pcol) += w * lx;
        ata(np, np) += w * lx * lx;
        atb[static_cast<size_t>(pcol)] += w * ly;
        atb[static_cast<size_t>(np)] += w * lx * ly;
    }
    const Mat L = cholesky(ata);
    const Vec sol = chol_solve(L, atb);
    rep.intercepts.assign(sol.begin(), sol.begin() + np);
    rep.slope = sol[static_cast<size_t>(np)];
    // slope variance = [(X'WX)^{-1}]_{slope, slope}
    Vec e(static_cast<size_t>(unknowns), 0.0);
    e[static_cast<size_t>(np)] = 1.0;
    const Vec inv_col = chol_solve(L, e);
    rep.slope_se = std::sqrt(std::max(0.0, inv_col[static_cast<size_t>(np)]));
    return rep;
}

} // namespace kolmo
