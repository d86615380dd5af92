#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kolmo/chain.hpp"
#include "kolmo/errors.hpp"
#include "kolmo/gaussian.hpp"
#include "kolmo/model.hpp"
#include "kolmo/quadrature.hpp"

using namespace kolmo;

namespace {
const QuadratureSpec kQuad{};
const PhasePoint kOrigin(0.0, 0.0);
}

TEST_CASE("innovation covariance closed forms") {
    const Mat c2 = innovation_covariance(2);
    CHECK(c2(0, 0) == 1.0);
    CHECK(c2(0, 1) == doctest::Approx(0.75).epsilon(1e-15));  // (n+1)/(2n)
    CHECK(c2(1, 1) == doctest::Approx(0.625).epsilon(1e-15)); // (2n^2+3n+1)/(6n^2)

    const Mat c1 = innovation_covariance(1);
    CHECK(c1(0, 1) == 1.0);
    CHECK(c1(1, 1) == 1.0);
    CHECK(c1(0, 0) * c1(1, 1) - c1(0, 1) * c1(0, 1) ==
          doctest::Approx(0.0).scale(1.0).epsilon(1e-15)); // singular boundary case

    // Brownian pair limit
    const Mat cb = innovation_covariance(1000000);
    CHECK(cb(0, 1) == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(cb(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("innovation determinant positive exactly when n >= 2") {
    for (int n = 2; n <= 32; ++n) {
        const Mat c = innovation_covariance(n);
        const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(0, 1);
        CHECK(det > 0.0);
        // closed form: (2n^2+3n+1)/(6n^2) - ((n+1)/(2n))^2 = (n^2-1)/(12 n^2)
        CHECK(det == doctest::Approx((n * n - 1.0) / (12.0 * n * n)).epsilon(1e-12));
    }
}

TEST_CASE("aggregation weights via impulse injection") {
    // feeding unit impulses recovers the weights (1 - (k-1)/n)/sqrt(n)
    const int n = 3;
    for (int pos = 0; pos < n; ++pos) {
        int call = 0;
        auto impulse = [&]() { return call++ == pos ? 1.0 : 0.0; };
        const InnovationPair p = aggregate_innovation(n, 1, impulse);
        CHECK(p.eta1[0] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
        const double want = (1.0 - pos / 3.0) / std::sqrt(3.0); // 1, 2/3, 1/3 over sqrt(3)
        CHECK(p.eta2[0] == doctest::Approx(want).epsilon(1e-15));
    }
    auto zero = []() { return 0.0; };
    const InnovationPair z = aggregate_innovation(5, 1, zero);
    CHECK(z.eta1[0] == 0.0);
    CHECK(z.eta2[0] == 0.0);
}

TEST_CASE("base distributions are standardized") {
    for (BaseDist base : {BaseDist::gaussian, BaseDist::scaled_uniform_mixture,
                          BaseDist::student_like_smoothed}) {
        CounterRng rng(101, 0);
        const long M = 400000;
        double m1 = 0, m2 = 0, m3 = 0, m4 = 0;
        for (long k = 0; k < M; ++k) {
            const double x = sample_base(base, rng);
            m1 += x;
            m2 += x * x;
            m3 += x * x * x;
            m4 += x * x * x * x;
        }
        m1 /= M; m2 /= M; m3 /= M; m4 /= M;
        CHECK(m1 == doctest::Approx(0.0).scale(1.0).epsilon(5e-3));
        CHECK(m2 == doctest::Approx(1.0).epsilon(1e-2));
        if (base == BaseDist::scaled_uniform_mixture)
            CHECK(m3 == doctest::Approx(0.384).epsilon(0.05)); // designed skewness
        if (base == BaseDist::student_like_smoothed)
            CHECK(m4 == doctest::Approx(4.75).epsilon(0.08)); // designed kurtosis
    }
}

TEST_CASE("aggregated sample covariance converges to the formula") {
    for (BaseDist base : {BaseDist::gaussian, BaseDist::scaled_uniform_mixture}) {
        for (int n : {2, 3, 5, 10}) {
            CounterRng rng(7 + n, 0);
            const long M = 200000;
            double s11 = 0, s12 = 0, s22 = 0;
            for (long k = 0; k < M; ++k) {
                const InnovationPair p = sample_innovation(n, base, 1, rng);
                s11 += p.eta1[0] * p.eta1[0];
                s12 += p.eta1[0] * p.eta2[0];
                s22 += p.eta2[0] * p.eta2[0];
            }
            const Mat want = innovation_covariance(n);
            // M^{-1/2} convergence scale, approximately 3e-3 at 2e5 draws
            CHECK(s11 / M == doctest::Approx(want(0, 0)).epsilon(0.012));
            CHECK(s12 / M == doctest::Approx(want(0, 1)).epsilon(0.015));
            CHECK(s22 / M == doctest::Approx(want(1, 1)).epsilon(0.015));
        }
    }
}

TEST_CASE("zero-diffusion chain is pure transport") {
    ModelSpec zs = make_model("zero-sigma", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 16;
    cfg.n = 2;
    CounterRng rng(1, 0);
    const PhasePoint end = simulate_chain(zs, cfg, PhasePoint(0.7, -0.2), rng);
    CHECK(end.x[0] == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(end.y[0] == doctest::Approx(-0.2 + 1.0 * 0.7).epsilon(1e-13));
}

TEST_CASE("endpoint mean telescopes exactly for constant drift") {
    ModelSpec cm = make_model("constant", {{"drift", 0.4}});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 8;
    cfg.n = 2;
    CounterRng rng(2, 0);
    const long M = 100000;
    double mx = 0;
    for (long k = 0; k < M; ++k) mx += simulate_chain(cm, cfg, PhasePoint(0.1, 0.0), rng).x[0];
    mx /= M;
    // 5 standard errors of the endpoint mean, sd = sqrt(T)
    CHECK(std::abs(mx - (0.1 + 0.4)) < 5.0 / std::sqrt(static_cast<double>(M)));
}

TEST_CASE("single-step law matches the scaled innovation covariance") {
    ModelSpec cm = make_model("constant", {});
    ChainConfig cfg;
    cfg.T = 0.2;
    cfg.N = 1;
    cfg.n = 2;
    CounterRng rng(3, 0);
    const double h = cfg.h();
    const long M = 400000;
    double sxx = 0, sxy = 0, syy = 0;
    for (long k = 0; k < M; ++k) {
        const PhasePoint e = simulate_chain(cm, cfg, kOrigin, rng);
        sxx += e.x[0] * e.x[0];
        sxy += e.x[0] * e.y[0];
        syy += e.y[0] * e.y[0];
    }
    const Mat ic = innovation_covariance(2);
    CHECK(sxx / M == doctest::Approx(h).epsilon(0.01));
    CHECK(sxy / M == doctest::Approx(h * h * ic(0, 1)).epsilon(0.015));
    CHECK(syy / M == doctest::Approx(h * h * h * ic(1, 1)).epsilon(0.015));
}

TEST_CASE("one-step density: closed form, mass, and simulation histogram") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    const double h = 0.1;
    const int n = 2;
    const QnDensity qn = qn_gaussian(n);
    const PhasePoint z(0.2, 0.1);

    SUBCASE("gaussian-base constant model equals the bivariate normal") {
        ModelSpec cm = make_model("constant", {});
        const Mat ic = innovation_covariance(n);
        const double det = ic(0, 0) * ic(1, 1) - ic(0, 1) * ic(0, 1);
        CounterRng rng(5, 0);
        for (int k = 0; k < 20; ++k) {
            const double xp = z.x[0] + std::sqrt(h) * rng.normal();
            const double yp = z.y[0] + z.x[0] * h + std::pow(h, 1.5) * rng.normal();
            const double got = one_step_density(cm, h, n, z, PhasePoint(xp, yp), qn);
            const double u = (xp - z.x[0]) / std::sqrt(h);
            const double v = (yp - z.y[0] - z.x[0] * h) / std::pow(h, 1.5);
            const double q = (ic(1, 1) * u * u - 2.0 * ic(0, 1) * u * v + ic(0, 0) * v * v) / det;
            const double want =
                std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det)) / (h * h);
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    }

    SUBCASE("normalizes to one") {
        const double sx = std::sqrt(1.1 * h), sy = std::sqrt(1.1 * h * h * h);
        const int nn = 161;
        double mass = 0.0;
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j < nn; ++j) {
                const double wx = (i == 0 || i == nn - 1) ? 0.5 : 1.0;
                const double wy = (j == 0 || j == nn - 1) ? 0.5 : 1.0;
                const double xp = z.x[0] - 8 * sx + 16 * sx * i / (nn - 1.0);
                const double yp = z.y[0] + z.x[0] * h - 8 * sy + 16 * sy * j / (nn - 1.0);
                mass += wx * wy * one_step_density(pm, h, n, z, PhasePoint(xp, yp), qn);
            }
        mass *= (16 * sx / (nn - 1.0)) * (16 * sy / (nn - 1.0));
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("matches a simulated one-step histogram") {
        ChainConfig cfg;
        cfg.T = h;
        cfg.N = 1;
        cfg.n = n;
        cfg.seed = 9;
        // bulk cells around the step mean (scales sqrt(h), h^{3/2})
        const double cx = z.x[0] + pm.drift1(z.x[0], z.y[0]) * h;
        const double cy = z.y[0] + z.x[0] * h;
        const double sx = std::sqrt(h), sy = std::pow(h, 1.5);
        const int cells = 7;
        const double half = 1.5;
        const double dx = 2 * half * sx / cells, dy = 2 * half * sy / cells;
        std::vector<long> count(cells * cells, 0);
        CounterRng rng(9, 0);
        const long M = 10000000;
        for (long k = 0; k < M; ++k) {
            double x = z.x[0], y = z.y[0];
            const double b = pm.drift1(x, y), s = pm.sigma1(x, y);
            double e1 = 0, e2 = 0;
            for (int kk = 1; kk <= n; ++kk) {
                const double xi = sample_base(BaseDist::gaussian, rng);
                e1 += xi;
                e2 += (1.0 - (kk - 1.0) / n) * xi;
            }
            e1 /= std::sqrt(2.0);
            e2 /= std::sqrt(2.0);
            const double xp = x + b * h + s * std::sqrt(h) * e1;
            const double yp = y + (x + 0.75 * b * h + s * std::sqrt(h) * e2) * h;
            const int i = static_cast<int>(std::floor((xp - (cx - half * sx)) / dx));
            const int j = static_cast<int>(std::floor((yp - (cy - half * sy)) / dy));
            if (i >= 0 && i < cells && j >= 0 && j < cells) ++count[i * cells + j];
        }
        const Rule1D& gl = gauss_legendre_ref(3);
        double sup_z = 0.0;
        for (int i = 0; i < cells; ++i)
            for (int j = 0; j < cells; ++j) {
                // cell probability by 3x3 Gauss-Legendre
                double prob = 0.0;
                for (int a = 0; a < 3; ++a)
                    for (int bb = 0; bb < 3; ++bb) {
                        const double xp = cx - half * sx + (i + 0.5 * (1 + gl.x[a])) * dx;
                        const double yp = cy - half * sy + (j + 0.5 * (1 + gl.x[bb])) * dy;
                        prob += 0.25 * gl.w[a] * gl.w[bb] *
                                one_step_density(pm, h, n, z, PhasePoint(xp, yp), qn);
                    }
                prob *= dx * dy;
                const double phat = static_cast<double>(count[i * cells + j]) / M;
                const double se = std::sqrt(prob * (1.0 - prob) / M);
                sup_z = std::max(sup_z, std::abs(phat - prob) / se);
            }
        CHECK(sup_z < 3.0);
    }
}

TEST_CASE("frozen chain moments: single step, limit, and mean") {
    ModelSpec cm = make_model("constant", {});
    SUBCASE("j = 1 reduces to the innovation covariance") {
        const FrozenChainMoments m =
            frozen_chain_moments(cm, 1, 0.1, kOrigin, PhasePoint(0.2, 0.1), 0.1, 2);
        const Mat ic = innovation_covariance(2);
        CHECK(m.vj(0, 0) == doctest::Approx(ic(0, 0)).epsilon(1e-13));
        CHECK(m.vj(0, 1) == doctest::Approx(ic(0, 1)).epsilon(1e-13));
        CHECK(m.vj(1, 1) == doctest::Approx(ic(1, 1)).epsilon(1e-13));
    }
    SUBCASE("large j approaches the Brownian block limits") {
        const FrozenChainMoments m =
            frozen_chain_moments(cm, 400, 1.0 / 400, kOrigin, PhasePoint(0.2, 0.1), 1.0, 2);
        CHECK(m.vj(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m.vj(0, 1) == doctest::Approx(0.5).epsilon(5e-3));
        CHECK(m.vj(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(5e-3));
    }
    SUBCASE("drift-free mean is the transport") {
        const FrozenChainMoments m =
            frozen_chain_moments(cm, 7, 0.05, PhasePoint(0.3, -0.1), PhasePoint(1.0, 2.0),
                                 0.35, 3);
        CHECK(m.mean[0] == doctest::Approx(0.3).epsilon(1e-14));
        CHECK(m.mean[1] == doctest::Approx(-0.1 + 0.3 * 0.35).epsilon(1e-13));
    }
    SUBCASE("gamma_{n,j} enters the drifted mean") {
        ModelSpec dm = make_model("constant", {{"drift", 1.0}});
        const int n = 2, j = 1;
        const double h = 0.25;
        const FrozenChainMoments m =
            frozen_chain_moments(dm, j, h, kOrigin, PhasePoint(0.0, 0.0), h, n);
        // gamma_{n,j} = 1 + 1/(nj) = 1.5 at j = 1, n = 2; differs from gamma_n at order h
        CHECK(m.gamma_nj == doctest::Approx(1.5).epsilon(1e-15));
        CHECK(m.mean[1] == doctest::Approx(0.5 * h * h * 1.5).epsilon(1e-13));
    }
    SUBCASE("V_j positive definite across j and n") {
        ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
        for (int n : {2, 3, 5, 10})
            for (int j : {1, 2, 5, 16, 64}) {
                const FrozenChainMoments m = frozen_chain_moments(
                    tm, j, 0.02, kOrigin, PhasePoint(0.4, -0.3), 0.02 * j, n);
                const Vec ev = sym_eigenvalues(m.vj);
                CHECK(ev.front() > 0.0);
            }
    }
}

TEST_CASE("kde of the constant chain matches the smoothed exact law") {
    ModelSpec cm = make_model("constant", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 64;
    cfg.n = 2;
    cfg.seed = 11;
    const double bx = 0.2, by = 0.1;
    GridSpec g;
    g.x_min = -1.5; g.x_max = 1.5; g.nx = 7;
    g.y_min = -0.9; g.y_max = 0.9; g.ny = 7;
    const DensityGrid kde = chain_density_kde(cm, cfg, kOrigin, g, 2000000, bx, by);
    // exact chain covariance at the endpoint (gaussian base), plus kernel
    const double T = 1.0, ht = cfg.T / (cfg.N * cfg.n);
    const double c11 = T + bx * bx;
    const double c12 = T * T / 2 + T * ht / 2;
    const double c22 = T * T * T / 3 + T * T * ht / 2 + T * ht * ht / 6 + by * by;
    const double det = c11 * c22 - c12 * c12;
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const double x = g.x_at(i), y = g.y_at(j);
            const double q = (c22 * x * x - 2 * c12 * x * y + c11 * y * y) / det;
            const double want = std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det));
            // small absolute floor for deep-tail nodes where the SE estimate
            // is itself sample-starved
            CHECK(std::abs(kde.at(i, j) - want) <= 3.0 * kde.se_at(i, j) + 1e-6);
        }
}

TEST_CASE("kde standard errors shrink like sqrt(M)") {
    ModelSpec cm = make_model("constant", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 8;
    cfg.n = 2;
    cfg.seed = 13;
    std::vector<PhasePoint> pts = {PhasePoint(0.0, 0.0)};
    const auto a = chain_kde_at_points(cm, cfg, kOrigin, pts, 200000, 0.2, 0.1);
    const auto b = chain_kde_at_points(cm, cfg, kOrigin, pts, 400000, 0.2, 0.1);
    CHECK(a[0].se / b[0].se == doctest::Approx(std::sqrt(2.0)).epsilon(0.12));
}

TEST_CASE("degenerate chain concentrates at the transport point") {
    ModelSpec zs = make_model("zero-sigma", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 4;
    cfg.n = 2;
    std::vector<PhasePoint> pts = {PhasePoint(0.7, 0.5), PhasePoint(0.0, 0.0)};
    const auto est = chain_kde_at_points(zs, cfg, PhasePoint(0.7, -0.2), pts, 20000, 0.05, 0.05);
    const double peak = 1.0 / (2.0 * M_PI * 0.05 * 0.05);
    CHECK(est[0].value == doctest::Approx(peak).epsilon(1e-10)); // mass at (0.7, 0.5)
    CHECK(est[1].value == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("discrete series at one step is the one-step density") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    ChainConfig cfg;
    cfg.T = 0.25;
    cfg.N = 1;
    cfg.n = 2;
    const QnDensity qn = qn_gaussian(2);
    CounterRng rng(15, 0);
    for (int k = 0; k < 10; ++k) {
        const PhasePoint zp(std::sqrt(0.25) * rng.normal(),
                            std::pow(0.25, 1.5) * rng.normal());
        const SeriesResult sr = discrete_parametrix_density(pm, cfg, kOrigin, zp, kQuad);
        const double want = one_step_density(pm, 0.25, 2, kOrigin, zp, qn);
        CHECK(sr.value == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("discrete series is exact for constant coefficients") {
    ModelSpec cm = make_model("constant", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 4;
    cfg.n = 2;
    const DiscreteParametrixEvaluator dev(cm, cfg, kOrigin, kQuad);
    CounterRng rng(17, 0);
    for (int k = 0; k < 8; ++k) {
        const PhasePoint zp(rng.normal(), 0.6 * rng.normal());
        const SeriesResult sr = dev.eval(zp);
        const double want = frozen_chain_density(cm, 4, 0.25, kOrigin, zp, 1.0, 2);
        CHECK(sr.value == doctest::Approx(want).epsilon(1e-10));
        for (int r = 1; r <= 4; ++r)
            CHECK(std::abs(sr.terms[r]) < 1e-12 * std::abs(want) + 1e-300);
    }
}

TEST_CASE("discrete series tracks the chain law on the perturbed model") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 2;
    cfg.n = 2;
    cfg.seed = 19;
    double bx, by;
    default_bandwidths(1.0, bx, by);
    bx *= 0.6;
    by *= 0.6;
    std::vector<PhasePoint> pts = {PhasePoint(0.1, 0.05), PhasePoint(-0.4, -0.2)};
    const auto kde = chain_kde_at_points(pm, cfg, kOrigin, pts, 1000000, bx, by);
    const DiscreteParametrixEvaluator dev(pm, cfg, kOrigin, kQuad);
    const Rule1D& gh = gauss_hermite_ref(8);
    for (size_t p = 0; p < pts.size(); ++p) {
        double smoothed = 0.0;
        for (int i = 0; i < gh.size(); ++i)
            for (int j = 0; j < gh.size(); ++j) {
                const PhasePoint w(pts[p].x[0] + std::sqrt(2.0) * bx * gh.x[i],
                                   pts[p].y[0] + std::sqrt(2.0) * by * gh.x[j]);
                smoothed += gh.w[i] * gh.w[j] / M_PI * dev.eval(w).value;
            }
        CHECK(std::abs(smoothed - kde[p].value) < 3.0 * kde[p].se);
    }
}

TEST_CASE("discrete series rejects unsupported configurations") {
    ModelSpec pm = make_model("perturbed", {});
    ChainConfig cfg;
    cfg.T = 1.0;
    cfg.N = 16;
    cfg.n = 2;
    CHECK_THROWS_AS(discrete_parametrix_density(pm, cfg, kOrigin, kOrigin, kQuad),
                    argument_error);
    cfg.N = 4;
    cfg.base = BaseDist::scaled_uniform_mixture;
    CHECK_THROWS_AS(discrete_parametrix_density(pm, cfg, kOrigin, kOrigin, kQuad),
                    unsupported_error);
}

TEST_CASE("rate experiment on the constant model keeps differences O(h)-small") {
    // With gaussian innovations the endpoint law differs from the diffusion
    // only through the O(micro-step) covariance excess; differences must stay
    // a few percent of the density scale across the ladder.
    ModelSpec cm = make_model("constant", {});
    RateOptions opt;
    opt.N_ladder = {4, 8, 16};
    opt.samples = 400000;
    opt.n = 2;
    opt.base = BaseDist::gaussian;
    opt.r_max_ref = 1;
    opt.seed = 23;
    std::vector<PhasePoint> pts = {PhasePoint(0.0, 0.1), PhasePoint(0.5, 0.18)};
    const RateReport rep = lil_rate_experiment(cm, 0.5, kOrigin, pts, opt, kQuad);
    for (const RateSample& s : rep.samples) {
        CHECK(s.diff < 0.06 * 2.2); // density scale at T = 0.5 is about 2.2
        CHECK(s.weight_fn > 0.0);
    }
    CHECK(rep.samples.size() == 6);
}

TEST_CASE("rate experiment recovers the mixture-base square-root decay") {
    ModelSpec cm = make_model("constant", {});
    RateOptions opt;
    opt.N_ladder = {4, 8, 16, 32};
    opt.samples = 1000000;
    opt.n = 2;
    opt.base = BaseDist::scaled_uniform_mixture;
    opt.r_max_ref = 1;
    opt.seed = 29;
    std::vector<PhasePoint> pts = {PhasePoint(0.35, 0.13), PhasePoint(-0.5, -0.16)};
    const RateReport rep = lil_rate_experiment(cm, 0.5, kOrigin, pts, opt, kQuad);
    CHECK(rep.slope > 0.2);
    CHECK(rep.slope < 1.0);
}

TEST_CASE("discrete two-step series equals the direct composition") {
    // at N = 2 the chain density is one explicit integral of two one-step
    // kernels; the series must reproduce it to quadrature accuracy
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    ChainConfig cc;
    cc.T = 0.5;
    cc.N = 2;
    cc.n = 2;
    const double h = cc.h();
    const QnDensity qn = qn_gaussian(2);
    const DiscreteParametrixEvaluator dev(pm, cc, kOrigin, kQuad);
    for (const PhasePoint& zp :
         {PhasePoint(0.0, 0.108), PhasePoint(0.424, 0.065), PhasePoint(-0.566, 0.022)}) {
        // wide trapezoid over the midpoint region; a hat-adapted rule is not
        // usable here because the one-step law sits on a steeper ridge
        const int nn = 401;
        const double sx = std::sqrt(1.1 * h) * 8.0;
        const double sy = std::sqrt(1.1 * h * h * h) * 13.0;
        const double cx = 0.5 * (0.0 + zp.x[0]);
        const double cy = 0.5 * (0.0 + zp.y[0] - 0.5 * zp.x[0] * h);
        double direct = 0.0;
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j < nn; ++j) {
                const double wx = (i == 0 || i == nn - 1) ? 0.5 : 1.0;
                const double wy = (j == 0 || j == nn - 1) ? 0.5 : 1.0;
                const PhasePoint w(cx - sx + 2.0 * sx * i / (nn - 1.0),
                                   cy - sy + 2.0 * sy * j / (nn - 1.0));
                direct += wx * wy * one_step_density(pm, h, 2, kOrigin, w, qn) *
                          one_step_density(pm, h, 2, w, zp, qn);
            }
        direct *= (2.0 * sx / (nn - 1.0)) * (2.0 * sy / (nn - 1.0));
        CHECK(dev.eval(zp).value == doctest::Approx(direct).epsilon(2e-4));
    }
}
