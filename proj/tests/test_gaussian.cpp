#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kolmo/errors.hpp"
#include "kolmo/gaussian.hpp"
#include "kolmo/model.hpp"
#include "kolmo/rng.hpp"

using namespace kolmo;

namespace {
const QuadratureSpec kQuad{};
const PhasePoint kOrigin(0.0, 0.0);
}

TEST_CASE("hat_p closed-form values") {
    // c = 1, d = 1, t = 1, diagonal start and end
    CHECK(hat_p(1.0, 1, 1.0, kOrigin, kOrigin) ==
          doctest::Approx(std::sqrt(3.0) / (2.0 * M_PI)).epsilon(1e-14));
    // exponent vanishes on the transport line y' = y + (x + x') t / 2
    for (double t : {0.3, 1.0, 2.5}) {
        const PhasePoint from(1.0, 0.0), to(1.0, t);
        const double norm = 2.0 * std::sqrt(3.0) / (2.0 * M_PI * t * t); // c = 2
        CHECK(hat_p(2.0, 1, t, from, to) == doctest::Approx(norm).epsilon(1e-13));
    }
    CHECK_THROWS_AS(hat_p(1.0, 1, 0.0, kOrigin, kOrigin), argument_error);
    CHECK_THROWS_AS(hat_p(1.0, 1, -1.0, kOrigin, kOrigin), argument_error);
}

TEST_CASE("hat_p two-time-scale homogeneity") {
    // (x, y, t) -> (rho x, rho^3 y, rho^2 t) rescales the density by rho^{-4d}
    CounterRng rng(17, 0);
    for (int k = 0; k < 10; ++k) {
        const double c = 0.5 + 2.0 * rng.uniform();
        const double t = 0.2 + rng.uniform();
        const double rho = 0.5 + rng.uniform();
        const PhasePoint z0(rng.uniform() - 0.5, rng.uniform() - 0.5);
        const PhasePoint z1(rng.uniform() - 0.5, rng.uniform() - 0.5);
        const PhasePoint z0s(rho * z0.x[0], rho * rho * rho * z0.y[0]);
        const PhasePoint z1s(rho * z1.x[0], rho * rho * rho * z1.y[0]);
        const double lhs = hat_p(c, 1, rho * rho * t, z0s, z1s);
        const double rhs = hat_p(c, 1, t, z0, z1) * std::pow(rho, -4.0);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("chapman-kolmogorov defect is quadrature-level small") {
    const CkDefect d =
        chapman_kolmogorov_defect(1.0, 1, 0.5, 1.0, kOrigin, kOrigin, kQuad);
    CHECK(d.defect < 1e-6);
    CHECK(d.converged);
}

TEST_CASE("chapman-kolmogorov defect across a (c, t, s) lattice") {
    const PhasePoint z1(0.3, 0.1);
    for (double c : {0.5, 1.0, 2.0})
        for (double t : {0.25, 0.5, 1.0})
            for (double f : {0.25, 0.5, 0.75}) {
                const CkDefect d =
                    chapman_kolmogorov_defect(c, 1, f * t, t, kOrigin, z1, kQuad);
                CHECK(d.defect < 1e-5);
            }
}

TEST_CASE("chapman-kolmogorov rejects degenerate splits") {
    CHECK_THROWS_AS(chapman_kolmogorov_defect(1.0, 1, 0.0, 1.0, kOrigin, kOrigin, kQuad),
                    argument_error);
    CHECK_THROWS_AS(chapman_kolmogorov_defect(1.0, 1, 1.0, 1.0, kOrigin, kOrigin, kQuad),
                    argument_error);
}

TEST_CASE("defect symmetric under s <-> t-s on the transport line") {
    CounterRng rng(23, 0);
    for (int k = 0; k < 10; ++k) {
        const double t = 0.4 + rng.uniform();
        const double f = 0.15 + 0.3 * rng.uniform();
        const double x0 = rng.uniform() - 0.5, x1 = rng.uniform() - 0.5;
        const double y0 = rng.uniform() - 0.5;
        const PhasePoint z0(x0, y0);
        const PhasePoint z1(x1, y0 + 0.5 * (x0 + x1) * t);
        const CkDefect a = chapman_kolmogorov_defect(1.0, 1, f * t, t, z0, z1, kQuad);
        const CkDefect b =
            chapman_kolmogorov_defect(1.0, 1, (1.0 - f) * t, t, z0, z1, kQuad);
        CHECK(std::abs(a.defect - b.defect) < 1e-10);
    }
}

TEST_CASE("frozen_moments of the constant model reproduce the exact blocks") {
    ModelSpec cm = make_model("constant", {});
    for (double t : {0.25, 1.0}) {
        const GaussianMoments m = frozen_moments(cm, t, kOrigin, kOrigin, kQuad);
        CHECK(m.block_xx(0, 0) == doctest::Approx(t).epsilon(1e-14));
        CHECK(m.block_xy(0, 0) == doctest::Approx(t * t / 2.0).epsilon(1e-14));
        CHECK(m.block_yy(0, 0) == doctest::Approx(t * t * t / 3.0).epsilon(1e-14));
        CHECK(m.mean[0] == 0.0);
        CHECK(m.mean[1] == 0.0);
    }
}

TEST_CASE("frozen_moments mean with constant drift") {
    ModelSpec cm = make_model("constant", {{"drift", 0.7}});
    const double t = 0.6;
    const PhasePoint start(0.2, -0.4);
    const GaussianMoments m = frozen_moments(cm, t, start, PhasePoint(1.0, 1.0), kQuad);
    CHECK(m.mean[0] == doctest::Approx(0.2 + 0.7 * t).epsilon(1e-14));
    CHECK(m.mean[1] == doctest::Approx(-0.4 + 0.2 * t + 0.7 * t * t / 2.0).epsilon(1e-14));
}

TEST_CASE("frozen_moments against a fine Riemann-sum oracle") {
    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    const double t = 0.5;
    const PhasePoint freeze(1.0, 1.0);
    // oracle: midpoint Riemann sum with 1e6 panels of a~_s = 1 + 0.5 sin(1 - (t-s))
    const int n = 1000000;
    double b1 = 0.0, b2 = 0.0, b3 = 0.0;
    for (int k = 0; k < n; ++k) {
        const double s = (k + 0.5) * t / n;
        const double rem = t - s;
        const double a = 1.0 + 0.5 * std::sin(freeze.y[0] - freeze.x[0] * rem);
        b1 += a;
        b2 += rem * a;
        b3 += rem * rem * a;
    }
    b1 *= t / n;
    b2 *= t / n;
    b3 *= t / n;
    const GaussianMoments m = frozen_moments(tm, t, kOrigin, freeze, kQuad);
    CHECK(m.block_xx(0, 0) == doctest::Approx(b1).epsilon(1e-8));
    CHECK(m.block_xy(0, 0) == doctest::Approx(b2).epsilon(1e-8));
    CHECK(m.block_yy(0, 0) == doctest::Approx(b3).epsilon(1e-8));
}

TEST_CASE("frozen covariance dominates the reference form") {
    // <Sigma_t Z, Z> >= (lambda_min / 2) <C_t Z, Z> for random Z
    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    const double t = 0.7;
    const GaussianMoments m = frozen_moments(tm, t, kOrigin, PhasePoint(0.3, -0.6), kQuad);
    CounterRng rng(9, 0);
    for (int k = 0; k < 100; ++k) {
        Vec z{rng.normal(), rng.normal()};
        const double lhs = m.cov(0, 0) * z[0] * z[0] + 2.0 * m.cov(0, 1) * z[0] * z[1] +
                           m.cov(1, 1) * z[1] * z[1];
        const double ref = t * z[0] * z[0] + t * t * z[0] * z[1] +
                           t * t * t / 3.0 * z[1] * z[1];
        CHECK(lhs >= 0.5 * tm.lambda_min * ref - 1e-12);
    }
}

TEST_CASE("frozen_density constant-model closed form") {
    ModelSpec cm = make_model("constant", {});
    // det C_1 = 1/12, center value = sqrt(3)/pi
    CHECK(frozen_density(cm, 1.0, kOrigin, kOrigin, kOrigin, kQuad) ==
          doctest::Approx(std::sqrt(3.0) / M_PI).epsilon(1e-13));
}

TEST_CASE("frozen_density equals the Kolmogorov gaussian on a grid") {
    ModelSpec cm = make_model("constant", {});
    for (double t : {0.25, 1.0}) {
        const double sx = std::sqrt(t), sy = std::sqrt(t * t * t / 3.0);
        for (int i = 0; i < 21; ++i) {
            for (int j = 0; j < 21; ++j) {
                const double x = -4.0 * sx + 8.0 * sx * i / 20.0;
                const double y = -4.0 * sy + 8.0 * sy * j / 20.0;
                const double got = frozen_density(cm, t, kOrigin, kOrigin,
                                                  PhasePoint(x, y), kQuad);
                // exact bivariate gaussian with cov [[t, t^2/2], [t^2/2, t^3/3]]
                const double det = t * t * t * t / 12.0;
                const double q = (t * t * t / 3.0 * x * x - t * t * x * y + t * y * y) / det;
                const double want = std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det));
                CHECK(got == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("frozen_density normalizes over the target grid") {
    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    const double t = 0.5;
    const PhasePoint freeze(0.4, 0.2);
    const double sx = std::sqrt(1.5 * t), sy = std::sqrt(1.5 * t * t * t / 3.0);
    const int n = 161;
    double mass = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double wx = (i == 0 || i == n - 1) ? 0.5 : 1.0;
            const double wy = (j == 0 || j == n - 1) ? 0.5 : 1.0;
            const double x = -6.0 * sx + 12.0 * sx * i / (n - 1.0);
            const double y = 0.5 * x * t - 6.0 * sy + 12.0 * sy * j / (n - 1.0);
            mass += wx * wy *
                    frozen_density(tm, t, kOrigin, freeze, PhasePoint(x, y), kQuad);
        }
    mass *= (12.0 * sx / (n - 1.0)) * (12.0 * sy / (n - 1.0));
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("frozen_density sits under twice the unit envelope") {
    // exponent comparison: p~ <= 2 hat_p(1), with ratio exactly 2 at the center
    ModelSpec cm = make_model("constant", {});
    const double t = 0.8;
    const PhasePoint center(0.0, 0.0);
    const double ratio_center = frozen_density(cm, t, kOrigin, kOrigin, center, kQuad) /
                                hat_p(1.0, 1, t, kOrigin, center);
    CHECK(ratio_center == doctest::Approx(2.0).epsilon(1e-12));
    CounterRng rng(31, 0);
    for (int k = 0; k < 200; ++k) {
        const PhasePoint z1(2.0 * (rng.uniform() - 0.5), 1.0 * (rng.uniform() - 0.5));
        const double ratio = frozen_density(cm, t, kOrigin, kOrigin, z1, kQuad) /
                             hat_p(1.0, 1, t, kOrigin, z1);
        CHECK(ratio <= 2.0 * (1.0 + 1e-12));
    }
}

TEST_CASE("frozen_density_dx order zero reduces to the density") {
    ModelSpec pm = make_model("perturbed", {});
    const PhasePoint start(0.1, 0.2), freeze(0.3, -0.1), target(0.4, 0.1);
    CHECK(frozen_density_dx(pm, 0.5, start, freeze, target, {0}, kQuad) ==
          frozen_density(pm, 0.5, start, freeze, target, kQuad));
}

TEST_CASE("odd derivative vanishes at the gaussian mode") {
    ModelSpec cm = make_model("constant", {});
    // target at the mean of the frozen law started from the origin
    const PhasePoint target(0.0, 0.0);
    CHECK(frozen_density_dx(cm, 1.0, kOrigin, kOrigin, target, {1}, kQuad) ==
          doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("derivatives match central finite differences") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    CounterRng rng(41, 0);
    for (int k = 0; k < 20; ++k) {
        const double t = 0.2 + 0.6 * rng.uniform();
        const PhasePoint start(rng.uniform() - 0.5, rng.uniform() - 0.5);
        const PhasePoint freeze(rng.uniform() - 0.5, rng.uniform() - 0.5);
        // target near the transport point so values are well-scaled
        const PhasePoint target(freeze.x[0],
                                start.y[0] + 0.5 * (start.x[0] + freeze.x[0]) * t);
        const double eps = 1e-4;
        auto at = [&](double dx) {
            PhasePoint s2(start.x[0] + dx, start.y[0]);
            return frozen_density(pm, t, s2, freeze, target, kQuad);
        };
        const double g = frozen_density_dx(pm, t, start, freeze, target, {1}, kQuad);
        const double g_fd = (at(eps) - at(-eps)) / (2.0 * eps);
        CHECK(g == doctest::Approx(g_fd).epsilon(1e-5).scale(std::abs(g) + 1.0));
        const double h = frozen_density_dx(pm, t, start, freeze, target, {2}, kQuad);
        const double h_fd = (at(eps) - 2.0 * at(0.0) + at(-eps)) / (eps * eps);
        CHECK(h == doctest::Approx(h_fd).epsilon(1e-5).scale(std::abs(h) + 1.0));
    }
}

TEST_CASE("derivative order above two is unsupported") {
    ModelSpec cm = make_model("constant", {});
    CHECK_THROWS_AS(frozen_density_dx(cm, 1.0, kOrigin, kOrigin, kOrigin, {3}, kQuad),
                    unsupported_error);
}

TEST_CASE("non-finite coefficients raise a model evaluation error") {
    ModelSpec bad = make_model("constant", {});
    bad.drift = [](const Vec& x, const Vec&) {
        return Vec{std::sqrt(x[0])}; // NaN for negative positions
    };
    bad.drift1 = [](double x, double) { return std::sqrt(x); };
    CHECK_THROWS_AS(eval_coefficients(bad, PhasePoint(-1.0, 0.0)), model_eval_error);
}

TEST_CASE("degenerate diffusion makes the frozen covariance singular") {
    ModelSpec zs = make_model("zero-sigma", {});
    CHECK_THROWS_AS(
        frozen_density(zs, 0.5, kOrigin, kOrigin, PhasePoint(0.1, 0.1), kQuad),
        conditioning_error);
}

TEST_CASE("frozen density factorizes across coordinates at d = 2") {
    ModelSpec cm2 = make_model("constant", {}, 2);
    const PhasePoint o2(Vec{0.0, 0.0}, Vec{0.0, 0.0});
    const double got = frozen_density(cm2, 1.0, o2, o2, o2, kQuad);
    const double one_d = std::sqrt(3.0) / M_PI;
    CHECK(got == doctest::Approx(one_d * one_d).epsilon(1e-12));
    // off-center product structure
    const PhasePoint tgt(Vec{0.4, -0.2}, Vec{0.1, 0.3});
    ModelSpec cm1 = make_model("constant", {});
    const double fx = frozen_density(cm1, 1.0, kOrigin, kOrigin, PhasePoint(0.4, 0.1), kQuad);
    const double fy = frozen_density(cm1, 1.0, kOrigin, kOrigin, PhasePoint(-0.2, 0.3), kQuad);
    CHECK(frozen_density(cm2, 1.0, o2, o2, tgt, kQuad) ==
          doctest::Approx(fx * fy).epsilon(1e-12));
}
