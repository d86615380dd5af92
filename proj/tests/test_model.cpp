#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kolmo/errors.hpp"
#include "kolmo/model.hpp"
#include "kolmo/rng.hpp"

using namespace kolmo;

TEST_CASE("eval_coefficients on the built-in families") {
    ModelSpec cm = make_model("constant", {});
    const Coefficients c = eval_coefficients(cm, PhasePoint(0.7, -1.3));
    CHECK(c.b[0] == 0.0);
    CHECK(c.sigma(0, 0) == 1.0);
    CHECK(c.a(0, 0) == 1.0);

    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    const Coefficients t0 = eval_coefficients(tm, PhasePoint(0.0, 0.0));
    CHECK(t0.a(0, 0) == doctest::Approx(1.0).epsilon(1e-15)); // sin(0) = 0

    ModelSpec dm = make_model("tanh-drift", {{"b_amp", 1.0}});
    const Coefficients d1 = eval_coefficients(dm, PhasePoint(1.0, 0.0));
    CHECK(d1.b[0] == doctest::Approx(std::tanh(1.0)).epsilon(1e-12)); // 0.76159...
}

TEST_CASE("eval_coefficients is pure and bit-stable") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    const PhasePoint p(0.37, -0.91);
    const Coefficients a = eval_coefficients(pm, p);
    const Coefficients b = eval_coefficients(pm, p);
    CHECK(a.b[0] == b.b[0]);
    CHECK(a.sigma(0, 0) == b.sigma(0, 0));
    CHECK(a.a(0, 0) == b.a(0, 0));
}

TEST_CASE("eval_coefficients rejects bad points") {
    ModelSpec cm = make_model("constant", {});
    PhasePoint bad(std::nan(""), 0.0);
    CHECK_THROWS_AS(eval_coefficients(cm, bad), argument_error);
}

TEST_CASE("validate_model passes matching declarations") {
    ModelSpec cm = make_model("constant", {});
    const ValidationReport rep = validate_model(cm, 50, 42);
    CHECK(rep.pass);
    CHECK(rep.eig_min == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep.eig_max == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("validate_model observes the trig ellipticity window") {
    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    const ValidationReport rep = validate_model(tm, 2000, 7);
    CHECK(rep.pass);
    CHECK(rep.eig_min >= 0.5 - 1e-12);
    CHECK(rep.eig_max <= 1.5 + 1e-12);
    // the sampled range actually explores the window
    CHECK(rep.eig_min < 0.55);
    CHECK(rep.eig_max > 1.45);
}

TEST_CASE("validate_model flags an optimistic declaration") {
    ModelSpec tm = make_model("trig", {{"a_amp", 0.5}});
    tm.lambda_min = 0.9; // 1 + 0.5 sin(y) attains 0.5 < 0.9
    const ValidationReport rep = validate_model(tm, 2000, 7);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("hormander_rank for flat and degenerate fields") {
    ModelSpec cm = make_model("constant", {});
    CHECK(hormander_rank(cm, PhasePoint(0.0, 0.0)) == 2);

    ModelSpec cm2 = make_model("constant", {}, 2);
    PhasePoint p2(Vec{0.3, -0.2}, Vec{0.1, 0.4});
    CHECK(hormander_rank(cm2, p2) == 4);

    // sigma column identically zero: the span cannot exceed the remaining columns
    ModelSpec zs = make_model("zero-sigma", {});
    CHECK(hormander_rank(zs, PhasePoint(0.5, 0.5)) < 2);
}

TEST_CASE("hormander_rank equals 2d at random points for UE models") {
    CounterRng rng(11, 0);
    for (const char* family : {"constant", "trig", "perturbed", "tanh-drift"}) {
        ModelSpec m = make_model(family, {});
        for (int k = 0; k < 100; ++k) {
            PhasePoint p(4.0 * (rng.uniform() - 0.5), 4.0 * (rng.uniform() - 0.5));
            CHECK(hormander_rank(m, p) == 2);
        }
    }
}

TEST_CASE("hormander_rank rejects degenerate fd steps") {
    ModelSpec cm = make_model("constant", {});
    CHECK_THROWS_AS(hormander_rank(cm, PhasePoint(0.0, 0.0), 0.0), argument_error);
    CHECK_THROWS_AS(hormander_rank(cm, PhasePoint(0.0, 0.0), 1.0), argument_error);
}

TEST_CASE("a stays positive definite at sampled points") {
    CounterRng rng(3, 0);
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    for (int k = 0; k < 200; ++k) {
        PhasePoint p(6.0 * (rng.uniform() - 0.5), 6.0 * (rng.uniform() - 0.5));
        const Coefficients c = eval_coefficients(pm, p);
        const Vec ev = sym_eigenvalues(c.a);
        CHECK(ev.front() >= pm.lambda_min - 1e-12);
    }
}

TEST_CASE("unknown family is a config error") {
    CHECK_THROWS_AS(make_model("brownian-bridge", {}), config_error);
}

TEST_CASE("scalar fast path agrees with the vector interface") {
    ModelSpec pm = make_model("perturbed", {{"a_amp", 0.1}, {"b_amp", 0.2}});
    CounterRng rng(5, 0);
    for (int k = 0; k < 50; ++k) {
        const double x = 3.0 * (rng.uniform() - 0.5);
        const double y = 3.0 * (rng.uniform() - 0.5);
        const Coefficients c = eval_coefficients(pm, PhasePoint(x, y));
        CHECK(pm.drift1(x, y) == c.b[0]);
        CHECK(pm.sigma1(x, y) == c.sigma(0, 0));
    }
}
