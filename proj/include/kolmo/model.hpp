#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kolmo/linalg.hpp"

namespace kolmo {

// A point of the degenerate pair: position x and integrated position y.
struct PhasePoint {
    Vec x;
    Vec y;

    PhasePoint() = default;
    PhasePoint(Vec x_in, Vec y_in) : x(std::move(x_in)), y(std::move(y_in)) {}
    // d = 1 convenience.
    PhasePoint(double x1, double y1) : x{x1}, y{y1} {}

    int dim() const { return static_cast<int>(x.size()); }
    bool finite() const;
};

enum class Smoothness { lipschitz, hoelder };

// Diffusion pair dX = b dt + sigma dW, dY = X dt, with declared ellipticity
// window for a = sigma^2 and a sup-norm bound on the coefficients.
// sigma is the symmetric square root of a by construction of the built-in
// families; user-defined callables must honor that too.
struct ModelSpec {
    int dim = 1;
    std::function<Vec(const Vec& x, const Vec& y)> drift;
    std::function<Mat(const Vec& x, const Vec& y)> diffusion_sqrt;
    double lambda_min = 1.0;
    double lambda_max = 1.0;
    double coeff_bound = 1.0;
    Smoothness smoothness = Smoothness::lipschitz;
    std::string family; // config key this spec was built from, if any

    // Scalar fast path for d = 1 simulation loops; set by make_model and
    // required to agree with the vector callables.
    std::function<double(double x, double y)> drift1;
    std::function<double(double x, double y)> sigma1;
};

struct Coefficients {
    Vec b;     // drift
    Mat sigma; // symmetric square root
    Mat a;     // sigma * sigma
};

// Evaluates (b, sigma, a) at p. Throws model_eval_error on non-finite output.
Coefficients eval_coefficients(const ModelSpec& model, const PhasePoint& p);

struct ValidationReport {
    double eig_min = 0.0;
    double eig_max = 0.0;
    double max_drift_norm = 0.0;
    double max_sigma_norm = 0.0;
    bool symmetric = true;
    bool pass = false;
    int samples = 0;
};

// Samples random points and checks the declared ellipticity window and
// coefficient bound. Advisory: failures are flagged, never thrown.
ValidationReport validate_model(const ModelSpec& model, int sample_count,
                                std::uint64_t rng_seed);

// Rank of the span of the diffusion fields and their first brackets with the
// drift field, with Jacobians by central differences. Models of this class
// under uniform ellipticity give 2d.
int hormander_rank(const ModelSpec& model, const PhasePoint& p, double fd_step = 1e-5);

// Built-in families addressable by key:
//   constant     sigma (default 1), drift (default 0)
//   trig         a = 1 + a_amp sin(y_1), b = 0
//   tanh-drift   a = 1, b = b_amp tanh(x_1)
//   perturbed    a = 1 + a_amp sin(y_1), b = b_amp tanh(x_1)
//   hoelder      a = 1 + a_amp sqrt(|sin(y_1)|), b = 0
//   zero-sigma   sigma = 0, b = 0 (degenerate transport control)
ModelSpec make_model(const std::string& family,
                     const std::map<std::string, double>& params, int dim = 1);

std::vector<std::string> model_families();

} // namespace kolmo
