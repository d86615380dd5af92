#pragma once

#include <cstdint>
#include <vector>

namespace kolmo {

struct Rule1D {
    std::vector<double> x;
    std::vector<double> w;
    int size() const { return static_cast<int>(x.size()); }
};

// Gauss-Legendre on [-1, 1], or mapped to [a, b].
Rule1D gauss_legendre(int n);
Rule1D gauss_legendre(int n, double a, double b);

// Gauss-Hermite for weight exp(-x^2) on the real line (physicists' form).
Rule1D gauss_hermite(int n);

// Gauss-Jacobi for weight (1-x)^{-1/2} on [-1, 1].
Rule1D gauss_jacobi_sqrt(int n);

// Process-lifetime cached rules; node construction is Newton-iterative and
// far too slow to repeat inside convolution loops.
const Rule1D& gauss_legendre_ref(int n);
const Rule1D& gauss_hermite_ref(int n);
const Rule1D& gauss_jacobi_sqrt_ref(int n);

enum class TimeRule {
    substitution_w2,           // u = t(1 - v^2), plain Gauss-Legendre in v
    gauss_jacobi_sqrt_singularity, // explicit (t-u)^{-1/2} weight factorization
};

enum class SpaceRule {
    gauss_hermite_adapted,
    monte_carlo,
};

// Discretization controls for the space-time convolutions.
struct QuadratureSpec {
    int time_nodes = 12;
    TimeRule time_rule = TimeRule::substitution_w2;
    int space_nodes_per_dim = 8;
    SpaceRule space_rule = SpaceRule::gauss_hermite_adapted;
    int mc_samples = 4096;
    std::uint64_t seed = 0;

    void validate() const;
};

// Nodes u_i in (0, t) and weights for integrals of the form
// int_0^t f(u) du where f carries an integrable (t-u)^{-1/2} blow-up.
// With gauss_jacobi_sqrt_singularity the returned weights already include
// the factor sqrt(t-u_i) removed from the integrand, i.e. the rule expects
// the caller to pass the raw f in both cases.
Rule1D singular_time_rule(double t, const QuadratureSpec& quad);

// Chebyshev-Lobatto nodes on [a, b], ascending.
std::vector<double> cheb_lobatto(int n, double a, double b);

// Barycentric interpolation on Chebyshev-Lobatto nodes.
struct ChebInterp1D {
    std::vector<double> nodes;
    std::vector<double> bw; // barycentric weights

    explicit ChebInterp1D(std::vector<double> nodes_in);
    // Interpolation coefficients for evaluation point t: value = sum c_i f_i.
    void coefficients(double t, std::vector<double>& c) const;
};

} // namespace kolmo
