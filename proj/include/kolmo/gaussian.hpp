#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kolmo/linalg.hpp"
#include "kolmo/model.hpp"
#include "kolmo/quadrature.hpp"

namespace kolmo {

// Two-time-scale Gaussian envelope
//   hat_p(c, t, z, z') = c^d 3^{d/2} / (2 pi t^2)^d
//       * exp(-c [ |x'-x|^2/(4t) + 3 |y'-y-(x+x')t/2|^2/t^3 ]).
// Closed under Chapman-Kolmogorov for every c > 0.
double hat_p(double c, int d, double t, const PhasePoint& from, const PhasePoint& to);

// Scalar d = 1 form for hot loops.
inline double hat_p1(double c, double t, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0;
    const double dy = y1 - y0 - 0.5 * (x0 + x1) * t;
    const double expo = -c * (dx * dx / (4.0 * t) + 3.0 * dy * dy / (t * t * t));
    return c * 1.7320508075688772 / (6.283185307179586 * t * t) * std::exp(expo);
}

// Quadratic form -(1/2 w'Pw - q'w + c0) representing a log-Gaussian exponent
// in the stacked variable w = (w_x, w_y). Summable across factors.
struct QuadForm {
    Mat P;
    Vec q;
    double c0 = 0.0;

    QuadForm() = default;
    explicit QuadForm(int dims) : P(dims, dims), q(static_cast<size_t>(dims), 0.0) {}
    // Adds alpha * |A w - m|^2 to the (negated) exponent.
    void add_term(double alpha, const Mat& A, const Vec& m);
    QuadForm& operator+=(const QuadForm& other);
};

// Exponent of hat_p(c, t, z0, w) as a quadratic in the target w.
QuadForm hat_source_form(double c, int d, double t, const PhasePoint& z0);
// Exponent of hat_p(c, s, w, z1) as a quadratic in the source w.
QuadForm hat_target_form(double c, int d, double s, const PhasePoint& z1);

// Integration nodes for int f(w) dw where f decays like exp(-quadratic).
// Gauss-Hermite tensor nodes in the Cholesky frame of the quadratic, or
// importance samples from the matching Gaussian.
struct SpaceNodes {
    std::vector<Vec> w;
    Vec weight;
    int size() const { return static_cast<int>(w.size()); }
};

SpaceNodes adapted_space_nodes(const QuadForm& form, const QuadratureSpec& quad,
                               std::uint64_t mc_stream = 0);

// Flat two-dimensional variant (d = 1) without per-node allocations.
struct SpaceNodes1D {
    std::vector<double> wx, wy, weight;
    int size() const { return static_cast<int>(wx.size()); }
};

SpaceNodes1D adapted_space_nodes_1d(const QuadForm& form, const QuadratureSpec& quad,
                                    std::uint64_t mc_stream = 0);

struct CkDefect {
    double defect = 0.0;       // relative Chapman-Kolmogorov defect
    double value_split = 0.0;  // quadrature of the s / t-s composition
    double value_direct = 0.0; // hat_p at time t
    bool converged = true;     // halved rule agrees
};

// Relative semigroup defect of hat_p under the given quadrature, 0 < s < t.
CkDefect chapman_kolmogorov_defect(double c, int d, double s, double t,
                                   const PhasePoint& z0, const PhasePoint& z1,
                                   const QuadratureSpec& quad);

// Mean and covariance of the coefficient-frozen pair over [0, t], with the
// covariance kept in blocks int a~, int (t-s) a~, int (t-s)^2 a~.
struct GaussianMoments {
    Vec mean;     // 2d
    Mat cov;      // 2d x 2d
    Mat block_xx; // int_0^t a~_s ds
    Mat block_xy; // int_0^t (t-s) a~_s ds
    Mat block_yy; // int_0^t (t-s)^2 a~_s ds
};

GaussianMoments frozen_moments(const ModelSpec& model, double t, const PhasePoint& start,
                               const PhasePoint& freeze, const QuadratureSpec& quad);

// Frozen-process Gaussian density with precomputed covariance factorization.
// The covariance depends on (t, freeze) only, so one instance serves every
// (start, target) pair, which is what the convolution loops need.
class FrozenKernel {
  public:
    FrozenKernel(const ModelSpec& model, double t, const PhasePoint& freeze,
                 int time_nodes = 32);

    double density(const PhasePoint& start, const PhasePoint& target) const;
    // Derivatives in the start-x argument.
    Vec grad_x(const PhasePoint& start, const PhasePoint& target) const;
    Mat hess_x(const PhasePoint& start, const PhasePoint& target) const;

    struct Derivs {
        double density;
        Vec grad;
        Mat hess;
    };
    // Density, gradient and Hessian from a single factor-solve pass.
    Derivs derivs(const PhasePoint& start, const PhasePoint& target) const;

    Vec mean(const PhasePoint& start) const;
    const GaussianMoments& moments_blocks() const { return mom_; }
    double t() const { return t_; }
    const Vec& frozen_drift() const { return b_frz_; }
    const Mat& frozen_a0() const { return a0_; } // a(x', y'-x't), the s=0 coefficient

  private:
    struct Core {
        double q_form;
        Vec g1, g2; // block solves of Sigma^{-1} u
    };
    Core core(const PhasePoint& start, const PhasePoint& target) const;

    int d_;
    double t_;
    Vec b_frz_;
    Mat a0_;
    GaussianMoments mom_;
    Mat chol_xx_;   // cholesky of block_xx
    Mat gain_;      // block_xx^{-1} block_xy
    Mat chol_schur_; // cholesky of block_yy - block_xy' gain
    Mat j_quad_;    // [I tI] Sigma^{-1} [I; tI], for the Hessian
    double log_norm_;
};

// Allocation-free scalar twin of FrozenKernel for d = 1 convolution loops.
// Uses the model's scalar callables; covariance blocks collapse to scalars.
class FrozenKernel1D {
  public:
    FrozenKernel1D(const ModelSpec& model, double t, double fx, double fy,
                   int time_nodes = 32);

    double density(double sx, double sy, double tx, double ty) const {
        double g1, g2;
        return core(sx, sy, tx, ty, g1, g2);
    }
    struct D {
        double density, grad, hess;
    };
    D derivs(double sx, double sy, double tx, double ty) const {
        D d;
        double g1, g2;
        d.density = core(sx, sy, tx, ty, g1, g2);
        const double v = g1 + t_ * g2;
        d.grad = d.density * v;
        d.hess = d.density * (v * v - j_quad_);
        return d;
    }

    double b_frz() const { return b_; }
    double a_at_zero() const { return a0_; } // a(x', y' - x' t)
    double block_xx() const { return b1_; }
    double block_xy() const { return b2_; }
    double block_yy() const { return b3_; }

  private:
    double core(double sx, double sy, double tx, double ty, double& g1, double& g2) const {
        const double m1 = sx + b_ * t_;
        const double m2 = sy + sx * t_ + 0.5 * b_ * t_ * t_;
        const double u1 = tx - m1;
        const double u2 = ty - m2;
        const double resid = u2 - gain_ * u1;
        g2 = resid / schur_;
        g1 = u1 / b1_ - gain_ * g2;
        const double q = u1 * u1 / b1_ + resid * resid / schur_;
        return std::exp(log_norm_ - 0.5 * q);
    }

    double t_, b_, a0_;
    double b1_, b2_, b3_;
    double gain_, schur_, j_quad_, log_norm_;
};

double frozen_density(const ModelSpec& model, double t, const PhasePoint& start,
                      const PhasePoint& freeze, const PhasePoint& target,
                      const QuadratureSpec& quad);

// Derivative of order alpha (multi-index over the x coordinates, |alpha| <= 2)
// of the frozen density in its start-x argument.
double frozen_density_dx(const ModelSpec& model, double t, const PhasePoint& start,
                         const PhasePoint& freeze, const PhasePoint& target,
                         const std::vector<int>& alpha, const QuadratureSpec& quad);

} // namespace kolmo
