#include "kolmo/gaussian.hpp"

#include <cmath>

#include "kolmo/errors.hpp"
#include "kolmo/rng.hpp"

namespace kolmo {

double hat_p(double c, int d, double t, const PhasePoint& from, const PhasePoint& to) {
    if (!(t > 0.0)) throw argument_error("hat_p: t must be positive");
    if (!(c > 0.0)) throw argument_error("hat_p: c must be positive");
    if (from.dim() != d || to.dim() != d) throw argument_error("hat_p: dimension mismatch");
    double qx = 0.0, qy = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dx = to.x[i] - from.x[i];
        const double dy = to.y[i] - from.y[i] - 0.5 * (from.x[i] + to.x[i]) * t;
        qx += dx * dx;
        qy += dy * dy;
    }
    const double expo = -c * (qx / (4.0 * t) + 3.0 * qy / (t * t * t));
    const double norm = std::pow(c * std::sqrt(3.0) / (2.0 * M_PI * t * t), d);
    return norm * std::exp(expo);
}

void QuadForm::add_term(double alpha, const Mat& A, const Vec& m) {
    // alpha |Aw - m|^2 = 1/2 w'(2a A'A)w - (2a A'm)'w + a|m|^2
    const int dims = P.rows;
    for (int i = 0; i < dims; ++i)
        for (int j = 0; j < dims; ++j) {
            double s = 0.0;
            for (int r = 0; r < A.rows; ++r) s += A(r, i) * A(r, j);
            P(i, j) += 2.0 * alpha * s;
        }
    for (int i = 0; i < dims; ++i) {
        double s = 0.0;
        for (int r = 0; r < A.rows; ++r) s += A(r, i) * m[r];
        q[i] += 2.0 * alpha * s;
    }
    c0 += alpha * dot(m, m);
}

QuadForm& QuadForm::operator+=(const QuadForm& other) {
    P = P + other.P;
    for (size_t i = 0; i < q.size(); ++i) q[i] += other.q[i];
    c0 += other.c0;
    return *this;
}

QuadForm hat_source_form(double c, int d, double t, const PhasePoint& z0) {
    QuadForm f(2 * d);
    Mat ax(d, 2 * d);
    for (int i = 0; i < d; ++i) ax(i, i) = 1.0;
    f.add_term(c / (4.0 * t), ax, z0.x);
    Mat ay(d, 2 * d);
    Vec my(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        ay(i, i) = -0.5 * t;
        ay(i, d + i) = 1.0;
        my[i] = z0.y[i] + 0.5 * z0.x[i] * t;
    }
    f.add_term(3.0 * c / (t * t * t), ay, my);
    return f;
}

QuadForm hat_target_form(double c, int d, double s, const PhasePoint& z1) {
    QuadForm f(2 * d);
    Mat ax(d, 2 * d);
    for (int i = 0; i < d; ++i) ax(i, i) = 1.0;
    f.add_term(c / (4.0 * s), ax, z1.x);
    Mat ay(d, 2 * d);
    Vec my(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        ay(i, i) = 0.5 * s;
        ay(i, d + i) = 1.0;
        my[i] = z1.y[i] - 0.5 * z1.x[i] * s;
    }
    f.add_term(3.0 * c / (s * s * s), ay, my);
    return f;
}

SpaceNodes adapted_space_nodes(const QuadForm& form, const QuadratureSpec& quad,
                               std::uint64_t mc_stream) {
    const int dims = form.P.rows;
    const Mat L = cholesky(form.P);
    const Vec center = chol_solve(L, form.q);
    SpaceNodes nodes;

    if (quad.space_rule == SpaceRule::gauss_hermite_adapted) {
        const Rule1D& gh = gauss_hermite_ref(quad.space_nodes_per_dim);
        const int n = gh.size();
        int total = 1;
        for (int k = 0; k < dims; ++k) total *= n;
        nodes.w.reserve(static_cast<size_t>(total));
        nodes.weight.reserve(static_cast<size_t>(total));
        const double det_l = [&] {
            double p = 1.0;
            for (int i = 0; i < dims; ++i) p *= L(i, i);
            return p;
        }();
        const double scale = std::pow(2.0, 0.5 * dims) / det_l;
        std::vector<int> idx(static_cast<size_t>(dims), 0);
        Vec xi(static_cast<size_t>(dims));
        for (int flat = 0; flat < total; ++flat) {
            int rem = flat;
            double wprod = 1.0, xi2 = 0.0;
            for (int k = 0; k < dims; ++k) {
                idx[k] = rem % n;
                rem /= n;
                xi[k] = gh.x[idx[k]];
                wprod *= gh.w[idx[k]];
                xi2 += xi[k] * xi[k];
            }
            // w = center + sqrt(2) L^{-T} xi
            Vec y = solve_upper_from_lower(L, xi);
            Vec w(center);
            for (int k = 0; k < dims; ++k) w[k] += std::sqrt(2.0) * y[k];
            nodes.w.push_back(std::move(w));
            nodes.weight.push_back(scale * wprod * std::exp(xi2));
        }
    } else {
        CounterRng rng(quad.seed, mc_stream);
        const int m = quad.mc_samples;
        const double det_l = [&] {
            double p = 1.0;
            for (int i = 0; i < dims; ++i) p *= L(i, i);
            return p;
        }();
        const double log_norm = -0.5 * dims * std::log(2.0 * M_PI) + std::log(det_l);
        nodes.w.reserve(static_cast<size_t>(m));
        nodes.weight.reserve(static_cast<size_t>(m));
        Vec z(static_cast<size_t>(dims));
        for (int s = 0; s < m; ++s) {
            double z2 = 0.0;
            for (int k = 0; k < dims; ++k) {
                z[k] = rng.normal();
                z2 += z[k] * z[k];
            }
            Vec y = solve_upper_from_lower(L, z);
            Vec w(center);
            for (int k = 0; k < dims; ++k) w[k] += y[k];
            nodes.w.push_back(std::move(w));
            nodes.weight.push_back(std::exp(-log_norm + 0.5 * z2) / m);
        }
    }
    return nodes;
}

SpaceNodes1D adapted_space_nodes_1d(const QuadForm& form, const QuadratureSpec& quad,
                                    std::uint64_t mc_stream) {
    // Specialized 2x2 completion of the square; same contract as the generic
    // version but with flat outputs.
    const double p00 = form.P(0, 0), p01 = form.P(0, 1), p11 = form.P(1, 1);
    const double l00 = std::sqrt(p00);
    const double l10 = p01 / l00;
    const double l11_sq = p11 - l10 * l10;
    if (!(l00 > 0.0) || !(l11_sq > 0.0))
        throw conditioning_error("adapted nodes: quadratic form not positive definite");
    const double l11 = std::sqrt(l11_sq);
    // center = P^{-1} q
    const double det = p00 * p11 - p01 * p01;
    const double cx = (p11 * form.q[0] - p01 * form.q[1]) / det;
    const double cy = (p00 * form.q[1] - p01 * form.q[0]) / det;

    SpaceNodes1D nodes;
    if (quad.space_rule == SpaceRule::gauss_hermite_adapted) {
        const Rule1D& gh = gauss_hermite_ref(quad.space_nodes_per_dim);
        const int n = gh.size();
        nodes.wx.reserve(static_cast<size_t>(n) * n);
        nodes.wy.reserve(static_cast<size_t>(n) * n);
        nodes.weight.reserve(static_cast<size_t>(n) * n);
        const double scale = 2.0 / (l00 * l11);
        const double sq2 = std::sqrt(2.0);
        for (int i = 0; i < n; ++i) {
            const double xi0 = gh.x[i];
            for (int j = 0; j < n; ++j) {
                const double xi1 = gh.x[j];
                // L^{-T} xi: solve L^T y = xi
                const double y1 = xi1 / l11;
                const double y0 = (xi0 - l10 * y1) / l00;
                nodes.wx.push_back(cx + sq2 * y0);
                nodes.wy.push_back(cy + sq2 * y1);
                nodes.weight.push_back(scale * gh.w[i] * gh.w[j] *
                                       std::exp(xi0 * xi0 + xi1 * xi1));
            }
        }
    } else {
        CounterRng rng(quad.seed, mc_stream);
        const int m = quad.mc_samples;
        const double log_norm = -std::log(2.0 * M_PI) + std::log(l00 * l11);
        nodes.wx.reserve(static_cast<size_t>(m));
        nodes.wy.reserve(static_cast<size_t>(m));
        nodes.weight.reserve(static_cast<size_t>(m));
        for (int s = 0; s < m; ++s) {
            const double z0 = rng.normal(), z1 = rng.normal();
            const double y1 = z1 / l11;
            const double y0 = (z0 - l10 * y1) / l00;
            nodes.wx.push_back(cx + y0);
            nodes.wy.push_back(cy + y1);
            nodes.weight.push_back(std::exp(-log_norm + 0.5 * (z0 * z0 + z1 * z1)) / m);
        }
    }
    return nodes;
}

FrozenKernel1D::FrozenKernel1D(const ModelSpec& model, double t, double fx, double fy,
                               int time_nodes)
    : t_(t) {
    if (!(t > 0.0)) throw argument_error("frozen kernel: t must be positive");
    if (!model.sigma1 || !model.drift1)
        throw unsupported_error("frozen kernel 1d: scalar model callables required");
    b_ = model.drift1(fx, fy);
    const Rule1D& rule = gauss_legendre_ref(time_nodes);
    const double mid = 0.5 * t, half = 0.5 * t;
    double b1 = 0.0, b2 = 0.0, b3 = 0.0;
    for (int k = 0; k < rule.size(); ++k) {
        const double rem = t - (mid + half * rule.x[k]);
        const double sig = model.sigma1(fx, fy - fx * rem);
        const double a = sig * sig;
        const double w = half * rule.w[k];
        b1 += w * a;
        b2 += w * rem * a;
        b3 += w * rem * rem * a;
    }
    {
        const double sig0 = model.sigma1(fx, fy - fx * t);
        a0_ = sig0 * sig0;
    }
    b1_ = b1;
    b2_ = b2;
    b3_ = b3;
    if (!(b1 > 0.0)) throw conditioning_error("frozen kernel 1d: degenerate x block");
    gain_ = b2 / b1;
    schur_ = b3 - b2 * gain_;
    if (!(schur_ > 0.0)) throw conditioning_error("frozen kernel 1d: degenerate Schur block");
    const double k = gain_ - t;
    j_quad_ = 1.0 / b1 + k * k / schur_;
    log_norm_ = -std::log(2.0 * M_PI) - 0.5 * (std::log(b1) + std::log(schur_));
}

namespace {

PhasePoint split_point(const Vec& w, int d) {
    PhasePoint p;
    p.x.assign(w.begin(), w.begin() + d);
    p.y.assign(w.begin() + d, w.end());
    return p;
}

double ck_split_value(double c, int d, double s, double t, const PhasePoint& z0,
                      const PhasePoint& z1, QuadratureSpec quad) {
    QuadForm form = hat_source_form(c, d, s, z0);
    form += hat_target_form(c, d, t - s, z1);
    const SpaceNodes nodes = adapted_space_nodes(form, quad, 1);
    double acc = 0.0;
    for (int i = 0; i < nodes.size(); ++i) {
        const PhasePoint mid = split_point(nodes.w[i], d);
        acc += nodes.weight[i] * hat_p(c, d, s, z0, mid) * hat_p(c, d, t - s, mid, z1);
    }
    return acc;
}

} // namespace

CkDefect chapman_kolmogorov_defect(double c, int d, double s, double t,
                                   const PhasePoint& z0, const PhasePoint& z1,
                                   const QuadratureSpec& quad) {
    if (!(s > 0.0) || !(s < t)) throw argument_error("ck_defect: need 0 < s < t");
    quad.validate();
    CkDefect r;
    r.value_direct = hat_p(c, d, t, z0, z1);
    r.value_split = ck_split_value(c, d, s, t, z0, z1, quad);
    r.defect = std::abs(r.value_split - r.value_direct) / r.value_direct;
    QuadratureSpec half = quad;
    half.space_nodes_per_dim = std::max(2, quad.space_nodes_per_dim / 2);
    half.mc_samples = std::max(100, quad.mc_samples / 2);
    const double coarse = ck_split_value(c, d, s, t, z0, z1, half);
    r.converged = std::abs(coarse - r.value_split) <= 1e-5 * r.value_direct + 1e-300;
    return r;
}

GaussianMoments frozen_moments(const ModelSpec& model, double t, const PhasePoint& start,
                               const PhasePoint& freeze, const QuadratureSpec& quad) {
    const int n = std::max(32, quad.time_nodes);
    FrozenKernel k(model, t, freeze, n);
    GaussianMoments mom = k.moments_blocks();
    mom.mean = k.mean(start);
    return mom;
}

FrozenKernel::FrozenKernel(const ModelSpec& model, double t, const PhasePoint& freeze,
                           int time_nodes)
    : d_(model.dim), t_(t) {
    if (!(t > 0.0)) throw argument_error("frozen kernel: t must be positive");
    const int d = d_;
    b_frz_ = model.drift(freeze.x, freeze.y);

    Mat b1(d, d), b2(d, d), b3(d, d);
    const Rule1D& rule01 = gauss_legendre_ref(time_nodes);
    Vec ys(static_cast<size_t>(d));
    for (int knode = 0; knode < rule01.size(); ++knode) {
        const double s = 0.5 * t * (1.0 + rule01.x[knode]);
        const double rem = t - s;
        for (int i = 0; i < d; ++i) ys[i] = freeze.y[i] - freeze.x[i] * rem;
        const Mat sig = model.diffusion_sqrt(freeze.x, ys);
        const Mat a = sig * sig;
        const double w = 0.5 * t * rule01.w[knode];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                b1(i, j) += w * a(i, j);
                b2(i, j) += w * rem * a(i, j);
                b3(i, j) += w * rem * rem * a(i, j);
            }
    }
    {
        const Mat sig0 = model.diffusion_sqrt(freeze.x, [&] {
            Vec y0(static_cast<size_t>(d));
            for (int i = 0; i < d; ++i) y0[i] = freeze.y[i] - freeze.x[i] * t;
            return y0;
        }());
        a0_ = sig0 * sig0;
    }

    mom_.block_xx = b1;
    mom_.block_xy = b2;
    mom_.block_yy = b3;
    mom_.cov = Mat(2 * d, 2 * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            mom_.cov(i, j) = b1(i, j);
            mom_.cov(i, d + j) = b2(i, j);
            mom_.cov(d + i, j) = b2(j, i);
            mom_.cov(d + i, d + j) = b3(i, j);
        }

    chol_xx_ = cholesky(b1);
    // gain = b1^{-1} b2, column by column
    gain_ = Mat(d, d);
    for (int j = 0; j < d; ++j) {
        Vec col(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) col[i] = b2(i, j);
        const Vec g = chol_solve(chol_xx_, col);
        for (int i = 0; i < d; ++i) gain_(i, j) = g[i];
    }
    Mat schur = b3 - transpose(b2) * gain_;
    chol_schur_ = cholesky(schur);

    // [I tI] Sigma^{-1} [I; tI] = b1^{-1} + (gain - tI) S^{-1} (gain - tI)'
    Mat k_shift = gain_;
    for (int i = 0; i < d; ++i) k_shift(i, i) -= t;
    Mat sinv_kt(d, d);
    for (int j = 0; j < d; ++j) {
        Vec col(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) col[i] = k_shift(j, i); // row j of k_shift
        const Vec g = chol_solve(chol_schur_, col);
        for (int i = 0; i < d; ++i) sinv_kt(i, j) = g[i];
    }
    Mat b1inv(d, d);
    for (int j = 0; j < d; ++j) {
        Vec e(static_cast<size_t>(d), 0.0);
        e[j] = 1.0;
        const Vec g = chol_solve(chol_xx_, e);
        for (int i = 0; i < d; ++i) b1inv(i, j) = g[i];
    }
    j_quad_ = b1inv + k_shift * sinv_kt;

    const double log_det =
        2.0 * ([&] {
            double s = 0.0;
            for (int i = 0; i < d; ++i)
                s += std::log(chol_xx_(i, i)) + std::log(chol_schur_(i, i));
            return s;
        }());
    log_norm_ = -d * std::log(2.0 * M_PI) - 0.5 * log_det;
}

Vec FrozenKernel::mean(const PhasePoint& start) const {
    const int d = d_;
    Vec m(static_cast<size_t>(2 * d));
    for (int i = 0; i < d; ++i) {
        m[i] = start.x[i] + b_frz_[i] * t_;
        m[d + i] = start.y[i] + start.x[i] * t_ + 0.5 * b_frz_[i] * t_ * t_;
    }
    return m;
}

FrozenKernel::Core FrozenKernel::core(const PhasePoint& start,
                                      const PhasePoint& target) const {
    const int d = d_;
    const Vec m = mean(start);
    Vec u1(static_cast<size_t>(d)), u2(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        u1[i] = target.x[i] - m[i];
        u2[i] = target.y[i] - m[d + i];
    }
    Core c;
    const Vec a_u1 = chol_solve(chol_xx_, u1);
    Vec resid(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = u2[i];
        for (int j = 0; j < d; ++j) s -= gain_(j, i) * u1[j];
        resid[i] = s;
    }
    c.g2 = chol_solve(chol_schur_, resid);
    c.g1 = a_u1;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) c.g1[i] -= gain_(i, j) * c.g2[j];
    c.q_form = dot(u1, a_u1) + dot(resid, c.g2);
    return c;
}

double FrozenKernel::density(const PhasePoint& start, const PhasePoint& target) const {
    const Core c = core(start, target);
    return std::exp(log_norm_ - 0.5 * c.q_form);
}

Vec FrozenKernel::grad_x(const PhasePoint& start, const PhasePoint& target) const {
    const Core c = core(start, target);
    const double val = std::exp(log_norm_ - 0.5 * c.q_form);
    Vec g(static_cast<size_t>(d_));
    for (int i = 0; i < d_; ++i) g[i] = val * (c.g1[i] + t_ * c.g2[i]);
    return g;
}

Mat FrozenKernel::hess_x(const PhasePoint& start, const PhasePoint& target) const {
    const Core c = core(start, target);
    const double val = std::exp(log_norm_ - 0.5 * c.q_form);
    Mat h(d_, d_);
    for (int i = 0; i < d_; ++i) {
        const double vi = c.g1[i] + t_ * c.g2[i];
        for (int j = 0; j < d_; ++j) {
            const double vj = c.g1[j] + t_ * c.g2[j];
            h(i, j) = val * (vi * vj - j_quad_(i, j));
        }
    }
    return h;
}

FrozenKernel::Derivs FrozenKernel::derivs(const PhasePoint& start,
                                          const PhasePoint& target) const {
    const Core c = core(start, target);
    Derivs d;
    d.density = std::exp(log_norm_ - 0.5 * c.q_form);
    d.grad.resize(static_cast<size_t>(d_));
    d.hess = Mat(d_, d_);
    for (int i = 0; i < d_; ++i) d.grad[i] = c.g1[i] + t_ * c.g2[i];
    for (int i = 0; i < d_; ++i)
        for (int j = 0; j < d_; ++j)
            d.hess(i, j) = d.density * (d.grad[i] * d.grad[j] - j_quad_(i, j));
    for (int i = 0; i < d_; ++i) d.grad[i] *= d.density;
    return d;
}

double frozen_density(const ModelSpec& model, double t, const PhasePoint& start,
                      const PhasePoint& freeze, const PhasePoint& target,
                      const QuadratureSpec& quad) {
    const FrozenKernel k(model, t, freeze, std::max(32, quad.time_nodes));
    return k.density(start, target);
}

double frozen_density_dx(const ModelSpec& model, double t, const PhasePoint& start,
                         const PhasePoint& freeze, const PhasePoint& target,
                         const std::vector<int>& alpha, const QuadratureSpec& quad) {
    int order = 0;
    for (int a : alpha) {
        if (a < 0) throw argument_error("frozen_density_dx: negative multi-index");
        order += a;
    }
    if (static_cast<int>(alpha.size()) != model.dim)
        throw argument_error("frozen_density_dx: multi-index length must equal dim");
    if (order > 2) throw unsupported_error("frozen_density_dx: only |alpha| <= 2 supported");

    const FrozenKernel k(model, t, freeze, std::max(32, quad.time_nodes));
    if (order == 0) return k.density(start, target);
    if (order == 1) {
        const Vec g = k.grad_x(start, target);
        for (int i = 0; i < model.dim; ++i)
            if (alpha[i] == 1) return g[i];
    }
    // order == 2: either d^2/dx_i^2 or mixed d^2/dx_i dx_j
    const Mat h = k.hess_x(start, target);
    int first = -1;
    for (int i = 0; i < model.dim; ++i) {
        if (alpha[i] == 2) return h(i, i);
        if (alpha[i] == 1) {
            if (first < 0)
                first = i;
            else
                return h(first, i);
        }
    }
    throw argument_error("frozen_density_dx: malformed multi-index");
}

} // namespace kolmo
