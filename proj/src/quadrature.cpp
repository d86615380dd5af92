#include "kolmo/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "kolmo/errors.hpp"

namespace kolmo {

Rule1D gauss_legendre(int n) {
    if (n < 1) throw argument_error("gauss_legendre: need n >= 1");
    Rule1D r;
    r.x.resize(n);
    r.w.resize(n);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        // Chebyshev guess, then Newton on P_n.
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            const double z1 = z;
            z = z1 - p0 / pp;
            if (std::abs(z - z1) < 1e-15) break;
        }
        r.x[i] = -z;
        r.x[n - 1 - i] = z;
        r.w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        r.w[n - 1 - i] = r.w[i];
    }
    return r;
}

Rule1D gauss_legendre(int n, double a, double b) {
    Rule1D r = gauss_legendre(n);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
        r.x[i] = mid + half * r.x[i];
        r.w[i] *= half;
    }
    return r;
}

Rule1D gauss_hermite(int n) {
    if (n < 1) throw argument_error("gauss_hermite: need n >= 1");
    Rule1D r;
    r.x.resize(n);
    r.w.resize(n);
    const double pim4 = 0.7511255444649425; // pi^{-1/4}
    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * r.x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * r.x[1];
        else
            z = 2.0 * z - r.x[i - 2];
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = pim4, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = z * std::sqrt(2.0 / (j + 1.0)) * p1 -
                     std::sqrt(static_cast<double>(j) / (j + 1.0)) * p2;
            }
            pp = std::sqrt(2.0 * n) * p1;
            const double z1 = z;
            z = z1 - p0 / pp;
            if (std::abs(z - z1) < 1e-14) break;
        }
        r.x[i] = z;
        r.x[n - 1 - i] = -z;
        r.w[i] = 2.0 / (pp * pp);
        r.w[n - 1 - i] = r.w[i];
    }
    return r;
}

namespace {

// Eigenvalues and first eigenvector components of a symmetric tridiagonal
// matrix (QL with implicit shifts). diag/off are overwritten; z holds the
// first row of the eigenvector matrix on exit.
void tridiag_ql(std::vector<double>& diag, std::vector<double>& off,
                std::vector<double>& z) {
    const int n = static_cast<int>(diag.size());
    z.assign(diag.size(), 0.0);
    z[0] = 1.0;
    std::vector<double> zrow = z;
    off.push_back(0.0);
    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                const double dd = std::abs(diag[m]) + std::abs(diag[m + 1]);
                if (std::abs(off[m]) <= 1e-15 * dd) break;
            }
            if (m != l) {
                if (++iter > 60) throw error("tridiag_ql: no convergence");
                double g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
                double r = std::hypot(g, 1.0);
                g = diag[m] - diag[l] + off[l] / (g + (g >= 0 ? std::abs(r) : -std::abs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * off[i];
                    const double b = c * off[i];
                    r = std::hypot(f, g);
                    off[i + 1] = r;
                    if (r == 0.0) {
                        diag[i + 1] -= p;
                        off[m] = 0.0;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = diag[i + 1] - p;
                    r = (diag[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    diag[i + 1] = g + p;
                    g = c * r - b;
                    f = zrow[i + 1];
                    zrow[i + 1] = s * zrow[i] + c * f;
                    zrow[i] = c * zrow[i] - s * f;
                }
                if (r == 0.0 && m - 1 >= l) continue;
                diag[l] -= p;
                off[l] = g;
                off[m] = 0.0;
            }
        } while (m != l);
    }
    z = zrow;
}

} // namespace

Rule1D gauss_jacobi_sqrt(int n) {
    if (n < 1) throw argument_error("gauss_jacobi_sqrt: need n >= 1");
    // Three-term recurrence coefficients for the Jacobi weight (1-x)^a (1+x)^b
    // with a = -1/2, b = 0; Golub-Welsch.
    const double a = -0.5, b = 0.0;
    std::vector<double> diag(static_cast<size_t>(n)), off(static_cast<size_t>(n > 1 ? n - 1 : 0));
    for (int k = 0; k < n; ++k) {
        const double kk = k;
        const double den = (2.0 * kk + a + b) * (2.0 * kk + a + b + 2.0);
        diag[k] = (k == 0) ? (b - a) / (a + b + 2.0) : (b * b - a * a) / den;
    }
    for (int k = 1; k < n; ++k) {
        const double kk = k;
        const double num = 4.0 * kk * (kk + a) * (kk + b) * (kk + a + b);
        const double den = (2.0 * kk + a + b) * (2.0 * kk + a + b) *
                           (2.0 * kk + a + b + 1.0) * (2.0 * kk + a + b - 1.0);
        off[k - 1] = std::sqrt(num / den);
    }
    std::vector<double> z;
    tridiag_ql(diag, off, z);
    const double mu0 = 2.0 * std::sqrt(2.0); // int_{-1}^{1} (1-x)^{-1/2} dx
    Rule1D r;
    r.x.resize(n);
    r.w.resize(n);
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) { return diag[i] < diag[j]; });
    for (int i = 0; i < n; ++i) {
        r.x[i] = diag[order[i]];
        r.w[i] = mu0 * z[order[i]] * z[order[i]];
    }
    return r;
}

namespace {

const Rule1D& cached_rule(int n, std::map<int, Rule1D>& cache, std::mutex& mtx,
                          Rule1D (*make)(int)) {
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make(n)).first;
    return it->second;
}

} // namespace

const Rule1D& gauss_legendre_ref(int n) {
    static std::map<int, Rule1D> cache;
    static std::mutex mtx;
    return cached_rule(n, cache, mtx, static_cast<Rule1D (*)(int)>(gauss_legendre));
}

const Rule1D& gauss_hermite_ref(int n) {
    static std::map<int, Rule1D> cache;
    static std::mutex mtx;
    return cached_rule(n, cache, mtx, gauss_hermite);
}

const Rule1D& gauss_jacobi_sqrt_ref(int n) {
    static std::map<int, Rule1D> cache;
    static std::mutex mtx;
    return cached_rule(n, cache, mtx, gauss_jacobi_sqrt);
}

void QuadratureSpec::validate() const {
    if (time_nodes < 2) throw argument_error("quadrature: time_nodes must be >= 2");
    if (space_nodes_per_dim < 2)
        throw argument_error("quadrature: space_nodes_per_dim must be >= 2");
    if (space_rule == SpaceRule::monte_carlo && mc_samples < 100)
        throw argument_error("quadrature: mc_samples must be >= 100");
}

Rule1D singular_time_rule(double t, const QuadratureSpec& quad) {
    if (t <= 0.0) throw argument_error("singular_time_rule: t must be positive");
    Rule1D r;
    if (quad.time_rule == TimeRule::substitution_w2) {
        // int_0^t f(u) du = int_0^1 f(t(1-v^2)) 2tv dv; the substitution
        // flattens an integrable (t-u)^{-1/2} blow-up in f.
        const Rule1D& base01 = gauss_legendre_ref(quad.time_nodes);
        r.x.resize(base01.size());
        r.w.resize(base01.size());
        for (int i = 0; i < base01.size(); ++i) {
            const double v = 0.5 * (1.0 + base01.x[i]);
            r.x[i] = t * (1.0 - v * v);
            r.w[i] = 0.5 * base01.w[i] * 2.0 * t * v;
        }
    } else {
        // Gauss-Jacobi absorbs the (t-u)^{-1/2} factor into the weight; the
        // caller still passes the raw integrand, so the singular factor is
        // divided out at the nodes.
        const Rule1D& base = gauss_jacobi_sqrt_ref(quad.time_nodes);
        r.x.resize(base.size());
        r.w.resize(base.size());
        for (int i = 0; i < base.size(); ++i) {
            const double u = 0.5 * t * (1.0 + base.x[i]);
            r.x[i] = u;
            r.w[i] = base.w[i] * std::sqrt(0.5 * t) * std::sqrt(t - u);
        }
    }
    return r;
}

std::vector<double> cheb_lobatto(int n, double a, double b) {
    std::vector<double> x(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double c = std::cos(M_PI * i / (n - 1.0)); // 1 .. -1
        x[n - 1 - i] = 0.5 * (a + b) + 0.5 * (b - a) * c;
    }
    x.front() = a;
    x.back() = b;
    return x;
}

ChebInterp1D::ChebInterp1D(std::vector<double> nodes_in) : nodes(std::move(nodes_in)) {
    const int n = static_cast<int>(nodes.size());
    bw.resize(nodes.size());
    for (int i = 0; i < n; ++i) {
        double w = (i % 2 == 0) ? 1.0 : -1.0;
        if (i == 0 || i == n - 1) w *= 0.5;
        bw[i] = w;
    }
}

void ChebInterp1D::coefficients(double t, std::vector<double>& c) const {
    const int n = static_cast<int>(nodes.size());
    c.assign(nodes.size(), 0.0);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        const double diff = t - nodes[i];
        if (std::abs(diff) < 1e-14) {
            c[i] = 1.0;
            return;
        }
        c[i] = bw[i] / diff;
        denom += c[i];
    }
    for (int i = 0; i < n; ++i) c[i] /= denom;
}

} // namespace kolmo
