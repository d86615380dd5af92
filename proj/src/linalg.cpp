#include "kolmo/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "kolmo/errors.hpp"

namespace kolmo {

Mat Mat::identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::scaled_identity(int n, double s) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = s;
    return m;
}

Mat operator*(const Mat& x, const Mat& y) {
    Mat r(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            const double xik = x(i, k);
            for (int j = 0; j < y.cols; ++j) r(i, j) += xik * y(k, j);
        }
    return r;
}

Mat operator+(const Mat& x, const Mat& y) {
    Mat r = x;
    for (size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
    return r;
}

Mat operator-(const Mat& x, const Mat& y) {
    Mat r = x;
    for (size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
    return r;
}

Mat transpose(const Mat& x) {
    Mat r(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) r(j, i) = x(i, j);
    return r;
}

Vec mat_vec(const Mat& x, const Vec& v) {
    Vec r(static_cast<size_t>(x.rows), 0.0);
    for (int i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < x.cols; ++j) s += x(i, j) * v[j];
        r[i] = s;
    }
    return r;
}

double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm2(const Vec& x) { return std::sqrt(dot(x, x)); }

Mat cholesky(const Mat& m) {
    const int n = m.rows;
    Mat L(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s))
                    throw conditioning_error("cholesky: matrix not positive definite");
                L(i, i) = std::sqrt(s);
            } else {
                L(i, j) = s / L(j, j);
            }
        }
    }
    return L;
}

Vec solve_lower(const Mat& L, const Vec& b) {
    const int n = L.rows;
    Vec y(b);
    for (int i = 0; i < n; ++i) {
        double s = y[i];
        for (int k = 0; k < i; ++k) s -= L(i, k) * y[k];
        y[i] = s / L(i, i);
    }
    return y;
}

Vec solve_upper_from_lower(const Mat& L, const Vec& b) {
    const int n = L.rows;
    Vec x(b);
    for (int i = n - 1; i >= 0; --i) {
        double s = x[i];
        for (int k = i + 1; k < n; ++k) s -= L(k, i) * x[k];
        x[i] = s / L(i, i);
    }
    return x;
}

Vec chol_solve(const Mat& L, const Vec& b) {
    return solve_upper_from_lower(L, solve_lower(L, b));
}

double det_from_cholesky(const Mat& L) {
    double d = 1.0;
    for (int i = 0; i < L.rows; ++i) d *= L(i, i);
    return d * d;
}

Vec sym_eigenvalues(const Mat& m) {
    const int n = m.rows;
    Mat a = m;
    // Cyclic Jacobi; tiny matrices converge in a handful of sweeps.
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    Vec ev(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

Vec singular_values(const Mat& m) {
    Mat mtm = transpose(m) * m;
    Vec ev = sym_eigenvalues(mtm);
    Vec sv(ev.size());
    for (size_t i = 0; i < ev.size(); ++i)
        sv[ev.size() - 1 - i] = std::sqrt(std::max(0.0, ev[i]));
    return sv;
}

int numerical_rank(const Mat& m, double rel_tol) {
    Vec sv = singular_values(m);
    if (sv.empty()) return 0;
    const double cut = rel_tol * sv[0];
    int r = 0;
    for (double s : sv)
        if (s > cut) ++r;
    return r;
}

} // namespace kolmo
