#pragma once

#include <cstddef>
#include <vector>

namespace kolmo {

using Vec = std::vector<double>;

// Small dense row-major matrix. Dimensions here are d or 2d with d in {1, 2},
// so everything below is written for clarity over asymptotics.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    static Mat identity(int n);
    static Mat scaled_identity(int n, double s);
};

Mat operator*(const Mat& x, const Mat& y);
Mat operator+(const Mat& x, const Mat& y);
Mat operator-(const Mat& x, const Mat& y);
Mat transpose(const Mat& x);
Vec mat_vec(const Mat& x, const Vec& v);

double dot(const Vec& x, const Vec& y);
double norm2(const Vec& x);

// Cholesky factor L (lower) of a symmetric positive definite matrix.
// Throws conditioning_error when a pivot drops below zero.
Mat cholesky(const Mat& m);

// Solves L y = b and L^T x = y for a lower-triangular L.
Vec solve_lower(const Mat& L, const Vec& b);
Vec solve_upper_from_lower(const Mat& L, const Vec& b);
Vec chol_solve(const Mat& L, const Vec& b);

double det_from_cholesky(const Mat& L);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
Vec sym_eigenvalues(const Mat& m);

// Singular values of a general square matrix, descending.
Vec singular_values(const Mat& m);

// Numerical rank: count of singular values above rel_tol * largest.
int numerical_rank(const Mat& m, double rel_tol);

} // namespace kolmo
