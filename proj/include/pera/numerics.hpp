#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <utility>

#include "pera/types.hpp"

namespace pera {

inline constexpr Index kMaxSvdDim = 512;

/// Thin SVD: singular_values non-increasing, U/V with orthonormal columns.
struct SvdResult {
    Vector singular_values;
    Matrix left_vectors;
    Matrix right_vectors;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ (" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    return a * b;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    return a.cwiseProduct(b);
}

/// Two-sided Jacobi SVD; deterministic for a fixed input.
inline SvdResult svd(const Matrix& m) {
    require_finite(m, "svd");
    if (m.rows() > kMaxSvdDim || m.cols() > kMaxSvdDim)
        throw std::domain_error("svd: dimensions exceed " + std::to_string(kMaxSvdDim));
    Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return SvdResult{solver.singularValues(), solver.matrixU(), solver.matrixV()};
}

/// Count of singular values above rel_tol * sigma_1; 0 for the zero matrix.
inline int numeric_rank_from(const Vector& singular_values, double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0))
        throw std::domain_error("numeric_rank: rel_tol must lie in (0,1)");
    if (singular_values.size() == 0) return 0;
    const double sigma1 = singular_values(0);
    if (sigma1 == 0.0) return 0;
    int count = 0;
    for (Index i = 0; i < singular_values.size(); ++i)
        if (singular_values(i) > rel_tol * sigma1) ++count;
    return count;
}

inline int numeric_rank(const Matrix& m, double rel_tol = 1e-10) {
    return numeric_rank_from(svd(m).singular_values, rel_tol);
}

/// Central-difference gradient of a scalar function of a flat vector.
template <typename F>
Vector finite_diff_grad(F&& f, const Vector& x, double step = 1e-4) {
    if (!(step > 0.0)) throw std::domain_error("finite_diff_grad: step must be positive");
    Vector grad(x.size());
    Vector probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        probe(i) = x(i) + step;
        const double fp = f(probe);
        probe(i) = x(i) - step;
        const double fm = f(probe);
        probe(i) = x(i);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::domain_error("finite_diff_grad: non-finite function value");
        grad(i) = (fp - fm) / (2.0 * step);
    }
    return grad;
}

}  // namespace pera
