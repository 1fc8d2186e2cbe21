#pragma once

#include <stdexcept>
#include <vector>

#include "bnt/matrix.hpp"
#include "bnt/rng.hpp"

namespace bnt {

/// Gram-Schmidt hit a residual below the degeneracy threshold.
class DegenerateBasis : public std::runtime_error {
public:
    DegenerateBasis(std::size_t row, double residual_norm);
    std::size_t row() const noexcept { return row_; }
    double residual_norm() const noexcept { return residual_norm_; }

private:
    std::size_t row_;
    double residual_norm_;
};

inline constexpr double kDegenerateThreshold = 1e-12;

/// Entries i.i.d. uniform on ±sqrt(6 / (rows + cols)).
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

/// Orthonormalizes the rows of `c` (K x V, K <= V) with modified Gram-Schmidt.
/// The span of the first k output rows equals that of the first k input rows.
Matrix gram_schmidt(const Matrix& c);

/// Scales every row to unit Euclidean length.
Matrix normalize_rows(const Matrix& m);

struct SymmetricEigen {
    std::vector<double> values;  ///< descending
    Matrix vectors;              ///< column i pairs with values[i]
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-12 (scaled by max(1, ||m||_F)).
SymmetricEigen symmetric_eigendecomposition(const Matrix& m);

/// Solves a x = b for symmetric positive definite `a` via Cholesky.
/// Throws std::domain_error when `a` is not numerically positive definite.
std::vector<double> cholesky_solve(const Matrix& a, std::span<const double> b);

}  // namespace bnt
