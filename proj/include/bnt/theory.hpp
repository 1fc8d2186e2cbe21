#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bnt/matrix.hpp"
#include "bnt/rng.hpp"

namespace bnt {

/// Ball-averaged variance of the softmax projection, sum_k (P_k - 1/K)^2,
/// estimated by uniform sampling of the radius-r ball in R^V.
struct VarianceFunctionalEstimate {
    double value = 0.0;
    double standard_error = 0.0;
    std::size_t n_samples = 0;
    double radius = 0.0;
    Matrix centers;
    std::uint64_t seed = 0;  ///< base seed drawn from the caller's Rng
};

/// Samples are drawn in fixed blocks, each with its own derived stream, and
/// reduced in block order, so the result does not depend on `threads`.
VarianceFunctionalEstimate variance_functional_mc(const Matrix& centers, double radius, std::size_t n, Rng& rng,
                                                  unsigned threads = 1);

/// Two unit centers at angle phi in the plane, integrated in polar coordinates
/// (trapezoid in theta, Gauss-Legendre in rho with Jacobian rho), divided by pi r^2.
double variance_functional_2d(double phi, double radius, std::size_t quad_nodes);

struct QuadratureValue {
    double value = 0.0;              ///< at 2n nodes
    double convergence_error = 0.0;  ///< |F(n) - F(2n)|
};

QuadratureValue variance_functional_2d_checked(double phi, double radius, std::size_t quad_nodes);

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;
};
GaussLegendre gauss_legendre(std::size_t n);

/// K unit vectors in R^V with pairwise inner product `cosine` (0 <= cosine < 1).
/// Requires V > K.
Matrix equicorrelated_unit_centers(std::size_t k, std::size_t v, double cosine);

/// OLS fit y ~ X (X already contains any intercept column).
struct OlsFit {
    std::vector<double> beta;
    double sse = 0.0;  ///< explained sum of squares
    double ssr = 0.0;  ///< residual sum of squares
    double sst = 0.0;  ///< total sum of squares about the mean
    double r_squared = 0.0;
};

/// Normal equations solved by Cholesky.
OlsFit ols_fit(const Matrix& x, std::span<const double> y);

struct VifReport {
    std::vector<double> vif;        ///< +inf marks exact collinearity
    std::vector<double> r_squared;  ///< R_p^2 of column p on the others
    std::vector<OlsFit> fits;
    double mean_vif = 0.0;          ///< sum_p VIF_p / r
};

/// s x r design whose columns are centred, unit-norm and mutually orthogonal.
/// Requires s > r.
Matrix orthogonal_design(std::size_t s, std::size_t r, Rng& rng);

/// s x 2 design whose sample correlation is exactly `rho` (up to rounding):
/// two orthonormal centred columns u, w combined as [u, rho u + sqrt(1 - rho^2) w].
Matrix correlated_design(std::size_t s, double rho, Rng& rng);

/// Regresses each column on the others plus an intercept.
/// Requires rows > cols >= 2 and non-constant columns.
VifReport vif(const Matrix& design);

}  // namespace bnt
