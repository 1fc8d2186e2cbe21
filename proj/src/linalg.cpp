#include "bnt/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bnt {

namespace {

std::string degenerate_message(std::size_t row, double norm) {
    std::ostringstream os;
    os << "gram_schmidt: row " << row << " is numerically dependent (residual norm " << norm << ")";
    return os.str();
}

}  // namespace

DegenerateBasis::DegenerateBasis(std::size_t row, double residual_norm)
    : std::runtime_error(degenerate_message(row, residual_norm)), row_(row), residual_norm_(residual_norm) {}

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
}

Matrix gram_schmidt(const Matrix& c) {
    if (c.rows() > c.cols())
        throw DimensionError("gram_schmidt: more rows than columns (" + shape_string(c) + ")");
    Matrix e = c;
    for (std::size_t k = 0; k < e.rows(); ++k) {
        auto u = e.row(k);
        // Modified variant: subtract each projection from the running residual.
        for (std::size_t j = 0; j < k; ++j) {
            const auto q = e.row(j);
            const double proj = dot(q, u);
            for (std::size_t i = 0; i < u.size(); ++i) u[i] -= proj * q[i];
        }
        const double norm = std::sqrt(dot(u, u));
        if (!(norm >= kDegenerateThreshold)) throw DegenerateBasis(k, norm);
        for (auto& v : u) v /= norm;
    }
    return e;
}

Matrix normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double norm = std::sqrt(dot(r, r));
        if (norm > 0.0)
            for (auto& v : r) v /= norm;
    }
    return out;
}

SymmetricEigen symmetric_eigendecomposition(const Matrix& m) {
    if (m.rows() != m.cols())
        throw DimensionError("symmetric_eigendecomposition: matrix is " + shape_string(m));
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-9)
                throw std::invalid_argument("symmetric_eigendecomposition: matrix is not symmetric");

    Matrix a = m;
    Matrix v = Matrix::identity(n);
    const double tol = 1e-12 * std::max(1.0, frobenius_norm(m));
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    for (int sweep = 0; sweep < 100 && off_norm() >= tol; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t col = 0; col < n; ++col) {
        const std::size_t src = order[col];
        out.values[col] = a(src, src);
        // Sign convention: largest-magnitude component positive.
        std::size_t arg = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (std::abs(v(k, src)) > std::abs(v(arg, src)) + 1e-14) arg = k;
        const double sign = v(arg, src) < 0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, col) = sign * v(k, src);
    }
    return out;
}

std::vector<double> cholesky_solve(const Matrix& a, std::span<const double> b) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw DimensionError("cholesky_solve: shape mismatch");
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) throw std::domain_error("cholesky_solve: matrix not positive definite");
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

}  // namespace bnt
