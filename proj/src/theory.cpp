#include "bnt/theory.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "bnt/linalg.hpp"

namespace bnt {

namespace {

constexpr std::size_t kBlockSize = 1 << 16;

struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }

    void merge(const Moments& o) {
        if (o.n == 0) return;
        const double total = static_cast<double>(n + o.n);
        const double delta = o.mean - mean;
        mean += delta * static_cast<double>(o.n) / total;
        m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) / total;
        n += o.n;
    }
};

Moments sample_block(const Matrix& centers, double radius, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t k = centers.rows();
    const std::size_t v = centers.cols();
    const double inv_k = 1.0 / static_cast<double>(k);
    std::vector<double> z(v), logits(k);
    Moments m;
    for (std::size_t s = 0; s < count; ++s) {
        double norm2 = 0.0;
        for (auto& x : z) {
            x = rng.normal();
            norm2 += x * x;
        }
        const double scale = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(v)) / std::sqrt(norm2);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            logits[c] = scale * dot(centers.row(c), z);
            mx = std::max(mx, logits[c]);
        }
        double total = 0.0;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            total += l;
        }
        double var = 0.0;
        for (double l : logits) {
            const double d = l / total - inv_k;
            var += d * d;
        }
        m.add(var);
    }
    return m;
}

}  // namespace

VarianceFunctionalEstimate variance_functional_mc(const Matrix& centers, double radius, std::size_t n, Rng& rng,
                                                  unsigned threads) {
    if (!(radius > 0.0)) throw std::invalid_argument("variance_functional_mc: radius must be > 0");
    if (n == 0) throw std::invalid_argument("variance_functional_mc: need at least one sample");
    if (centers.rows() == 0) throw std::invalid_argument("variance_functional_mc: no centers");

    VarianceFunctionalEstimate est;
    est.seed = rng.next_u64();
    est.n_samples = n;
    est.radius = radius;
    est.centers = centers;

    const std::size_t blocks = (n + kBlockSize - 1) / kBlockSize;
    std::vector<Moments> partial(blocks);
    auto work = [&](std::size_t first, std::size_t stride) {
        for (std::size_t b = first; b < blocks; b += stride) {
            const std::size_t count = std::min(kBlockSize, n - b * kBlockSize);
            partial[b] = sample_block(centers, radius, count, derive_seed(est.seed, b));
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, blocks));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    }

    Moments total;
    for (const auto& p : partial) total.merge(p);
    est.value = total.mean;
    est.standard_error = n > 1 ? std::sqrt(total.m2 / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
    return est;
}

GaussLegendre gauss_legendre(std::size_t n) {
    if (n == 0) throw std::invalid_argument("gauss_legendre: n must be >= 1");
    GaussLegendre g{std::vector<double>(n), std::vector<double>(n)};
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (dn + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                const double dk = static_cast<double>(k);
                const double p2 = ((2.0 * dk - 1.0) * x * p1 - (dk - 1.0) * p0) / dk;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = x;
            dp = dn * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        g.nodes[i] = -x;
        g.nodes[n - 1 - i] = x;
        g.weights[i] = w;
        g.weights[n - 1 - i] = w;
    }
    if (n == 1) g.nodes[0] = 0.0, g.weights[0] = 2.0;
    return g;
}

double variance_functional_2d(double phi, double radius, std::size_t quad_nodes) {
    if (quad_nodes < 64) throw std::invalid_argument("variance_functional_2d: quad_nodes must be >= 64");
    if (!(radius > 0.0)) throw std::invalid_argument("variance_functional_2d: radius must be > 0");
    const auto gl = gauss_legendre(quad_nodes);
    const double h_theta = 2.0 * std::numbers::pi / static_cast<double>(quad_nodes);
    double total = 0.0;
    for (std::size_t i = 0; i < quad_nodes; ++i) {
        const double rho = 0.5 * radius * (gl.nodes[i] + 1.0);
        const double w_rho = 0.5 * radius * gl.weights[i];
        double ring = 0.0;
        for (std::size_t j = 0; j < quad_nodes; ++j) {
            const double theta = h_theta * static_cast<double>(j);
            const double p1 = 1.0 / (1.0 + std::exp(rho * (std::cos(theta - phi) - std::cos(theta))));
            const double d = p1 - 0.5;
            ring += 2.0 * d * d;  // (P1 - 1/2)^2 + (P2 - 1/2)^2
        }
        total += w_rho * rho * ring * h_theta;
    }
    return total / (std::numbers::pi * radius * radius);
}

QuadratureValue variance_functional_2d_checked(double phi, double radius, std::size_t quad_nodes) {
    const double coarse = variance_functional_2d(phi, radius, quad_nodes);
    const double fine = variance_functional_2d(phi, radius, 2 * quad_nodes);
    return {fine, std::abs(fine - coarse)};
}

Matrix equicorrelated_unit_centers(std::size_t k, std::size_t v, double cosine) {
    if (v <= k) throw std::invalid_argument("equicorrelated_unit_centers: need V > K");
    if (!(cosine >= 0.0 && cosine < 1.0)) throw std::invalid_argument("equicorrelated_unit_centers: cosine in [0, 1)");
    Matrix e(k, v);
    const double own = std::sqrt(1.0 - cosine);
    const double shared = std::sqrt(cosine);
    for (std::size_t i = 0; i < k; ++i) {
        e(i, i) = own;
        e(i, k) = shared;
    }
    return e;
}

namespace {

// Residual of y after projection onto span(X) by modified Gram-Schmidt,
// dropping numerically dependent columns.
std::vector<double> projection_residual(const Matrix& x, std::span<const double> y) {
    const std::size_t s = x.rows();
    std::vector<std::vector<double>> basis;
    std::vector<double> col(s);
    for (std::size_t c = 0; c < x.cols(); ++c) {
        for (std::size_t q = 0; q < s; ++q) col[q] = x(q, c);
        const double original = std::sqrt(dot(col, col));
        for (const auto& b : basis) {
            const double proj = dot(b, col);
            for (std::size_t q = 0; q < s; ++q) col[q] -= proj * b[q];
        }
        const double norm = std::sqrt(dot(col, col));
        if (norm <= 1e-10 * std::max(1.0, original)) continue;
        for (auto& v : col) v /= norm;
        basis.push_back(col);
    }
    std::vector<double> res(y.begin(), y.end());
    for (const auto& b : basis) {
        const double proj = dot(b, res);
        for (std::size_t q = 0; q < s; ++q) res[q] -= proj * b[q];
    }
    return res;
}

}  // namespace

OlsFit ols_fit(const Matrix& x, std::span<const double> y) {
    if (x.rows() != y.size()) throw DimensionError("ols_fit: design rows differ from response length");
    const std::size_t s = x.rows();
    const Matrix gram = matmul_tn(x, x);
    std::vector<double> rhs(x.cols(), 0.0);
    for (std::size_t q = 0; q < s; ++q)
        for (std::size_t c = 0; c < x.cols(); ++c) rhs[c] += x(q, c) * y[q];

    OlsFit fit;
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(s);
    for (double v : y) fit.sst += (v - mean) * (v - mean);

    std::vector<double> residual(s);
    try {
        fit.beta = cholesky_solve(gram, rhs);
        for (std::size_t q = 0; q < s; ++q) residual[q] = y[q] - dot(x.row(q), fit.beta);
    } catch (const std::domain_error&) {
        // Rank-deficient regressors: the fitted values are still the projection.
        fit.beta.clear();
        residual = projection_residual(x, y);
    }
    for (std::size_t q = 0; q < s; ++q) {
        fit.ssr += residual[q] * residual[q];
        const double fitted = y[q] - residual[q];
        fit.sse += (fitted - mean) * (fitted - mean);
    }
    fit.r_squared = fit.sst > 0.0 ? 1.0 - fit.ssr / fit.sst : 0.0;
    return fit;
}

Matrix orthogonal_design(std::size_t s, std::size_t r, Rng& rng) {
    if (s <= r) throw std::invalid_argument("orthogonal_design: need more rows than columns");
    // Leading all-ones row makes every later row centred after orthogonalization.
    Matrix raw(r + 1, s, 1.0);
    for (std::size_t c = 1; c <= r; ++c)
        for (auto& v : raw.row(c)) v = rng.normal();
    const Matrix basis = gram_schmidt(raw);
    Matrix design(s, r);
    for (std::size_t c = 0; c < r; ++c)
        for (std::size_t q = 0; q < s; ++q) design(q, c) = basis(c + 1, q);
    return design;
}

Matrix correlated_design(std::size_t s, double rho, Rng& rng) {
    if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("correlated_design: rho must be in (-1, 1)");
    const Matrix base = orthogonal_design(s, 2, rng);
    const double mix = std::sqrt(1.0 - rho * rho);
    Matrix design(s, 2);
    for (std::size_t q = 0; q < s; ++q) {
        design(q, 0) = base(q, 0);
        design(q, 1) = rho * base(q, 0) + mix * base(q, 1);
    }
    return design;
}

VifReport vif(const Matrix& design) {
    const std::size_t s = design.rows();
    const std::size_t r = design.cols();
    if (r < 2) throw std::invalid_argument("vif: need at least two columns");
    if (s <= r) throw std::invalid_argument("vif: need more rows than columns");

    VifReport report;
    Matrix x(s, r);  // intercept + the r - 1 other columns
    std::vector<double> y(s);
    double sum = 0.0;
    for (std::size_t p = 0; p < r; ++p) {
        for (std::size_t q = 0; q < s; ++q) {
            x(q, 0) = 1.0;
            std::size_t c = 1;
            for (std::size_t j = 0; j < r; ++j)
                if (j != p) x(q, c++) = design(q, j);
            y[q] = design(q, p);
        }
        auto fit = ols_fit(x, y);
        if (!(fit.sst > 0.0)) throw std::invalid_argument("vif: column " + std::to_string(p) + " is constant");
        const double r2 = fit.r_squared;
        const double value = r2 >= 1.0 - 1e-12 ? std::numeric_limits<double>::infinity() : 1.0 / (1.0 - r2);
        report.r_squared.push_back(r2);
        report.vif.push_back(value);
        report.fits.push_back(std::move(fit));
        sum += value;
    }
    report.mean_vif = sum / static_cast<double>(r);
    return report;
}

}  // namespace bnt
