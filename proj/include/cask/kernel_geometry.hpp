// Copyright 2026 The cask-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cask {

using Complex = std::complex<double>;

inline constexpr double kDefaultFrequencyBase = 10000.0;

/// Distribution over non-negative future offsets.
struct HorizonDistribution {
    std::vector<std::int64_t> support;
    std::vector<double> weights;

    void validate() const {
        if (support.empty() || support.size() != weights.size()) {
            throw std::invalid_argument("horizon distribution needs matching nonempty support and weights");
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < support.size(); ++i) {
            if (support[i] < 0 || !(weights[i] >= 0.0)) {
                throw std::invalid_argument("horizon distribution has negative offset or weight");
            }
            sum += weights[i];
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("horizon weights must sum to 1");
        }
    }

    static HorizonDistribution point_mass(std::int64_t offset = 0) { return {{offset}, {1.0}}; }

    /// Truncated geometric over 0..horizon with ratio `rate`, normalized.
    static HorizonDistribution truncated_geometric(std::int64_t horizon, double rate = 0.5) {
        if (horizon < 0 || rate <= 0.0) {
            throw std::invalid_argument("truncated_geometric needs horizon >= 0 and rate > 0");
        }
        HorizonDistribution pi;
        double w = 1.0;
        for (std::int64_t d = 0; d <= horizon; ++d) {
            pi.support.push_back(d);
            pi.weights.push_back(w);
            w *= rate;
        }
        const double total = std::accumulate(pi.weights.begin(), pi.weights.end(), 0.0);
        for (auto& x : pi.weights) x /= total;
        return pi;
    }
};

/// Horizon kernel: sum_delta pi(delta) * exp(i * omega * delta).
inline Complex kappa(const HorizonDistribution& pi, double omega) {
    Complex acc{0.0, 0.0};
    for (std::size_t i = 0; i < pi.support.size(); ++i) {
        const double phase = omega * static_cast<double>(pi.support[i]);
        acc += pi.weights[i] * Complex{std::cos(phase), std::sin(phase)};
    }
    return acc;
}

/// Rotary-style band frequency base^(-2f/d).
inline double band_frequency(std::size_t band, std::size_t dim, double base = kDefaultFrequencyBase) {
    return std::pow(base, -2.0 * static_cast<double>(band) / static_cast<double>(dim));
}

struct BandSpectrum {
    std::vector<double> frequencies;
    std::vector<Complex> coefficients;

    std::size_t band_count() const { return coefficients.size(); }
};

/// Pairs components (2f, 2f+1) into the complex coefficient of band f.
inline BandSpectrum band_decompose(std::span<const double> v, double base = kDefaultFrequencyBase) {
    if (v.size() % 2 != 0) {
        throw std::invalid_argument("band_decompose needs an even-length vector");
    }
    const std::size_t bands = v.size() / 2;
    BandSpectrum s;
    s.frequencies.reserve(bands);
    s.coefficients.reserve(bands);
    for (std::size_t f = 0; f < bands; ++f) {
        s.frequencies.push_back(band_frequency(f, v.size(), base));
        s.coefficients.emplace_back(v[2 * f], v[2 * f + 1]);
    }
    return s;
}

inline std::vector<double> band_recompose(const BandSpectrum& s) {
    std::vector<double> v;
    v.reserve(2 * s.band_count());
    for (const auto& c : s.coefficients) {
        v.push_back(c.real());
        v.push_back(c.imag());
    }
    return v;
}

/// |kappa(omega_f)| for every band of a d-dimensional key.
inline std::vector<double> kappa_band_weights(const HorizonDistribution& pi, std::size_t dim,
                                              double base = kDefaultFrequencyBase) {
    if (dim % 2 != 0) {
        throw std::invalid_argument("kappa_band_weights needs an even dimension");
    }
    std::vector<double> w(dim / 2);
    for (std::size_t f = 0; f < w.size(); ++f) w[f] = std::abs(kappa(pi, band_frequency(f, dim, base)));
    return w;
}

/// d_kappa over raw vectors with precomputed |kappa| band weights.
inline double d_kappa(std::span<const double> band_weights, std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() != 2 * band_weights.size()) {
        throw std::invalid_argument("band-count mismatch");
    }
    double d = 0.0;
    for (std::size_t f = 0; f < band_weights.size(); ++f) {
        d += band_weights[f] * std::hypot(a[2 * f] - b[2 * f], a[2 * f + 1] - b[2 * f + 1]);
    }
    return d;
}

/// sum_f |kappa(omega_f)| * |a_f - b_f|.
inline double d_kappa(const BandSpectrum& a, const BandSpectrum& b, const HorizonDistribution& pi) {
    if (a.band_count() != b.band_count()) {
        throw std::invalid_argument("band-count mismatch");
    }
    double d = 0.0;
    for (std::size_t f = 0; f < a.band_count(); ++f) {
        d += std::abs(kappa(pi, a.frequencies[f])) * std::abs(a.coefficients[f] - b.coefficients[f]);
    }
    return d;
}

/// Re sum_f mu_f * conj(k_f) * kappa(omega_f) * exp(i omega_f delta).
inline double horizon_mean_score(const BandSpectrum& mu, const BandSpectrum& key, const HorizonDistribution& pi,
                                 std::int64_t delta) {
    if (mu.band_count() != key.band_count()) {
        throw std::invalid_argument("band-count mismatch");
    }
    Complex acc{0.0, 0.0};
    for (std::size_t f = 0; f < mu.band_count(); ++f) {
        const double w = mu.frequencies[f];
        const double phase = w * static_cast<double>(delta);
        acc += mu.coefficients[f] * std::conj(key.coefficients[f]) * kappa(pi, w) * Complex{std::cos(phase), std::sin(phase)};
    }
    return acc.real();
}

struct Rms2Terms {
    double alpha_rms2 = 0.0;
    double alpha_tri = 0.0;
    double variance_term = 0.0;
};

/**
 * Per-band RMS2 score coefficient and its split into the mean-norm term and
 * the query-norm variance term:
 *   (E|q|^2 - |mu|^2) / (E|q| + |mu|) = (E|q| - |mu|) + Var(|q|) / (E|q| + |mu|)
 * Var is the population variance of the sample.
 */
inline Rms2Terms rms2_decomposition(std::span<const double> query_norms, double mu_norm) {
    if (query_norms.empty()) {
        throw std::invalid_argument("rms2_decomposition needs a nonempty sample");
    }
    const double n = static_cast<double>(query_norms.size());
    double mean = 0.0;
    double mean_sq = 0.0;
    for (double x : query_norms) {
        mean += x;
        mean_sq += x * x;
    }
    mean /= n;
    mean_sq /= n;
    const double denom = mean + mu_norm;
    if (!(denom > 0.0)) {
        throw std::domain_error("zero denominator in rms2_decomposition");
    }
    double var = 0.0;
    for (double x : query_norms) var += (x - mean) * (x - mean);
    var /= n;

    Rms2Terms t;
    t.alpha_rms2 = (mean_sq - mu_norm * mu_norm) / denom;
    t.alpha_tri = mean - mu_norm;
    t.variance_term = var / denom;
    return t;
}

// ---------------------------------------------------------------------------
// Variational horizon QP:  min_{pi in simplex} || W^{1/2} (A pi - tau) ||^2
// ---------------------------------------------------------------------------

/// Row-major dense matrix, just enough for the small QPs solved here.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct QPInstance {
    Matrix design;                // m x n, maps simplex weights to targets
    std::vector<double> target;   // tau, length m
    std::vector<double> weight;   // diagonal of W, length m, non-negative

    std::size_t group_size() const { return design.cols; }

    void validate() const {
        if (design.rows == 0 || design.cols == 0 || target.size() != design.rows || weight.size() != design.rows) {
            throw std::invalid_argument("QP instance dimensions are inconsistent");
        }
        for (double w : weight) {
            if (!(w >= 0.0)) throw std::invalid_argument("QP weights must be non-negative");
        }
    }

    double objective(std::span<const double> pi) const {
        double f = 0.0;
        for (std::size_t r = 0; r < design.rows; ++r) {
            double res = -target[r];
            for (std::size_t c = 0; c < design.cols; ++c) res += design(r, c) * pi[c];
            f += weight[r] * res * res;
        }
        return f;
    }

    std::vector<double> gradient(std::span<const double> pi) const {
        std::vector<double> g(design.cols, 0.0);
        for (std::size_t r = 0; r < design.rows; ++r) {
            double res = -target[r];
            for (std::size_t c = 0; c < design.cols; ++c) res += design(r, c) * pi[c];
            const double s = 2.0 * weight[r] * res;
            for (std::size_t c = 0; c < design.cols; ++c) g[c] += s * design(r, c);
        }
        return g;
    }
};

/// Euclidean projection onto the probability simplex (sort-based).
inline std::vector<double> project_to_simplex(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cumsum += u[i];
        const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) theta = t;
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(v[i] - theta, 0.0);
    return out;
}

/// ||x - P(x - grad/L)|| * L: zero exactly at simplex-constrained optima.
inline double projected_gradient_residual(const QPInstance& qp, std::span<const double> pi, double lipschitz) {
    const auto g = qp.gradient(pi);
    std::vector<double> step(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) step[i] = pi[i] - g[i] / lipschitz;
    const auto p = project_to_simplex(step);
    double r = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) r += (pi[i] - p[i]) * (pi[i] - p[i]);
    return std::sqrt(r) * lipschitz;
}

/// Largest eigenvalue of 2 A^T W A (the gradient's Lipschitz constant), by power iteration.
inline double qp_lipschitz(const QPInstance& qp, int iterations = 200) {
    const std::size_t n = qp.design.cols;
    Matrix h(n, n);
    for (std::size_t r = 0; r < qp.design.rows; ++r)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) h(i, j) += 2.0 * qp.weight[r] * qp.design(r, i) * qp.design(r, j);
    std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) x[i] += 1e-3 * static_cast<double>(i);  // avoid starting orthogonal to the top vector
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> y(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) y[i] += h(i, j) * x[j];
        double norm = 0.0;
        for (double t : y) norm += t * t;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 1.0;
        lambda = norm;
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / norm;
    }
    // Power iteration approaches from below; pad so the step stays safe.
    double frob = 0.0;
    for (double t : h.data) frob += t * t;
    return std::min(1.05 * lambda, std::sqrt(frob)) + 1e-15;
}

struct QPResult {
    std::vector<double> pi;
    double objective = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // objective after every accepted iterate
};

namespace detail {

/// Solves the equality-constrained QP restricted to `support` (sum = 1) via its
/// KKT system. Returns an empty vector when singular.
inline std::vector<double> solve_on_support(const QPInstance& qp, const std::vector<std::size_t>& support) {
    const std::size_t k = support.size();
    const std::size_t n = k + 1;
    Matrix a(n, n);
    std::vector<double> rhs(n, 0.0);
    for (std::size_t r = 0; r < qp.design.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            const double bi = qp.design(r, support[i]);
            rhs[i] += 2.0 * qp.weight[r] * bi * qp.target[r];
            for (std::size_t j = 0; j < k; ++j) a(i, j) += 2.0 * qp.weight[r] * bi * qp.design(r, support[j]);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        a(i, k) = 1.0;
        a(k, i) = 1.0;
    }
    rhs[k] = 1.0;
    // Gaussian elimination with partial pivoting.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double scale = 0.0;
    for (double t : a.data) scale = std::max(scale, std::abs(t));
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        if (std::abs(a(piv, c)) <= 1e-12 * scale) return {};
        if (piv != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(piv, j));
            std::swap(rhs[c], rhs[piv]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a(r, c) / a(c, c);
            for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
            rhs[r] -= f * rhs[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = rhs[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    std::vector<double> pi(qp.design.cols, 0.0);
    for (std::size_t i = 0; i < k; ++i) pi[support[i]] = x[i];
    return pi;
}

}  // namespace detail

/**
 * Projected gradient with step 1/L on the simplex, with a monotone momentum
 * extrapolation (accepted only when it lowers the objective). Once the active
 * set stabilises, the KKT system on the support is solved directly and the
 * result is accepted if it is feasible and no worse up to rounding.
 */
inline QPResult solve_horizon_qp(const QPInstance& qp, int max_iters = 20000, double tol = 1e-9) {
    qp.validate();
    const std::size_t n = qp.group_size();
    const double lip = qp_lipschitz(qp);

    QPResult res;
    res.pi.assign(n, 1.0 / static_cast<double>(n));
    res.objective = qp.objective(res.pi);
    res.objective_trace.push_back(res.objective);

    std::vector<double> prev = res.pi;
    double t = 1.0;
    auto pg_step = [&](const std::vector<double>& x) {
        auto g = qp.gradient(x);
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = x[i] - g[i] / lip;
        return project_to_simplex(s);
    };
    auto try_polish = [&]() {
        std::vector<std::size_t> support;
        for (std::size_t i = 0; i < n; ++i)
            if (res.pi[i] > 0.0) support.push_back(i);
        auto cand = detail::solve_on_support(qp, support);
        if (cand.empty()) return false;
        for (double& x : cand) {
            if (x < -1e-12) return false;
            x = std::max(x, 0.0);
        }
        const double s = std::accumulate(cand.begin(), cand.end(), 0.0);
        for (double& x : cand) x /= s;
        const double f = qp.objective(cand);
        // The exact support solution can sit a rounding error above the iterate.
        if (f > res.objective + 1e-12 * (1.0 + std::abs(res.objective))) return false;
        const double r = projected_gradient_residual(qp, cand, lip);
        if (r > res.kkt_residual && r > tol) return false;
        res.pi = std::move(cand);
        res.objective = f;
        res.kkt_residual = r;
        res.objective_trace.push_back(f);
        return true;
    };

    res.kkt_residual = projected_gradient_residual(qp, res.pi, lip);
    for (int it = 1; it <= max_iters; ++it) {
        res.iterations = it;
        // Momentum point y = x + ((t_prev - 1)/t) (x - x_prev).
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = res.pi[i] + ((t - 1.0) / t_next) * (res.pi[i] - prev[i]);
        t = t_next;
        auto z = pg_step(project_to_simplex(y));
        double fz = qp.objective(z);
        if (fz > res.objective) {
            // momentum overshot: fall back to a plain step and restart momentum
            z = pg_step(res.pi);
            fz = qp.objective(z);
            t = 1.0;
        }
        prev = res.pi;
        if (fz <= res.objective) {
            res.pi = std::move(z);
            res.objective = fz;
        }
        res.objective_trace.push_back(res.objective);
        res.kkt_residual = projected_gradient_residual(qp, res.pi, lip);
        if (res.kkt_residual <= tol) {
            res.converged = true;
            break;
        }
        if (it % 50 == 0 && try_polish() && res.kkt_residual <= tol) {
            res.converged = true;
            break;
        }
    }
    if (res.converged) {
        try_polish();
    }
    return res;
}

}  // namespace cask
