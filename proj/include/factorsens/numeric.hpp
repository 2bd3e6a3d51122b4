#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "factorsens/errors.hpp"

namespace factorsens {

inline constexpr double kPinvTolDefault = 1e-8;  // relative to largest singular value

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

// Linear-interpolation percentile (R type 7) on an unsorted sample, p in [0,1].
inline double percentile(std::vector<double> xs, double p) {
    if (xs.empty()) throw ValidationError("percentile: empty sample");
    p = std::clamp(p, 0.0, 1.0);
    std::sort(xs.begin(), xs.end());
    const double h = p * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    if (lo == hi) return xs[lo];
    const double w = h - static_cast<double>(lo);
    return (1.0 - w) * xs[lo] + w * xs[hi];
}

// Column-centered sample covariance with n-1 denominator.
inline Eigen::MatrixXd sample_covariance(const Eigen::Ref<const Eigen::MatrixXd>& x) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw ValidationError("sample_covariance: need at least 2 rows");
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    return (centered.transpose() * centered) / static_cast<double>(n - 1);
}

inline double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::Index n = x.size();
    if (n < 2) throw ValidationError("sample_sd: need at least 2 values");
    const double mean = x.mean();
    const double ss = (x.array() - mean).square().sum();
    return std::sqrt(ss / static_cast<double>(n - 1));
}

// Moore-Penrose pseudo-inverse via SVD. Singular values below
// tol * s_max are treated as zero.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::Ref<const Eigen::MatrixXd>& m,
                                      double tol = kPinvTolDefault) {
    if (m.size() == 0) return Eigen::MatrixXd(m.cols(), m.rows());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = tol * (sv.size() > 0 ? sv[0] : 0.0);
    Eigen::VectorXd inv = sv;
    for (Eigen::Index i = 0; i < inv.size(); ++i)
        inv[i] = sv[i] > cutoff && sv[i] > 0.0 ? 1.0 / sv[i] : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Eigen::Index matrix_rank(const Eigen::Ref<const Eigen::MatrixXd>& m,
                                double tol = kPinvTolDefault) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    const double cutoff = tol * sv[0];
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > cutoff) ++r;
    return r;
}

// Lower-triangular Cholesky factor of a symmetric positive *semi*definite
// matrix; rank-deficient columns come out zero. Plain LLT rejects singular
// inputs, which inflated loading matrices legitimately are.
inline Eigen::MatrixXd psd_cholesky(const Eigen::Ref<const Eigen::MatrixXd>& g) {
    const Eigen::Index n = g.rows();
    if (g.cols() != n) throw ValidationError("psd_cholesky: matrix must be square");
    const double scale = std::max(g.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    const double tol = 1e-12 * scale;
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = g(j, j) - l.row(j).head(j).squaredNorm();
        if (d < -1e-8 * scale)
            throw NumericError("psd_cholesky: matrix is not positive semidefinite");
        if (d <= tol) continue;  // zero column, rank deficiency
        d = std::sqrt(d);
        l(j, j) = d;
        for (Eigen::Index i = j + 1; i < n; ++i)
            l(i, j) = (g(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / d;
    }
    return l;
}

// Symmetric PSD square root via eigendecomposition.
inline Eigen::MatrixXd sym_sqrt(const Eigen::Ref<const Eigen::MatrixXd>& g) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    if (es.info() != Eigen::Success) throw NumericError("sym_sqrt: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
            throw NumericError("sym_sqrt: matrix is not positive semidefinite");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Deterministic sign convention for vectors defined up to sign: flip so the
// largest-magnitude entry is positive (first such entry on ties).
inline Eigen::VectorXd canonical_sign(Eigen::VectorXd v) {
    Eigen::Index best = 0;
    double mag = -1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v[i]) > mag + 1e-15) {
            mag = std::abs(v[i]);
            best = i;
        }
    }
    if (v.size() > 0 && v[best] < 0.0) v = -v;
    return v;
}

// Bisection for a continuous monotone-sign function: requires f(lo), f(hi) of
// opposite sign. Returns a root within xtol.
template <typename F>
double bisect(F&& f, double lo, double hi, double xtol = 1e-12, int max_iter = 200) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0))
        throw NumericError("bisect: endpoints do not bracket a root");
    for (int it = 0; it < max_iter && hi - lo > xtol; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Golden-section minimization of a unimodal function on [lo, hi].
template <typename F>
double golden_min(F&& f, double lo, double hi, double xtol = 1e-10, int max_iter = 200) {
    constexpr double invphi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && b - a > xtol; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

} // namespace factorsens
