#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/rng.hpp"

namespace factorsens {

// Rank-m factor decomposition of the outcome residual covariance:
// Cov(residuals) = gamma gamma' + diag(delta).
//
// gamma is identified only up to right-rotation (gamma R for orthogonal R fits
// identically). Downstream quantities must depend on it only through
// rotation-invariant functionals: gamma gamma', ||a' gamma||, singular values.
// Anything reading raw entries of gamma is on its own.
struct FactorModel {
    Eigen::MatrixXd gamma;  // q x m; rotation-dependent, see note above
    Eigen::VectorXd delta;  // q; idiosyncratic variances
    double loglik = std::numeric_limits<double>::quiet_NaN();
    Eigen::Index n_used = 0;
    std::vector<double> loglik_trace;  // per-iteration EM diagnostics, empty if not from EM

    Eigen::Index q() const { return gamma.rows(); }
    Eigen::Index m() const { return gamma.cols(); }

    double loading_norm(const Eigen::Ref<const Eigen::VectorXd>& a) const {
        return (gamma.transpose() * a).norm();
    }

    Eigen::MatrixXd gram() const { return gamma * gamma.transpose(); }

    // Implied residual covariance gamma gamma' + diag(delta).
    Eigen::MatrixXd covariance() const {
        Eigen::MatrixXd c = gram();
        c.diagonal() += delta;
        return c;
    }
};

inline void validate_factor_model(const FactorModel& fm) {
    if (fm.delta.size() != fm.q())
        throw ValidationError("factor model: delta length does not match gamma rows");
    if (!fm.gamma.allFinite() || !fm.delta.allFinite())
        throw ValidationError("factor model: non-finite entries");
    for (Eigen::Index j = 0; j < fm.delta.size(); ++j)
        if (fm.delta[j] < 0.0)
            throw ValidationError("factor model: negative idiosyncratic variance");
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fm.covariance());
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw ValidationError("factor model: implied covariance is not positive definite");
}

inline FactorModel make_factor_model(Eigen::MatrixXd gamma, Eigen::VectorXd delta) {
    FactorModel fm;
    fm.gamma = std::move(gamma);
    fm.delta = std::move(delta);
    validate_factor_model(fm);
    return fm;
}

// Share of the residual variance of a'Y attributed to the latent factors.
inline double outcome_r2(const FactorModel& fm, const Eigen::Ref<const Eigen::VectorXd>& a) {
    if (a.size() != fm.q()) throw ValidationError("outcome_r2: contrast length mismatch");
    const double common = (fm.gamma.transpose() * a).squaredNorm();
    const double idio = a.array().square().matrix().dot(fm.delta);
    const double total = common + idio;
    return total > 0.0 ? common / total : 0.0;
}

namespace detail {

inline double gaussian_loglik(const Eigen::Ref<const Eigen::MatrixXd>& cov,
                              const Eigen::Ref<const Eigen::MatrixXd>& sample_cov,
                              Eigen::Index n) {
    const Eigen::Index q = cov.rows();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericError("factor model covariance lost positive definiteness");
    const double logdet = ldlt.vectorD().array().log().sum();
    const double trace_term = ldlt.solve(sample_cov).trace();
    constexpr double log2pi = 1.8378770664093454836;
    return -0.5 * static_cast<double>(n) *
           (static_cast<double>(q) * log2pi + logdet + trace_term);
}

} // namespace detail

struct EmOptions {
    int max_iter = 5000;
    double rel_tol = 1e-9;          // on successive log-likelihoods
    double delta_floor_frac = 1e-6; // floor = frac * sample variance, per outcome
};

// Maximum-likelihood factor analysis of a residual matrix by EM.
// Idiosyncratic variances are floored at a small fraction of each sample
// variance, which both blocks Heywood collapse and keeps the implied
// covariance invertible.
inline FactorModel fit_factor_em(const Eigen::Ref<const Eigen::MatrixXd>& residuals,
                                 Eigen::Index m, const EmOptions& opts = {}) {
    const Eigen::Index n = residuals.rows(), q = residuals.cols();
    if (q < 1) throw ValidationError("fit_factor_em: no outcome columns");
    if (n <= q) throw ValidationError("fit_factor_em: need more rows than outcomes");
    if (m < 0 || m > q) throw ValidationError("fit_factor_em: rank must lie in [0, q]");
    if (!residuals.allFinite()) throw ValidationError("fit_factor_em: non-finite residuals");

    const Eigen::MatrixXd s = sample_covariance(residuals);
    Eigen::VectorXd floor(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        if (!(s(j, j) > 0.0))
            throw ValidationError("fit_factor_em: residual column " + std::to_string(j + 1) +
                                  " has zero variance");
        floor[j] = opts.delta_floor_frac * s(j, j);
    }

    FactorModel fm;
    fm.n_used = n;
    if (m == 0) {
        fm.gamma.resize(q, 0);
        fm.delta = s.diagonal();
        fm.loglik = detail::gaussian_loglik(Eigen::MatrixXd(fm.delta.asDiagonal()), s, n);
        fm.loglik_trace.push_back(fm.loglik);
        return fm;
    }

    // principal-components start on the residual correlation scale
    const Eigen::VectorXd sd = s.diagonal().cwiseSqrt();
    const Eigen::MatrixXd corr =
        sd.cwiseInverse().asDiagonal() * s * sd.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
    if (es.info() != Eigen::Success) throw NumericError("fit_factor_em: PCA start failed");
    Eigen::MatrixXd gamma(q, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index src = q - 1 - k;  // eigenvalues ascend in Eigen
        const double ev = std::max(es.eigenvalues()[src], 1e-12);
        gamma.col(k) = sd.asDiagonal() * es.eigenvectors().col(src) * std::sqrt(ev);
    }
    Eigen::VectorXd delta =
        (s.diagonal() - gamma.rowwise().squaredNorm()).cwiseMax(floor);

    auto loglik_at = [&](const Eigen::MatrixXd& g, const Eigen::VectorXd& dl) {
        Eigen::MatrixXd cov = g * g.transpose();
        cov.diagonal() += dl;
        return detail::gaussian_loglik(cov, s, n);
    };

    double ll = loglik_at(gamma, delta);
    fm.loglik_trace.push_back(ll);
    bool converged = false;
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        // E-step in covariance form
        const Eigen::MatrixXd psi_inv_gamma = delta.cwiseInverse().asDiagonal() * gamma;
        Eigen::MatrixXd msmall = gamma.transpose() * psi_inv_gamma;
        msmall.diagonal().array() += 1.0;
        const Eigen::MatrixXd g_inv = msmall.llt().solve(Eigen::MatrixXd::Identity(m, m));
        const Eigen::MatrixXd beta = g_inv * psi_inv_gamma.transpose();  // m x q
        const Eigen::MatrixXd beta_s = beta * s;                         // m x q
        const Eigen::MatrixXd ezz = g_inv + beta_s * beta.transpose();   // m x m

        // M-step
        const Eigen::MatrixXd gamma_new =
            ezz.llt().solve(beta_s).transpose();  // q x m, = S beta' ezz^{-1}
        const Eigen::VectorXd delta_new =
            (s.diagonal() - (gamma_new.array() * beta_s.transpose().array()).rowwise().sum().matrix())
                .cwiseMax(floor);

        const double ll_new = loglik_at(gamma_new, delta_new);
        if (ll_new < ll - 1e-9 * (1.0 + std::abs(ll)))
            throw NumericError("fit_factor_em: log-likelihood decreased (iteration " +
                               std::to_string(iter + 1) + ")");
        gamma = gamma_new;
        delta = delta_new;
        fm.loglik_trace.push_back(ll_new);
        if (std::abs(ll_new - ll) <= opts.rel_tol * (1.0 + std::abs(ll_new))) {
            ll = ll_new;
            converged = true;
            break;
        }
        ll = ll_new;
    }
    if (!converged) {
        // Overparameterized fits climb a flat ridge where per-iteration gains
        // decay sublinearly; accept the plateau if progress has effectively
        // stopped, and fail only when the fit is still moving.
        const std::size_t k = fm.loglik_trace.size();
        const double last_gain =
            k >= 2 ? std::abs(fm.loglik_trace[k - 1] - fm.loglik_trace[k - 2])
                   : std::numeric_limits<double>::infinity();
        if (last_gain > 1e-6 * (1.0 + std::abs(ll)))
            throw NumericError("fit_factor_em: no convergence within " +
                               std::to_string(opts.max_iter) + " iterations");
    }
    fm.gamma = std::move(gamma);
    fm.delta = std::move(delta);
    fm.loglik = ll;
    return fm;
}

struct IdentifiabilityReport {
    bool dimension_ok = false;     // (q - m)^2 >= q + m
    bool row_deletion_ok = false;  // every row-deleted loading matrix still holds
                                   // two disjoint rank-m row blocks
    bool exhaustive = true;        // false when the greedy certificate was used (q > 20)
    Eigen::VectorXd per_outcome_r2;
};

namespace detail {

inline Eigen::Index rank_at_scale(const Eigen::Ref<const Eigen::MatrixXd>& block,
                                  double cutoff) {
    if (block.rows() == 0 || block.cols() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > cutoff) ++r;
    return r;
}

// Do the given rows contain two *disjoint* subsets each spanning rank m?
// Equivalent to: some m-subset has rank m and its complement has rank m.
inline bool has_two_disjoint_rank_m_blocks(const Eigen::MatrixXd& rows, Eigen::Index m,
                                           double cutoff, bool exhaustive) {
    const Eigen::Index r = rows.rows();
    if (m == 0) return true;
    if (r < 2 * m) return false;
    if (rank_at_scale(rows, cutoff) < m) return false;

    auto rows_of = [&](const std::vector<Eigen::Index>& idx) {
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(idx.size()), rows.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = rows.row(idx[i]);
        return sub;
    };

    if (!exhaustive) {
        // greedy certificate: build one rank-m subset row by row, then test the rest
        std::vector<Eigen::Index> picked;
        Eigen::MatrixXd acc(0, rows.cols());
        for (Eigen::Index i = 0; i < r && static_cast<Eigen::Index>(picked.size()) < m; ++i) {
            Eigen::MatrixXd trial(acc.rows() + 1, rows.cols());
            trial.topRows(acc.rows()) = acc;
            trial.row(acc.rows()) = rows.row(i);
            if (rank_at_scale(trial, cutoff) > rank_at_scale(acc, cutoff)) {
                acc = trial;
                picked.push_back(i);
            }
        }
        if (static_cast<Eigen::Index>(picked.size()) < m) return false;
        std::vector<Eigen::Index> rest;
        for (Eigen::Index i = 0; i < r; ++i)
            if (std::find(picked.begin(), picked.end(), i) == picked.end()) rest.push_back(i);
        return rank_at_scale(rows_of(rest), cutoff) >= m;
    }

    // exhaustive over m-subsets
    std::vector<Eigen::Index> comb(m);
    std::iota(comb.begin(), comb.end(), 0);
    while (true) {
        if (rank_at_scale(rows_of(comb), cutoff) == m) {
            std::vector<Eigen::Index> rest;
            for (Eigen::Index i = 0; i < r; ++i)
                if (std::find(comb.begin(), comb.end(), i) == comb.end()) rest.push_back(i);
            if (rank_at_scale(rows_of(rest), cutoff) >= m) return true;
        }
        // next combination
        Eigen::Index k = m - 1;
        while (k >= 0 && comb[k] == r - m + k) --k;
        if (k < 0) break;
        ++comb[k];
        for (Eigen::Index j = k + 1; j < m; ++j) comb[j] = comb[j - 1] + 1;
    }
    return false;
}

} // namespace detail

// Checks the counting condition (q - m)^2 >= q + m and the row-deletion
// condition (after deleting any single row of gamma the remainder still
// contains two disjoint rank-m blocks). Failures are reported, never fatal:
// downstream bounds stay valid, the factorization is just not unique.
inline IdentifiabilityReport check_identifiability(const FactorModel& fm, double tol = 1e-8) {
    const Eigen::Index q = fm.q(), m = fm.m();
    IdentifiabilityReport rep;
    rep.dimension_ok = (q - m) * (q - m) - q - m >= 0;
    rep.per_outcome_r2.resize(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        Eigen::VectorXd ej = Eigen::VectorXd::Zero(q);
        ej[j] = 1.0;
        rep.per_outcome_r2[j] = outcome_r2(fm, ej);
    }
    rep.exhaustive = q <= 20;

    if (m == 0) {
        rep.row_deletion_ok = true;
        return rep;
    }
    double smax = 0.0;
    {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(fm.gamma);
        smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
    }
    if (smax <= 0.0) {
        rep.row_deletion_ok = false;
        return rep;
    }
    const double cutoff = tol * smax;
    rep.row_deletion_ok = true;
    for (Eigen::Index drop = 0; drop < q && rep.row_deletion_ok; ++drop) {
        Eigen::MatrixXd rest(q - 1, m);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < q; ++i)
            if (i != drop) rest.row(r++) = fm.gamma.row(i);
        if (!detail::has_two_disjoint_rank_m_blocks(rest, m, cutoff, rep.exhaustive))
            rep.row_deletion_ok = false;
    }
    return rep;
}

struct RankRow {
    Eigen::Index m = 0;
    double bic = 0.0;
    double cv_loglik = 0.0;  // mean held-out per-row log-likelihood
    double cv_se = 0.0;      // standard error over folds
};

struct RankSelection {
    Eigen::Index selected = 0;
    std::vector<RankRow> rows;
    bool clipped = false;  // m_max reduced to the largest identifiable rank
};

inline Eigen::Index max_identifiable_rank(Eigen::Index q) {
    Eigen::Index best = 0;
    for (Eigen::Index m = 0; m <= q; ++m)
        if ((q - m) * (q - m) - q - m >= 0) best = m;
    return best;
}

// K-fold cross-validated rank selection with the one-standard-error rule:
// pick the smallest rank whose held-out log-likelihood is within one standard
// error of the best.
inline RankSelection select_rank(const Eigen::Ref<const Eigen::MatrixXd>& residuals,
                                 Eigen::Index m_max, std::uint64_t seed = 0,
                                 int kfold = 5, const EmOptions& opts = {}) {
    const Eigen::Index n = residuals.rows(), q = residuals.cols();
    if (kfold < 2) throw ValidationError("select_rank: need at least 2 folds");
    if (n < kfold * 2) throw ValidationError("select_rank: too few rows for cross-validation");
    if (m_max < 0) throw ValidationError("select_rank: negative m_max");

    RankSelection sel;
    const Eigen::Index cap = max_identifiable_rank(q);
    if (m_max > cap) {
        m_max = cap;
        sel.clipped = true;
    }

    // deterministic fold assignment: seeded shuffle, then round-robin
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed ^ 0x5e1ec7f01dULL));
    for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);

    std::vector<std::vector<Eigen::Index>> folds(kfold);
    for (Eigen::Index i = 0; i < n; ++i) folds[i % kfold].push_back(order[i]);

    constexpr double log2pi = 1.8378770664093454836;
    for (Eigen::Index m = 0; m <= m_max; ++m) {
        RankRow row;
        row.m = m;
        std::vector<double> fold_scores;
        for (int k = 0; k < kfold; ++k) {
            Eigen::MatrixXd train(n - static_cast<Eigen::Index>(folds[k].size()), q);
            Eigen::MatrixXd held(static_cast<Eigen::Index>(folds[k].size()), q);
            Eigen::Index tr = 0, he = 0;
            std::vector<bool> in_fold(n, false);
            for (Eigen::Index i : folds[k]) in_fold[i] = true;
            for (Eigen::Index i = 0; i < n; ++i)
                (in_fold[i] ? held.row(he++) : train.row(tr++)) = residuals.row(i);

            const FactorModel fm = fit_factor_em(train, m, opts);
            const Eigen::RowVectorXd mu = train.colwise().mean();
            Eigen::LDLT<Eigen::MatrixXd> ldlt(fm.covariance());
            const double logdet = ldlt.vectorD().array().log().sum();
            double total = 0.0;
            for (Eigen::Index i = 0; i < held.rows(); ++i) {
                const Eigen::VectorXd x = (held.row(i) - mu).transpose();
                total += -0.5 * (static_cast<double>(q) * log2pi + logdet +
                                 x.dot(ldlt.solve(x)));
            }
            fold_scores.push_back(total / static_cast<double>(held.rows()));
        }
        double mean = 0.0;
        for (double v : fold_scores) mean += v;
        mean /= static_cast<double>(kfold);
        double var = 0.0;
        for (double v : fold_scores) var += (v - mean) * (v - mean);
        var /= static_cast<double>(kfold - 1);
        row.cv_loglik = mean;
        row.cv_se = std::sqrt(var / static_cast<double>(kfold));

        const FactorModel full = fit_factor_em(residuals, m, opts);
        const double k_params =
            static_cast<double>(q * (m + 1)) - 0.5 * static_cast<double>(m * (m - 1));
        row.bic = -2.0 * full.loglik + k_params * std::log(static_cast<double>(n));
        sel.rows.push_back(row);
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < sel.rows.size(); ++i)
        if (sel.rows[i].cv_loglik > sel.rows[best].cv_loglik) best = i;
    const double threshold = sel.rows[best].cv_loglik - sel.rows[best].cv_se;
    for (const auto& row : sel.rows) {
        if (row.cv_loglik >= threshold) {
            sel.selected = row.m;
            break;
        }
    }
    return sel;
}

// Reattributes part of the idiosyncratic variance to the common factors:
// gamma' = chol(gamma gamma' + diag(d_extra)), delta' = delta - d_extra.
// Total covariance is unchanged; every ||a' gamma|| grows, so bounds built
// from the result are uniformly more conservative.
inline FactorModel inflate_loadings(const FactorModel& fm,
                                    const Eigen::Ref<const Eigen::VectorXd>& d_extra) {
    if (d_extra.size() != fm.q())
        throw ValidationError("inflate_loadings: d_extra length mismatch");
    for (Eigen::Index j = 0; j < d_extra.size(); ++j) {
        if (!(d_extra[j] >= 0.0))
            throw ValidationError("inflate_loadings: d_extra must be nonnegative");
        if (d_extra[j] > fm.delta[j] + 1e-12 * (1.0 + fm.delta[j]))
            throw ValidationError("inflate_loadings: d_extra exceeds idiosyncratic variance");
    }
    Eigen::MatrixXd g = fm.gram();
    g.diagonal() += d_extra;
    FactorModel out;
    out.gamma = psd_cholesky(g);
    out.delta = (fm.delta - d_extra).cwiseMax(0.0);
    out.loglik = fm.loglik;  // implied covariance identical
    out.n_used = fm.n_used;
    return out;
}

} // namespace factorsens
