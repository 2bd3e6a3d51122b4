#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"

namespace factorsens {

// Everything the sensitivity machinery needs from the observed-data
// regressions: per-outcome OLS of Y on [1, T, X] and the treatment regression
// of T on [1, X].
struct ObservedFit {
    Eigen::MatrixXd coef;        // (p+2) x q; rows: intercept, treatment, covariates
    Eigen::MatrixXd residuals;   // n x q outcome residuals
    Eigen::VectorXd tau_check;   // q; treatment coefficients (confounded estimates)
    Eigen::MatrixXd resid_cov;   // q x q sample covariance of residuals (n-1)
    Eigen::VectorXd treatment_coef;  // p+1; T on [1, X]
    double sigma2 = 0.0;         // residual variance of T given X, n-p-1 denominator
    Eigen::Index n = 0, p = 0, q = 0;

    double sigma() const { return std::sqrt(sigma2); }

    // Residual variance of the outcome contrast a'Y given (T, X).
    double sigma2_ay(const Eigen::Ref<const Eigen::VectorXd>& a) const {
        if (a.size() != q) throw ValidationError("sigma2_ay: contrast length mismatch");
        return a.dot(resid_cov * a);
    }

    // Assembles a fit directly from model quantities; used when population
    // truth stands in for an estimated model.
    static ObservedFit from_components(Eigen::VectorXd tau_check, double sigma2,
                                       Eigen::MatrixXd resid_cov, Eigen::Index n = 0,
                                       Eigen::Index p = 0) {
        if (!(sigma2 > 0.0)) throw ValidationError("from_components: sigma2 must be positive");
        if (resid_cov.rows() != resid_cov.cols() || resid_cov.rows() != tau_check.size())
            throw ValidationError("from_components: shape mismatch");
        ObservedFit fit;
        fit.q = tau_check.size();
        fit.n = n;
        fit.p = p;
        fit.tau_check = std::move(tau_check);
        fit.sigma2 = sigma2;
        fit.resid_cov = std::move(resid_cov);
        fit.coef.resize(0, fit.q);
        fit.residuals.resize(0, fit.q);
        fit.treatment_coef.resize(0);
        return fit;
    }
};

namespace detail {

inline Eigen::MatrixXd design_matrix(const Dataset& d, bool with_treatment) {
    const Eigen::Index n = d.n(), p = d.p();
    Eigen::MatrixXd design(n, (with_treatment ? 2 : 1) + p);
    design.col(0).setOnes();
    Eigen::Index c = 1;
    if (with_treatment) design.col(c++) = d.treatment;
    if (p > 0) design.rightCols(p) = d.covariates;
    return design;
}

inline std::string design_column_name(const Dataset& d, Eigen::Index col) {
    if (col == 0) return "(intercept)";
    if (col == 1) return d.treatment.size() ? "treatment" : "";
    return d.covariate_names[static_cast<std::size_t>(col - 2)];
}

} // namespace detail

inline ObservedFit fit_observed(const Dataset& d) {
    const Eigen::Index n = d.n(), p = d.p(), q = d.q();
    if (n < p + 3) throw ValidationError("fit_observed: need n >= p + 3");

    const Eigen::MatrixXd design = detail::design_matrix(d, true);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(kPinvTolDefault);
    if (qr.rank() < design.cols()) {
        // name the columns past the pivoted rank: they are linear combinations
        // of the ones before them
        std::string offenders;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < design.cols(); ++k) {
            if (!offenders.empty()) offenders += ", ";
            offenders += detail::design_column_name(d, perm[k]);
        }
        throw ValidationError("design matrix [1, treatment, covariates] is rank deficient; "
                              "dependent columns: " + offenders);
    }

    ObservedFit fit;
    fit.n = n;
    fit.p = p;
    fit.q = q;
    fit.coef = qr.solve(d.outcomes);
    fit.residuals = d.outcomes - design * fit.coef;
    fit.tau_check = fit.coef.row(1).transpose();
    fit.resid_cov = sample_covariance(fit.residuals);

    const Eigen::MatrixXd tdesign = detail::design_matrix(d, false);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> tqr(tdesign);
    fit.treatment_coef = tqr.solve(d.treatment);
    const double rss = (d.treatment - tdesign * fit.treatment_coef).squaredNorm();
    fit.sigma2 = rss / static_cast<double>(n - p - 1);
    if (!(fit.sigma2 > 0.0))
        throw ValidationError("treatment is perfectly explained by covariates "
                              "(zero residual variance)");
    return fit;
}

// Logistic propensity model e(x) = P(T = 1 | X = x).
struct PropensityModel {
    Eigen::VectorXd coef;    // p+1; intercept first
    Eigen::VectorXd fitted;  // n; clamped to [1e-12, 1 - 1e-12]
    double loglik = 0.0;
    double mean_propensity = 0.0;
};

inline PropensityModel fit_propensity(const Dataset& d) {
    if (!d.binary_treatment)
        throw ValidationError("fit_propensity: dataset is not marked binary");
    const Eigen::Index n = d.n(), p = d.p();
    const double tsum = d.treatment.sum();
    if (tsum == 0.0 || tsum == static_cast<double>(n))
        throw ValidationError("fit_propensity: treatment has a single class");

    const Eigen::MatrixXd design = detail::design_matrix(d, false);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
    constexpr double clamp = 1e-12;
    constexpr double grad_tol = 1e-8;
    constexpr int max_iter = 100;

    auto fitted_probs = [&](const Eigen::VectorXd& b) {
        Eigen::VectorXd eta = design * b;
        Eigen::VectorXd probs(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = 1.0 / (1.0 + std::exp(-eta[i]));
            probs[i] = std::min(1.0 - clamp, std::max(clamp, e));
        }
        return probs;
    };
    auto loglik_of = [&](const Eigen::VectorXd& probs) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            ll += d.treatment[i] > 0.5 ? std::log(probs[i]) : std::log(1.0 - probs[i]);
        return ll;
    };

    Eigen::VectorXd probs = fitted_probs(beta);
    double ll = loglik_of(probs);
    bool converged = false;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::VectorXd grad = design.transpose() * (d.treatment - probs);
        if (grad.norm() < grad_tol) {
            converged = true;
            break;
        }
        const Eigen::VectorXd w = probs.array() * (1.0 - probs.array());
        const Eigen::MatrixXd hess = design.transpose() * w.asDiagonal() * design;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
        if (ldlt.info() != Eigen::Success)
            throw NumericError("fit_propensity: singular Hessian");
        const Eigen::VectorXd step = ldlt.solve(grad);

        // step-halving keeps the likelihood monotone
        double scale = 1.0;
        Eigen::VectorXd cand;
        Eigen::VectorXd cand_probs;
        double cand_ll = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < 30; ++h) {
            cand = beta + scale * step;
            cand_probs = fitted_probs(cand);
            cand_ll = loglik_of(cand_probs);
            if (cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) break;
            scale *= 0.5;
        }
        beta = cand;
        probs = cand_probs;
        ll = cand_ll;
        if (beta.norm() > 1e4)
            throw NumericError("fit_propensity: coefficient norm exceeds 1e4; "
                               "perfect separation suspected");
    }
    if (!converged) {
        const Eigen::VectorXd grad = design.transpose() * (d.treatment - probs);
        if (grad.norm() >= grad_tol)
            throw NumericError("fit_propensity: Newton iteration did not converge");
    }

    // A finite logistic MLE exists only when the classes overlap. Clamping can
    // make the gradient vanish on separated data, so detect that case directly:
    // every observation fitted at numerical certainty toward its own label.
    bool separated = true;
    for (Eigen::Index i = 0; i < n && separated; ++i) {
        const double toward_label = d.treatment[i] > 0.5 ? probs[i] : 1.0 - probs[i];
        separated = toward_label >= 1.0 - 1e-6;
    }
    if (separated)
        throw NumericError(
            "fit_propensity: perfect separation (all fitted probabilities at 0 or 1)");

    PropensityModel pm;
    pm.coef = std::move(beta);
    pm.fitted = std::move(probs);
    pm.loglik = ll;
    pm.mean_propensity = pm.fitted.mean();
    return pm;
}

// Residual sum of squares from a minimum-norm least-squares fit; tolerant of
// rank-deficient designs (used by the calibration R-squared decompositions).
inline double least_squares_rss(const Eigen::Ref<const Eigen::MatrixXd>& design,
                                const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (design.rows() != y.size()) throw ValidationError("least_squares_rss: shape mismatch");
    if (design.cols() == 0) return y.squaredNorm();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(kPinvTolDefault);
    return (y - design * svd.solve(y)).squaredNorm();
}

} // namespace factorsens
