#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/bounds.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/factor_model.hpp"
#include "factorsens/null_controls.hpp"
#include "factorsens/regression.hpp"

namespace factorsens {

enum class RvStatus { finite, identified_zero, identified_nonzero };

inline const char* rv_status_name(RvStatus s) {
    switch (s) {
        case RvStatus::finite: return "finite";
        case RvStatus::identified_zero: return "identified_zero";
        case RvStatus::identified_nonzero: return "identified_nonzero";
    }
    return "?";
}

// Value plus degeneracy marker for robustness values whose defining
// minimization can have an empty or trivial constraint set.
struct RvResult {
    std::optional<double> value;
    RvStatus status = RvStatus::finite;
};

// Relative degeneracy threshold for ||a' gamma P|| (combined RV domain).
inline constexpr double kRvProjectionTol = 1e-8;

namespace detail {

// f^2 = sigma^2 (a' tau)^2 / sigma^2_{a'Y}; the treatment contrast cancels.
inline double rv_f2(const ObservedFit& fit, const Eigen::Ref<const Eigen::VectorXd>& a) {
    const double s2ay = fit.sigma2_ay(a);
    if (!(s2ay > 0.0)) throw ValidationError("robustness: residual variance of a'Y is zero");
    const double at = a.dot(fit.tau_check);
    return fit.sigma2 * at * at / s2ay;
}

} // namespace detail

// Confounding share that nullifies the point estimate under the equal-shares
// convention (treatment-side share == outcome-side share). Solves
// z^2 / (1 - z) = f^2 for z in [0, 1).
inline double rv_single(const ObservedFit& fit, const Eigen::Ref<const Eigen::VectorXd>& a,
                        const TreatmentContrast& tc) {
    validate_treatment_contrast(tc);
    const double f2 = detail::rv_f2(fit, a);
    return 0.5 * (std::sqrt(f2 * f2 + 4.0 * f2) - f2);
}

// Confounding share that nullifies the point estimate when the confounder may
// explain *all* residual outcome variance. Solves z / (1 - z) = f^2.
inline double rv_extreme(const ObservedFit& fit, const Eigen::Ref<const Eigen::VectorXd>& a,
                         const TreatmentContrast& tc) {
    validate_treatment_contrast(tc);
    const double f2 = detail::rv_f2(fit, a);
    return f2 / (1.0 + f2);
}

// Confounding share that nullifies the point estimate under the fitted factor
// structure: w / (1 + w) with w = sigma^2 (a' tau)^2 / ||a' gamma||^2. When
// ||a' gamma|| = 0 the effect is identified and no finite value exists.
inline RvResult rv_gamma(const FactorModel& fm, const ObservedFit& fit,
                         const Eigen::Ref<const Eigen::VectorXd>& a,
                         const TreatmentContrast& tc) {
    validate_treatment_contrast(tc);
    if (a.size() != fm.q()) throw ValidationError("rv_gamma: contrast length mismatch");
    const double norm2 = (fm.gamma.transpose() * a).squaredNorm();
    const double at = a.dot(fit.tau_check);
    RvResult r;
    if (norm2 <= 0.0) {
        r.status = at == 0.0 ? RvStatus::identified_zero : RvStatus::identified_nonzero;
        if (r.status == RvStatus::identified_zero) r.value = 0.0;
        return r;
    }
    const double w = fit.sigma2 * at * at / norm2;
    r.value = w / (1.0 + w);
    return r;
}

// Combined robustness: smallest confounding share that both explains the
// designated null-control effects *and* nullifies the corrected estimate for
// a. Requires the contrast loading to have a component outside the control
// row space; otherwise the corrected effect is identified outright.
inline RvResult rv_combined(const FactorModel& fm, const ObservedFit& fit,
                            const Eigen::Ref<const Eigen::VectorXd>& a,
                            const TreatmentContrast& tc,
                            const std::vector<Eigen::Index>& controls,
                            double tol = kPinvTolDefault) {
    if (controls.empty()) return rv_gamma(fm, fit, a, tc);
    const NullControlAnalysis nca = analyze_null_controls(fm, fit, controls, tc, tol);
    if (!nca.feasible)
        throw InfeasibleError("rv_combined: null-control constraints are infeasible");

    const double dt = tc.delta();
    const double corrected = a.dot(fit.tau_check) * dt - a.dot(fm.gamma * nca.pinv_tau);
    const Eigen::VectorXd ga = fm.gamma.transpose() * a;
    const double proj_norm = (nca.projector * ga).norm();

    RvResult r;
    if (proj_norm <= kRvProjectionTol * std::max(ga.norm(), 1e-300)) {
        // a' gamma inside rowspace(gamma_c): the control constraints pin the
        // bias of a'Y exactly
        const double scale = std::max({std::abs(a.dot(fit.tau_check) * dt),
                                       std::abs(a.dot(fm.gamma * nca.pinv_tau)), 1.0});
        if (std::abs(corrected) <= 1e-10 * scale) {
            r.status = RvStatus::identified_zero;
            r.value = nca.r2_min;  // the controls alone demand this much confounding
        } else {
            r.status = RvStatus::identified_nonzero;
        }
        return r;
    }
    const double w = fit.sigma2 / (dt * dt) *
                     (corrected * corrected / (proj_norm * proj_norm) +
                      nca.pinv_tau.squaredNorm());
    r.value = w / (1.0 + w);
    return r;
}

// Bootstrap lower-percentile substitutes, produced by the uncertainty module.
struct RobustnessLower {
    std::optional<double> rv1, xrv, rv_gamma, rv_combined;
};

struct RobustnessReport {
    double rv1 = 0.0;
    double xrv = 0.0;
    std::optional<double> rv_gamma;
    std::optional<double> rv_combined;
    std::optional<double> r2_min;
    RvStatus status = RvStatus::finite;
};

// Aggregates the four robustness values for one contrast. When lower-bound
// substitutes are supplied (bootstrap), values are conservatively replaced.
inline RobustnessReport report_robustness(const FactorModel& fm, const ObservedFit& fit,
                                          const Eigen::Ref<const Eigen::VectorXd>& a,
                                          const TreatmentContrast& tc,
                                          const std::vector<Eigen::Index>& controls,
                                          const RobustnessLower* lower = nullptr,
                                          double tol = kPinvTolDefault) {
    RobustnessReport rep;
    rep.rv1 = rv_single(fit, a, tc);
    rep.xrv = rv_extreme(fit, a, tc);
    const RvResult rg = rv_gamma(fm, fit, a, tc);
    rep.rv_gamma = rg.value;
    rep.status = rg.status;
    if (!controls.empty()) {
        const NullControlAnalysis nca = analyze_null_controls(fm, fit, controls, tc, tol);
        rep.r2_min = nca.r2_min;
        const RvResult rc = rv_combined(fm, fit, a, tc, controls, tol);
        rep.rv_combined = rc.value;
        if (rc.status != RvStatus::finite) rep.status = rc.status;
    }
    // Orderings implied by the definitions, checked on the point values only
    // (bootstrap substitutes come from different resampling distributions and
    // need not be ordered). The xrv/rv_gamma comparison mixes the empirical
    // residual variance with the fitted factor decomposition, which agree only
    // to EM tolerance, hence the slack.
    if (rep.rv_gamma && rep.xrv > *rep.rv_gamma + 1e-6)
        throw NumericError("report_robustness: xrv exceeds rv_gamma");
    if (rep.rv_gamma && rep.rv_combined && rep.status == RvStatus::finite &&
        *rep.rv_combined < *rep.rv_gamma - 1e-8)
        throw NumericError("report_robustness: rv_combined below rv_gamma");
    if (lower) {
        if (lower->rv1) rep.rv1 = *lower->rv1;
        if (lower->xrv) rep.xrv = *lower->xrv;
        if (lower->rv_gamma && rep.rv_gamma) rep.rv_gamma = *lower->rv_gamma;
        if (lower->rv_combined && rep.rv_combined) rep.rv_combined = *lower->rv_combined;
    }
    return rep;
}

} // namespace factorsens
