#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/bounds.hpp"
#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/factor_model.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/regression.hpp"

namespace factorsens {

// Everything derived from designating a subset of outcomes as null controls
// (known zero treatment effect): the control block of the loadings, the
// minimal confounding share that can explain the controls' apparent effects,
// and the projector onto the confounder directions the controls leave free.
struct NullControlAnalysis {
    std::vector<Eigen::Index> controls;
    Eigen::MatrixXd gamma_c;      // c x m control rows of gamma
    Eigen::VectorXd tau_c;        // c; apparent control effects in contrast units
    double r2_min = 0.0;
    Eigen::VectorXd pinv_tau;     // m; gamma_c^+ tau_c
    Eigen::MatrixXd projector;    // m x m; P = I - gamma_c^+ gamma_c
    double colspace_residual = 0.0;  // ||tau_c - gamma_c gamma_c^+ tau_c||
    bool feasible = true;
    double tol = kPinvTolDefault;
};

inline NullControlAnalysis analyze_null_controls(const FactorModel& fm, const ObservedFit& fit,
                                                 const std::vector<Eigen::Index>& controls,
                                                 const TreatmentContrast& tc,
                                                 double tol = kPinvTolDefault) {
    const Eigen::Index q = fm.q(), m = fm.m();
    const auto c = static_cast<Eigen::Index>(controls.size());
    if (c == 0) throw ValidationError("analyze_null_controls: empty control set");
    if (c >= q) throw ValidationError("analyze_null_controls: control set covers all outcomes");
    validate_treatment_contrast(tc);

    NullControlAnalysis nca;
    nca.controls = controls;
    nca.tol = tol;
    nca.gamma_c.resize(c, m);
    nca.tau_c.resize(c);
    for (Eigen::Index i = 0; i < c; ++i) {
        const Eigen::Index j = controls[static_cast<std::size_t>(i)];
        if (j < 0 || j >= q)
            throw ValidationError("analyze_null_controls: control index out of range");
        nca.gamma_c.row(i) = fm.gamma.row(j);
        nca.tau_c[i] = fit.tau_check[j] * tc.delta();
    }

    const Eigen::MatrixXd pinv = pseudo_inverse(nca.gamma_c, tol);  // m x c
    nca.pinv_tau = pinv * nca.tau_c;
    nca.projector = Eigen::MatrixXd::Identity(m, m) - pinv * nca.gamma_c;
    nca.colspace_residual = (nca.tau_c - nca.gamma_c * nca.pinv_tau).norm();

    // The apparent control effects must be reproducible by *some* confounder:
    // tau_c in colspace(gamma_c). With c <= m and full row rank this holds
    // automatically; otherwise the scaled residual decides.
    const double tau_scale = nca.tau_c.norm();
    nca.feasible = tau_scale == 0.0 || nca.colspace_residual <= tol * tau_scale ||
                   nca.colspace_residual <= 1e-300;

    const double s2 = fit.sigma2 * nca.pinv_tau.squaredNorm();
    const double dt2 = tc.delta() * tc.delta();
    nca.r2_min = s2 / (dt2 + s2);
    return nca;
}

namespace detail {

inline double nc_halfwidth(const FactorModel& fm, const ObservedFit& fit,
                           const NullControlAnalysis& nca,
                           const Eigen::Ref<const Eigen::VectorXd>& a, double r2, double dt) {
    const double slope2 = r2 / (1.0 - r2);
    const double min_slope2 = nca.r2_min / (1.0 - nca.r2_min);
    const double radicand = dt * dt / fit.sigma2 * (slope2 - min_slope2);
    const double proj_norm = (nca.projector.transpose() * (fm.gamma.transpose() * a)).norm();
    return proj_norm * std::sqrt(std::max(radicand, 0.0));
}

} // namespace detail

// Theorem-2-style region: recentered by the bias correction the controls pin
// down, shrunk to the confounder directions they leave unconstrained.
// allow_projection downgrades an infeasible control constraint to a warning by
// projecting tau_c onto colspace(gamma_c); the region is then heuristic.
inline IgnoranceRegion nc_ignorance_region(const FactorModel& fm, const ObservedFit& fit,
                                           const SensitivityQuery& query,
                                           double tol = kPinvTolDefault,
                                           bool allow_projection = false) {
    validate_query(query, fm.q());
    if (query.null_controls.empty())
        throw ValidationError("nc_ignorance_region: query has no null controls");
    const NullControlAnalysis nca =
        analyze_null_controls(fm, fit, query.null_controls, query.treatment, tol);
    if (!nca.feasible && !allow_projection)
        throw InfeasibleError(
            "null-control constraints are infeasible: apparent control effects lie "
            "outside the column space of the control loadings (scaled residual " +
            std::to_string(nca.colspace_residual / std::max(nca.tau_c.norm(), 1e-300)) + ")");
    if (query.r2 < nca.r2_min - 1e-12)
        throw InfeasibleError("confounding budget " + std::to_string(query.r2) +
                              " is below the minimum " + std::to_string(nca.r2_min) +
                              " required to explain the null-control effects");

    const auto& a = query.contrast.weights;
    const double dt = query.treatment.delta();
    const double center = a.dot(fit.tau_check) * dt - a.dot(fm.gamma * nca.pinv_tau);
    const double hw = detail::nc_halfwidth(fm, fit, nca, a, query.r2, dt);
    return make_region(query.contrast.label, center, hw, query.r2, RegionMode::null_control);
}

// Overload for callers holding a precomputed analysis (bootstrap loops).
inline IgnoranceRegion nc_ignorance_region(const FactorModel& fm, const ObservedFit& fit,
                                           const NullControlAnalysis& nca,
                                           const SensitivityQuery& query,
                                           bool allow_projection = false) {
    validate_query(query, fm.q());
    if (!nca.feasible && !allow_projection)
        throw InfeasibleError("null-control constraints are infeasible");
    if (query.r2 < nca.r2_min - 1e-12)
        throw InfeasibleError("confounding budget below the null-control minimum");
    const auto& a = query.contrast.weights;
    const double dt = query.treatment.delta();
    const double center = a.dot(fit.tau_check) * dt - a.dot(fm.gamma * nca.pinv_tau);
    const double hw = detail::nc_halfwidth(fm, fit, nca, a, query.r2, dt);
    return make_region(query.contrast.label, center, hw, query.r2, RegionMode::null_control);
}

// By how much the null controls shrink the plain ignorance region for
// contrast a: nc halfwidth = factor * plain halfwidth. Empty optional means
// the contrast is identified (zero loading norm, factor undefined).
inline std::optional<double> width_reduction_factor(const FactorModel& fm,
                                                    const Eigen::Ref<const Eigen::VectorXd>& a,
                                                    const NullControlAnalysis& nca, double r2,
                                                    double /*sigma*/, double /*dt*/) {
    if (!(r2 >= 0.0 && r2 < 1.0))
        throw ValidationError("width_reduction_factor: r2 must lie in [0, 1)");
    if (r2 < nca.r2_min - 1e-12)
        throw InfeasibleError("width_reduction_factor: budget below the null-control minimum");
    const Eigen::VectorXd ga = fm.gamma.transpose() * a;
    const double norm = ga.norm();
    if (norm <= 0.0) return std::nullopt;
    const double proj_ratio = (nca.projector.transpose() * ga).norm() / norm;
    double slope_ratio = 0.0;
    if (r2 > 0.0)
        slope_ratio = (nca.r2_min / (1.0 - nca.r2_min)) / (r2 / (1.0 - r2));
    return std::sqrt(std::max(0.0, 1.0 - slope_ratio)) * proj_ratio;
}

} // namespace factorsens
