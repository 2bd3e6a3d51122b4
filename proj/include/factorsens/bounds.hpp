#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/factor_model.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/regression.hpp"

namespace factorsens {

enum class RegionMode { factor, extreme, null_control };

inline const char* region_mode_name(RegionMode mode) {
    switch (mode) {
        case RegionMode::factor: return "factor";
        case RegionMode::extreme: return "extreme";
        case RegionMode::null_control: return "null_control";
    }
    return "?";
}

// Interval of treatment effects on a'Y compatible with the data under a given
// confounding budget. Always symmetric: [center - halfwidth, center + halfwidth].
struct IgnoranceRegion {
    std::string label;
    double center = 0.0;
    double halfwidth = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double r2_tu = 0.0;
    RegionMode mode = RegionMode::factor;
};

inline IgnoranceRegion make_region(std::string label, double center, double halfwidth,
                                   double r2, RegionMode mode) {
    IgnoranceRegion reg;
    reg.label = std::move(label);
    reg.center = center;
    reg.halfwidth = halfwidth;
    reg.lower = center - halfwidth;
    reg.upper = center + halfwidth;
    reg.r2_tu = r2;
    reg.mode = mode;
    return reg;
}

// sqrt(r2 / (1 - r2)): how much bias one unit of loading norm can carry per
// unit of treatment noise at confounding share r2.
inline double confounding_slope(double r2) {
    if (!(r2 >= 0.0 && r2 < 1.0))
        throw ValidationError("confounding budget r2 must lie in [0, 1)");
    return std::sqrt(r2 / (1.0 - r2));
}

// Bias of the a'Y effect estimate per unit treatment contrast when the
// treatment-confounder correlation vector is exactly rho:
//   a' gamma (I - rho rho')^{-1/2} rho * (t1 - t2) / sigma.
// (I - rho rho')^{-1/2} rho collapses to rho / sqrt(1 - ||rho||^2) because rho
// is an eigenvector of the rank-one update.
inline double exact_bias(const Eigen::Ref<const Eigen::MatrixXd>& gamma,
                         const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& rho, double sigma,
                         double dt) {
    if (gamma.cols() != rho.size()) throw ValidationError("exact_bias: rho length mismatch");
    if (gamma.rows() != a.size()) throw ValidationError("exact_bias: contrast length mismatch");
    const double r2 = rho.squaredNorm();
    if (!(r2 < 1.0)) throw ValidationError("exact_bias: ||rho||^2 must be < 1");
    if (!(sigma > 0.0)) throw ValidationError("exact_bias: sigma must be positive");
    return a.dot(gamma * rho) / std::sqrt(1.0 - r2) * dt / sigma;
}

// Worst-case absolute bias over all confounder configurations with
// ||rho||^2 <= r2, given the factor structure: (|dt|/sigma) * slope * ||a' gamma||.
inline double bias_bound(const FactorModel& fm, const ObservedFit& fit,
                         const SensitivityQuery& query) {
    if (query.contrast.weights.size() != fm.q())
        throw ValidationError("bias_bound: contrast length mismatch");
    return std::abs(query.treatment.delta()) / fit.sigma() * confounding_slope(query.r2) *
           fm.loading_norm(query.contrast.weights);
}

// Structure-free variant: replaces ||a' gamma|| by the full residual standard
// deviation of a'Y. Dominates bias_bound since a' delta a >= 0.
inline double extreme_bias_bound(const ObservedFit& fit, const SensitivityQuery& query) {
    const double s2 = fit.sigma2_ay(query.contrast.weights);
    return std::abs(query.treatment.delta()) / fit.sigma() * confounding_slope(query.r2) *
           std::sqrt(std::max(s2, 0.0));
}

inline IgnoranceRegion ignorance_region(const FactorModel& fm, const ObservedFit& fit,
                                        const SensitivityQuery& query,
                                        RegionMode mode = RegionMode::factor) {
    validate_query(query, fm.q());
    if (mode == RegionMode::null_control)
        throw ValidationError("ignorance_region: null_control mode requires the "
                              "null-control analysis entry point");
    const double center =
        query.contrast.weights.dot(fit.tau_check) * query.treatment.delta();
    const double hw = mode == RegionMode::factor ? bias_bound(fm, fit, query)
                                                 : extreme_bias_bound(fit, query);
    return make_region(query.contrast.label, center, hw, query.r2, mode);
}

struct GlobalBound {
    double bound = 0.0;
    Eigen::VectorXd worst_contrast;  // unit norm, deterministic sign
};

// Bound on the bias for *every* unit-norm contrast simultaneously, with the
// contrast that attains it (top left singular vector of gamma).
inline GlobalBound global_bound(const FactorModel& fm, const ObservedFit& fit,
                                const TreatmentContrast& tc, double r2) {
    validate_treatment_contrast(tc);
    const double slope = confounding_slope(r2);
    GlobalBound gb;
    if (fm.m() == 0) {
        gb.bound = 0.0;
        gb.worst_contrast = Eigen::VectorXd::Zero(fm.q());
        if (fm.q() > 0) gb.worst_contrast[0] = 1.0;
        return gb;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fm.gamma, Eigen::ComputeFullU);
    gb.bound = std::abs(tc.delta()) / fit.sigma() * slope * svd.singularValues()[0];
    gb.worst_contrast = canonical_sign(svd.matrixU().col(0));
    return gb;
}

// Orthonormal basis of contrasts a with a' gamma = 0: effects on these
// combinations are point identified no matter how strong the confounding.
inline Eigen::MatrixXd identified_contrasts(const FactorModel& fm,
                                            double tol = kPinvTolDefault) {
    const Eigen::Index q = fm.q();
    if (fm.m() == 0) return Eigen::MatrixXd::Identity(q, q);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fm.gamma, Eigen::ComputeFullU);
    const auto& sv = svd.singularValues();
    const double cutoff = (sv.size() ? sv[0] : 0.0) * tol;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > cutoff) ++rank;
    if (rank >= q)
        throw ValidationError("identified_contrasts: loading matrix has full row rank; "
                              "the identified subspace is empty");
    Eigen::MatrixXd basis(q, q - rank);
    for (Eigen::Index k = 0; k < q - rank; ++k)
        basis.col(k) = canonical_sign(svd.matrixU().col(rank + k));
    return basis;
}

// Per-covariate-group loadings for the heteroscedastic bound. One loading
// matrix per group of X values, used at both treatment levels.
struct HeteroGroup {
    Eigen::MatrixXd gamma;  // q x m
    double mu_t = 0.0;      // E[T | X in group]
    double weight = 0.0;
};

// Worst-case bias when loadings vary with covariates:
// (1/sigma) * slope * sum_g w_g * ||a' gamma_g|| * (|t1 - mu_g| + |t2 - mu_g|).
inline double hetero_bias_bound(const std::vector<HeteroGroup>& groups,
                                const Eigen::Ref<const Eigen::VectorXd>& a,
                                const TreatmentContrast& tc, double r2, double sigma) {
    if (groups.empty()) throw ValidationError("hetero_bias_bound: no groups supplied");
    if (!(sigma > 0.0)) throw ValidationError("hetero_bias_bound: sigma must be positive");
    validate_treatment_contrast(tc);
    double wsum = 0.0;
    for (const auto& g : groups) {
        if (g.weight < 0.0) throw ValidationError("hetero_bias_bound: negative group weight");
        if (g.gamma.rows() != a.size())
            throw ValidationError("hetero_bias_bound: loading shape mismatch");
        wsum += g.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-8)
        throw ValidationError("hetero_bias_bound: group weights must sum to 1");
    const double slope = confounding_slope(r2);
    double total = 0.0;
    for (const auto& g : groups) {
        const double norm = (g.gamma.transpose() * a).norm();
        total += g.weight * norm * (std::abs(tc.t1 - g.mu_t) + std::abs(tc.t2 - g.mu_t));
    }
    return slope / sigma * total;
}

} // namespace factorsens
