#pragma once

// Shared fixtures for the test suite: small synthetic models and datasets
// assembled from known quantities so expected values can be derived
// independently of the code under test.

#include <Eigen/Dense>

#include "factorsens/factorsens.hpp"

namespace testutil {

using namespace factorsens;

// A population "fit" assembled directly from model truth: residual covariance
// gamma gamma' + diag(delta), apparent effects tau + bias(rho).
struct TruthInstance {
    FactorModel fm;
    ObservedFit fit;
    Eigen::VectorXd tau;   // true per-unit effects
    Eigen::VectorXd rho;   // treatment-confounder correlations
    double sigma2 = 1.0;
    TreatmentContrast tc{1.0, 0.0};
};

inline TruthInstance make_truth_instance(const Eigen::MatrixXd& gamma,
                                         const Eigen::VectorXd& delta,
                                         const Eigen::VectorXd& tau,
                                         const Eigen::VectorXd& rho, double sigma2 = 1.0,
                                         TreatmentContrast tc = {1.0, 0.0}) {
    TruthInstance ti;
    ti.fm = make_factor_model(gamma, delta);
    ti.tau = tau;
    ti.rho = rho;
    ti.sigma2 = sigma2;
    ti.tc = tc;
    const double sigma = std::sqrt(sigma2);
    Eigen::VectorXd tau_check(gamma.rows());
    for (Eigen::Index j = 0; j < gamma.rows(); ++j) {
        // per-unit apparent effect = true effect + exact confounding bias
        Eigen::VectorXd e = Eigen::VectorXd::Zero(gamma.rows());
        e[j] = 1.0;
        tau_check[j] = tau[j] + exact_bias(gamma, e, rho, sigma, 1.0);
    }
    ti.fit = ObservedFit::from_components(tau_check, sigma2, ti.fm.covariance());
    return ti;
}

// Random loading matrix with entries ~ N(0,1) and delta ~ U(0.3, 1.3).
inline FactorModel random_factor_model(Eigen::Index q, Eigen::Index m, Rng& rng) {
    const Eigen::MatrixXd gamma = rng.normal_matrix(q, m);
    Eigen::VectorXd delta(q);
    for (Eigen::Index j = 0; j < q; ++j) delta[j] = 0.3 + rng.uniform();
    return make_factor_model(gamma, delta);
}

inline Eigen::VectorXd unit_vector(Eigen::Index q, Eigen::Index j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(q);
    e[j] = 1.0;
    return e;
}

inline SensitivityQuery make_query(Eigen::VectorXd weights, double r2,
                                   std::vector<Eigen::Index> controls = {},
                                   TreatmentContrast tc = {1.0, 0.0}) {
    SensitivityQuery query;
    query.contrast.weights = std::move(weights);
    query.contrast.label = "a";
    query.treatment = tc;
    query.r2 = r2;
    query.null_controls = std::move(controls);
    return query;
}

// Simulated dataset plus its sample-level fits.
struct SimFit {
    SimTruth truth;
    ObservedFit fit;
    FactorModel fm;
};

inline SimFit simulate_and_fit(const SimConfig& cfg, Eigen::Index fit_m) {
    SimFit sf;
    sf.truth = cfg.mediator_mix != 0.0 ? mediator_scenario(cfg) : generate(cfg);
    sf.fit = fit_observed(sf.truth.dataset);
    sf.fm = fit_factor_em(sf.fit.residuals, fit_m);
    return sf;
}

} // namespace testutil
