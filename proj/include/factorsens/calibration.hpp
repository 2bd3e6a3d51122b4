#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/regression.hpp"

namespace factorsens {

// Parameters of the implied selection-odds distribution for binary
// treatments: log lambda(x, U) is a two-component normal mixture with
// means +-mu_lambda, common variance sigma2_lambda, and weights given by the
// average propensity.
struct LambdaParams {
    double mu_lambda = 0.0;
    double sigma2_lambda = 0.0;
    double mean_propensity = 0.5;

    static LambdaParams from_r2(double r2, double sigma2, double mean_propensity) {
        if (!(r2 >= 0.0 && r2 < 1.0))
            throw ValidationError("lambda params: r2 must lie in [0, 1)");
        if (!(sigma2 > 0.0)) throw ValidationError("lambda params: sigma2 must be positive");
        if (!(mean_propensity > 0.0 && mean_propensity < 1.0))
            throw ValidationError("lambda params: mean propensity must lie in (0, 1)");
        LambdaParams lp;
        const double slope2 = r2 / (1.0 - r2);
        lp.mu_lambda = 0.5 / sigma2 * slope2;
        lp.sigma2_lambda = slope2 / sigma2;  // = 2 * mu_lambda by construction
        lp.mean_propensity = mean_propensity;
        return lp;
    }
};

// P(|log lambda| <= band) under the mixture. Algebraically independent of the
// mixture weight (the two components are reflections of each other), but the
// full weighted form is evaluated anyway.
inline double lambda_band_mass(const LambdaParams& lp, double band) {
    if (band < 0.0) return 0.0;
    if (lp.sigma2_lambda <= 0.0) return 1.0;  // point mass at log lambda = 0
    const double sd = std::sqrt(lp.sigma2_lambda);
    const double w = lp.mean_propensity;
    const double up = normal_cdf((band - lp.mu_lambda) / sd) -
                      normal_cdf((-band - lp.mu_lambda) / sd);
    const double dn = normal_cdf((band + lp.mu_lambda) / sd) -
                      normal_cdf((-band + lp.mu_lambda) / sd);
    return w * up + (1.0 - w) * dn;
}

// Smallest Lambda >= 1 with P(Lambda^{-1} <= lambda(X,U) <= Lambda) >= 1 - alpha.
inline double lambda_alpha(double r2, double sigma2, double mean_propensity, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValidationError("lambda_alpha: alpha must lie in (0, 1)");
    const LambdaParams lp = LambdaParams::from_r2(r2, sigma2, mean_propensity);
    if (lp.sigma2_lambda <= 0.0) return 1.0;  // r2 = 0: lambda is identically 1
    const double target = 1.0 - alpha;
    auto short_mass = [&](double big_lambda) {
        return lambda_band_mass(lp, std::log(big_lambda)) - target;
    };
    constexpr double lo = 1.0, hi = 1e6;
    if (short_mass(hi) < 0.0)
        throw NumericError("lambda_alpha: bracket [1, 1e6] does not cover the quantile");
    if (short_mass(lo) >= 0.0) return 1.0;
    return bisect(short_mass, lo, hi, 1e-10);
}

// Same map applied to a robustness value: how large an odds-ratio violation
// the reported robustness corresponds to.
inline double rv_to_lambda(double rv, double sigma2, double mean_propensity, double alpha) {
    return lambda_alpha(rv, sigma2, mean_propensity, alpha);
}

namespace detail {

inline std::vector<Eigen::Index> check_covariate_set(const Dataset& d,
                                                     const std::vector<Eigen::Index>& js) {
    if (js.empty()) throw ValidationError("partial R2: empty covariate set");
    std::set<Eigen::Index> seen;
    for (Eigen::Index j : js) {
        if (j < 0 || j >= d.p())
            throw ValidationError("partial R2: covariate index out of range");
        if (!seen.insert(j).second) throw ValidationError("partial R2: duplicate covariate index");
    }
    return std::vector<Eigen::Index>(seen.begin(), seen.end());
}

inline Eigen::MatrixXd drop_columns(const Eigen::MatrixXd& x,
                                    const std::vector<Eigen::Index>& drop) {
    Eigen::MatrixXd out(x.rows(), x.cols() - static_cast<Eigen::Index>(drop.size()));
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (std::find(drop.begin(), drop.end(), j) == drop.end()) out.col(c++) = x.col(j);
    }
    return out;
}

inline double partial_r2_from_designs(const Eigen::MatrixXd& full, const Eigen::MatrixXd& reduced,
                                      const Eigen::VectorXd& y) {
    const double rss_full = least_squares_rss(full, y);
    const double rss_red = least_squares_rss(reduced, y);
    if (rss_red <= 1e-12 * y.squaredNorm()) return 0.0;  // reduced model already saturates
    return std::clamp((rss_red - rss_full) / rss_red, 0.0, 1.0);
}

} // namespace detail

// Share of the otherwise-unexplained treatment variance attributable to
// covariate set js: benchmark for how strong an omitted confounder would have
// to be relative to an observed covariate.
inline double partial_r2_treatment(const Dataset& d, const std::vector<Eigen::Index>& js) {
    const auto drop = detail::check_covariate_set(d, js);
    if (sample_sd(d.treatment) <= 0.0)
        throw ValidationError("partial_r2_treatment: treatment has zero variance");
    const Eigen::Index n = d.n();
    Eigen::MatrixXd full(n, 1 + d.p());
    full.col(0).setOnes();
    if (d.p() > 0) full.rightCols(d.p()) = d.covariates;
    const Eigen::MatrixXd reduced =
        detail::drop_columns(full, [&] {
            std::vector<Eigen::Index> shifted;
            for (Eigen::Index j : drop) shifted.push_back(j + 1);  // skip intercept
            return shifted;
        }());
    return detail::partial_r2_from_designs(full, reduced, d.treatment);
}

// Outcome-side analogue: share of the residual variance of a'Y (given T and
// the other covariates) explained by covariate set js.
inline double partial_r2_outcome(const Dataset& d, const Contrast& a,
                                 const std::vector<Eigen::Index>& js) {
    validate_contrast(a, d.q());
    const auto drop = detail::check_covariate_set(d, js);
    const Eigen::Index n = d.n();
    const Eigen::VectorXd y = d.outcomes * a.weights;
    if (sample_sd(y) <= 0.0)
        throw ValidationError("partial_r2_outcome: contrast outcome has zero variance");
    Eigen::MatrixXd full(n, 2 + d.p());
    full.col(0).setOnes();
    full.col(1) = d.treatment;
    if (d.p() > 0) full.rightCols(d.p()) = d.covariates;
    const Eigen::MatrixXd reduced =
        detail::drop_columns(full, [&] {
            std::vector<Eigen::Index> shifted;
            for (Eigen::Index j : drop) shifted.push_back(j + 2);  // skip intercept, T
            return shifted;
        }());
    return detail::partial_r2_from_designs(full, reduced, y);
}

// One row of the covariate benchmarking table.
struct BenchmarkRow {
    std::string covariate;
    double partial_r2_treatment = 0.0;
    Eigen::VectorXd partial_r2_outcomes;  // per outcome
    std::optional<double> lambda_quantile;
};

// Empirical (1 - alpha) quantile of max(r, 1/r) where r is the per-unit
// fitted-odds ratio between the full propensity model and one refit without
// the reference covariate(s). alpha = 1 returns the minimum ratio (documented
// edge: the least any unit's odds moved).
inline double benchmark_lambda(const Dataset& d, const PropensityModel& pm_full,
                               const PropensityModel& pm_reduced, double alpha) {
    if (!d.binary_treatment)
        throw ValidationError("benchmark_lambda: treatment is not binary");
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw ValidationError("benchmark_lambda: alpha must lie in (0, 1]");
    if (pm_full.fitted.size() != d.n() || pm_reduced.fitted.size() != d.n())
        throw ValidationError("benchmark_lambda: propensity models were not fitted "
                              "on the same rows as the dataset");
    std::vector<double> ratios(static_cast<std::size_t>(d.n()));
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        const double of = pm_full.fitted[i] / (1.0 - pm_full.fitted[i]);
        const double orr = pm_reduced.fitted[i] / (1.0 - pm_reduced.fitted[i]);
        const double r = of / orr;
        ratios[static_cast<std::size_t>(i)] = std::max(r, 1.0 / r);
    }
    return percentile(std::move(ratios), 1.0 - alpha);
}

} // namespace factorsens
