#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace factorsens;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Dataset small_random_dataset(Eigen::Index n, Eigen::Index q, Eigen::Index p,
                             std::uint64_t seed) {
    Rng rng(seed);
    return make_dataset(rng.normal_matrix(n, q), rng.normal_vector(n), rng.normal_matrix(n, p),
                        [&] {
                            std::vector<std::string> names;
                            for (Eigen::Index j = 0; j < q; ++j)
                                names.push_back("y" + std::to_string(j + 1));
                            return names;
                        }(),
                        [&] {
                            std::vector<std::string> names;
                            for (Eigen::Index j = 0; j < p; ++j)
                                names.push_back("x" + std::to_string(j + 1));
                            return names;
                        }(),
                        false);
}

} // namespace

TEST_CASE("noiseless linear data is recovered exactly", "[regression]") {
    Rng rng(5);
    const Eigen::Index n = 25;
    const Eigen::VectorXd t = rng.normal_vector(n);
    const Eigen::MatrixXd x = rng.normal_matrix(n, 1);
    Eigen::MatrixXd y(n, 1);
    y.col(0) = 2.0 * t + 3.0 * x.col(0);
    const Dataset d = make_dataset(y, t, x, {"y1"}, {"x1"}, false);
    const ObservedFit fit = fit_observed(d);
    REQUIRE_THAT(fit.tau_check[0], WithinAbs(2.0, 1e-10));
    REQUIRE(fit.residuals.cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE(fit.tau_check[0] == fit.coef(1, 0));  // treatment row, exactly
}

TEST_CASE("coefficients match a direct normal-equations solve", "[regression]") {
    const Dataset d = small_random_dataset(12, 3, 2, 17);
    const ObservedFit fit = fit_observed(d);

    // independent solve via the explicit Gram inverse
    Eigen::MatrixXd design(d.n(), 4);
    design.col(0).setOnes();
    design.col(1) = d.treatment;
    design.rightCols(2) = d.covariates;
    const Eigen::MatrixXd coef =
        (design.transpose() * design).inverse() * design.transpose() * d.outcomes;
    REQUIRE_THAT((fit.coef - coef).cwiseAbs().maxCoeff(), WithinAbs(0.0, 1e-10));

    // residual means vanish (intercept present)
    for (Eigen::Index j = 0; j < d.q(); ++j)
        REQUIRE_THAT(fit.residuals.col(j).mean(), WithinAbs(0.0, 1e-10));

    // sigma2: dof-corrected residual variance of T on [1, X]
    Eigen::MatrixXd tdesign(d.n(), 3);
    tdesign.col(0).setOnes();
    tdesign.rightCols(2) = d.covariates;
    const Eigen::VectorXd tcoef =
        (tdesign.transpose() * tdesign).inverse() * tdesign.transpose() * d.treatment;
    const double rss = (d.treatment - tdesign * tcoef).squaredNorm();
    REQUIRE_THAT(fit.sigma2, WithinRel(rss / static_cast<double>(d.n() - 3), 1e-10));

    // sigma2_ay agrees with the residual variance of the combined outcome
    Eigen::VectorXd a(3);
    a << 1.0, -0.5, 2.0;
    const Eigen::VectorXd combined = fit.residuals * a;
    REQUIRE_THAT(fit.sigma2_ay(a),
                 WithinRel(combined.squaredNorm() / static_cast<double>(d.n() - 1), 1e-10));
}

TEST_CASE("rank-deficient designs are reported with column names", "[regression]") {
    Rng rng(9);
    const Eigen::Index n = 20;
    const Eigen::MatrixXd x = rng.normal_matrix(n, 1);
    const Eigen::VectorXd t = 2.0 * x.col(0) + Eigen::VectorXd::Ones(n);
    const Dataset d =
        make_dataset(rng.normal_matrix(n, 2), t, x, {"y1", "y2"}, {"x1"}, false);
    REQUIRE_THROWS_WITH(fit_observed(d),
                        Catch::Matchers::ContainsSubstring("rank deficient"));
}

TEST_CASE("treatment rescaling and shifting behave as units demand", "[regression]") {
    const Dataset d = small_random_dataset(40, 2, 1, 23);
    const ObservedFit base = fit_observed(d);

    Dataset scaled = d;
    scaled.treatment *= 10.0;  // T in different units
    const ObservedFit fs = fit_observed(scaled);
    REQUIRE_THAT(fs.tau_check[0], WithinRel(base.tau_check[0] / 10.0, 1e-10));
    REQUIRE_THAT(fs.sigma2, WithinRel(base.sigma2 * 100.0, 1e-10));

    Dataset shifted = d;
    shifted.treatment.array() += 5.0;
    const ObservedFit fh = fit_observed(shifted);
    REQUIRE_THAT(fh.tau_check[0], WithinRel(base.tau_check[0], 1e-10));
    REQUIRE_THAT(fh.sigma2, WithinRel(base.sigma2, 1e-10));

    // per-contrast bias bound scales with |t1 - t2| linearly
    const FactorModel fm = fit_factor_em(base.residuals, 1);
    const auto q1 = testutil::make_query(testutil::unit_vector(2, 0), 0.3, {}, {1.0, 0.0});
    const auto q3 = testutil::make_query(testutil::unit_vector(2, 0), 0.3, {}, {4.0, 1.0});
    REQUIRE_THAT(bias_bound(fm, base, q3), WithinRel(3.0 * bias_bound(fm, base, q1), 1e-12));
}

TEST_CASE("logistic propensity matches the two-group closed form", "[regression]") {
    // X in {0,1}: group 0 has 5/10 treated (logit 0), group 1 has 12/16
    // treated (logit log 3). MLE: intercept 0, slope log 3.
    const Eigen::Index n = 26;
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < 10; ++i) {
        x(i, 0) = 0.0;
        t[i] = i < 5 ? 1.0 : 0.0;
    }
    for (Eigen::Index i = 10; i < 26; ++i) {
        x(i, 0) = 1.0;
        t[i] = i < 22 ? 1.0 : 0.0;
    }
    Rng rng(2);
    const Dataset d = make_dataset(rng.normal_matrix(n, 2), t, x, {"y1", "y2"}, {"x1"}, true);
    const PropensityModel pm = fit_propensity(d);
    REQUIRE_THAT(pm.coef[0], WithinAbs(0.0, 1e-6));
    REQUIRE_THAT(pm.coef[1], WithinAbs(std::log(3.0), 1e-6));
    REQUIRE_THAT(pm.mean_propensity, WithinRel(17.0 / 26.0, 1e-8));
    REQUIRE(pm.fitted.minCoeff() > 0.0);
    REQUIRE(pm.fitted.maxCoeff() < 1.0);
}

TEST_CASE("propensity error paths", "[regression]") {
    Rng rng(3);
    const Eigen::Index n = 12;
    Eigen::VectorXd all_one = Eigen::VectorXd::Ones(n);
    const Dataset single = make_dataset(rng.normal_matrix(n, 1), all_one,
                                        rng.normal_matrix(n, 1), {"y1"}, {"x1"}, true);
    REQUIRE_THROWS_AS(fit_propensity(single), ValidationError);

    // perfectly separated: T = 1 exactly when x > 0
    Eigen::MatrixXd x(n, 1);
    x.col(0) = Eigen::VectorXd::LinSpaced(n, -1.5, 1.5);
    Eigen::VectorXd t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = x(i, 0) > 0.0 ? 1.0 : 0.0;
    const Dataset sep = make_dataset(rng.normal_matrix(n, 1), t, x, {"y1"}, {"x1"}, true);
    REQUIRE_THROWS_AS(fit_propensity(sep), NumericError);

    const Dataset unflagged = make_dataset(rng.normal_matrix(n, 1), t, x, {"y1"}, {"x1"}, false);
    REQUIRE_THROWS_AS(fit_propensity(unflagged), ValidationError);
}
