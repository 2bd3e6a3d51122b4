// Robustness values: the confounding share needed to nullify an estimate
// under four conventions (equal shares, extreme outcome share, fitted factor
// structure, factor structure + null controls). Each closed form is checked
// against a bisection on its defining equation and against the region
// machinery (the region endpoint must touch zero at the robustness value).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "helpers.hpp"

using namespace factorsens;
using testutil::make_query;
using testutil::unit_vector;

namespace {

// bisect the increasing map r2 -> bound(r2) to the level |target|
double bisect_root(const std::function<double(double)>& bound, double target) {
    double lo = 0.0, hi = 1.0 - 1e-14;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (bound(mid) >= std::abs(target) ? hi : lo) = mid;
    }
    return hi;
}

// a small instance with f^2 = 1 for both equal-share conventions
ObservedFit unit_f2_fit() {
    Eigen::VectorXd tau_check(2);
    tau_check << 1.0, 0.3;
    return ObservedFit::from_components(tau_check, 1.0, Eigen::MatrixXd::Identity(2, 2));
}

} // namespace

TEST_CASE("equal-shares robustness value at f^2 = 1", "[robustness]") {
    const ObservedFit fit = unit_f2_fit();
    const TreatmentContrast tc{1.0, 0.0};
    const double rv1 = rv_single(fit, unit_vector(2, 0), tc);
    // golden-ratio root of z^2/(1-z) = 1
    REQUIRE(rv1 == Catch::Approx(0.618034).margin(1e-6));
    REQUIRE(rv1 == Catch::Approx(0.5 * (std::sqrt(5.0) - 1.0)).margin(1e-12));

    const double xrv = rv_extreme(fit, unit_vector(2, 0), tc);
    REQUIRE(xrv == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("equal-shares and extreme values solve their defining equations", "[robustness]") {
    Rng rng(31101);
    for (int rep = 0; rep < 50; ++rep) {
        const Eigen::Index q = 4;
        const FactorModel fm = testutil::random_factor_model(q, 2, rng);
        const Eigen::VectorXd tau_check = rng.normal_vector(q);
        const double sigma2 = 0.5 + rng.uniform();
        const ObservedFit fit = ObservedFit::from_components(tau_check, sigma2, fm.covariance());
        const TreatmentContrast tc{0.3 + rng.uniform(), -0.5};
        const Eigen::VectorXd a = rng.normal_vector(q);
        const double target = a.dot(tau_check) * tc.delta();
        const double s_ay = std::sqrt(fit.sigma2_ay(a));

        // equal shares: bias(z) = (z / sqrt(1 - z)) * |dt| / sigma * sigma_aY
        const double rv1 = rv_single(fit, a, tc);
        const auto eq_bias = [&](double z) {
            return z / std::sqrt(1.0 - z) * std::abs(tc.delta()) / fit.sigma() * s_ay;
        };
        REQUIRE(eq_bias(rv1) == Catch::Approx(std::abs(target)).margin(1e-9 * (1.0 + std::abs(target))));
        REQUIRE(rv1 == Catch::Approx(bisect_root(eq_bias, target)).margin(1e-10));

        // extreme: the structure-free region endpoint reaches zero exactly at xrv
        const double xrv = rv_extreme(fit, a, tc);
        const auto ex_bias = [&](double z) {
            SensitivityQuery query = make_query(a, z, {}, tc);
            return extreme_bias_bound(fit, query);
        };
        REQUIRE(ex_bias(xrv) == Catch::Approx(std::abs(target)).margin(1e-9 * (1.0 + std::abs(target))));
        REQUIRE(xrv == Catch::Approx(bisect_root(ex_bias, target)).margin(1e-10));
        const auto reg = ignorance_region(fm, fit, make_query(a, xrv, {}, tc), RegionMode::extreme);
        REQUIRE(std::min(std::abs(reg.lower), std::abs(reg.upper)) <
                1e-9 * (1.0 + std::abs(reg.center)));

        REQUIRE(xrv <= rv1 + 1e-12);
    }
}

TEST_CASE("factor-structured robustness value", "[robustness]") {
    SECTION("worked example: omega = 1 gives 0.5") {
        Eigen::MatrixXd gamma(2, 2);
        gamma << 1.0, 0.0, 0.0, 1.0;
        const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(2));
        Eigen::VectorXd tau_check(2);
        tau_check << 1.0, -0.4;
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const auto rv = rv_gamma(fm, fit, unit_vector(2, 0), TreatmentContrast{1.0, 0.0});
        REQUIRE(rv.status == RvStatus::finite);
        REQUIRE(rv.value.has_value());
        REQUIRE(*rv.value == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("region endpoint reaches zero at the robustness value") {
        Rng rng(31102);
        for (int rep = 0; rep < 50; ++rep) {
            const Eigen::Index q = 5;
            const FactorModel fm = testutil::random_factor_model(q, 2, rng);
            const Eigen::VectorXd tau_check = rng.normal_vector(q);
            const ObservedFit fit =
                ObservedFit::from_components(tau_check, 0.5 + rng.uniform(), fm.covariance());
            const TreatmentContrast tc{1.0 + rng.uniform(), 0.0};
            const Eigen::VectorXd a = rng.normal_vector(q);

            const auto rv = rv_gamma(fm, fit, a, tc);
            REQUIRE(rv.value.has_value());
            const auto reg = ignorance_region(fm, fit, make_query(a, *rv.value, {}, tc));
            REQUIRE(std::min(std::abs(reg.lower), std::abs(reg.upper)) <
                    1e-9 * (1.0 + std::abs(reg.center)));

            // bisection on the factor-structured bound agrees
            const auto fac_bias = [&](double z) {
                return bias_bound(fm, fit, make_query(a, z, {}, tc));
            };
            REQUIRE(*rv.value ==
                    Catch::Approx(bisect_root(fac_bias, a.dot(tau_check) * tc.delta()))
                        .margin(1e-10));
        }
    }

    SECTION("identified contrasts have no finite robustness value") {
        Eigen::MatrixXd gamma(3, 1);
        gamma << 1.0, 0.0, 0.0;
        const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(3));
        Eigen::VectorXd tau_check(3);
        tau_check << 0.5, 0.2, 0.0;
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const TreatmentContrast tc{1.0, 0.0};

        const auto nonzero = rv_gamma(fm, fit, unit_vector(3, 1), tc);
        REQUIRE(nonzero.status == RvStatus::identified_nonzero);
        REQUIRE_FALSE(nonzero.value.has_value());

        const auto zero = rv_gamma(fm, fit, unit_vector(3, 2), tc);
        REQUIRE(zero.status == RvStatus::identified_zero);
        REQUIRE(zero.value.has_value());
        REQUIRE(*zero.value == 0.0);
    }
}

TEST_CASE("extreme value never exceeds the factor-structured value", "[robustness]") {
    Rng rng(31103);
    for (int rep = 0; rep < 30; ++rep) {
        const Eigen::Index q = 4;
        const FactorModel fm = testutil::random_factor_model(q, 2, rng);
        const Eigen::VectorXd tau_check = rng.normal_vector(q);
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const TreatmentContrast tc{1.0, 0.0};
        const Eigen::VectorXd a = rng.normal_vector(q);

        const double xrv = rv_extreme(fit, a, tc);
        const auto rvg = rv_gamma(fm, fit, a, tc);
        REQUIRE(rvg.value.has_value());
        REQUIRE(xrv <= *rvg.value + 1e-12);

        // pushing all idiosyncratic variance into the loadings makes them equal
        const FactorModel flat = inflate_loadings(fm, fm.delta);
        REQUIRE(flat.delta.norm() < 1e-12);
        const auto rvg_flat = rv_gamma(flat, fit, a, tc);
        REQUIRE(rvg_flat.value.has_value());
        REQUIRE(xrv == Catch::Approx(*rvg_flat.value).margin(1e-12));
    }
}

TEST_CASE("robustness values are invariant to contrast scaling", "[robustness]") {
    Rng rng(31104);
    const Eigen::Index q = 5;
    const FactorModel fm = testutil::random_factor_model(q, 2, rng);
    const Eigen::VectorXd tau_check = rng.normal_vector(q);
    const ObservedFit fit = ObservedFit::from_components(tau_check, 1.2, fm.covariance());
    const TreatmentContrast tc{2.0, -1.0};
    const Eigen::VectorXd a = rng.normal_vector(q);
    const Eigen::VectorXd a3 = 3.0 * a;
    const std::vector<Eigen::Index> controls = {1};

    REQUIRE(rv_single(fit, a, tc) == Catch::Approx(rv_single(fit, a3, tc)).margin(1e-12));
    REQUIRE(rv_extreme(fit, a, tc) == Catch::Approx(rv_extreme(fit, a3, tc)).margin(1e-12));
    REQUIRE(*rv_gamma(fm, fit, a, tc).value ==
            Catch::Approx(*rv_gamma(fm, fit, a3, tc).value).margin(1e-12));
    REQUIRE(*rv_combined(fm, fit, a, tc, controls).value ==
            Catch::Approx(*rv_combined(fm, fit, a3, tc, controls).value).margin(1e-12));
}

TEST_CASE("robustness values grow with the apparent effect", "[robustness]") {
    Eigen::MatrixXd gamma(2, 2);
    gamma << 1.0, 0.0, 0.0, 1.0;
    const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(2));
    const TreatmentContrast tc{1.0, 0.0};
    double prev1 = -1.0, prevx = -1.0, prevg = -1.0;
    for (double t : {0.2, 0.6, 1.0, 1.8, 3.0}) {
        Eigen::VectorXd tau_check(2);
        tau_check << t, 0.1;
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const double v1 = rv_single(fit, unit_vector(2, 0), tc);
        const double vx = rv_extreme(fit, unit_vector(2, 0), tc);
        const double vg = *rv_gamma(fm, fit, unit_vector(2, 0), tc).value;
        REQUIRE(v1 > prev1);
        REQUIRE(vx > prevx);
        REQUIRE(vg > prevg);
        prev1 = v1;
        prevx = vx;
        prevg = vg;
    }
}

TEST_CASE("combined robustness value with null controls", "[robustness]") {
    const TreatmentContrast tc{1.0, 0.0};

    SECTION("empty control set reduces to the factor-structured value") {
        Rng rng(31105);
        const FactorModel fm = testutil::random_factor_model(4, 2, rng);
        const Eigen::VectorXd tau_check = rng.normal_vector(4);
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const Eigen::VectorXd a = rng.normal_vector(4);
        const auto combined = rv_combined(fm, fit, a, tc, {});
        const auto plain = rv_gamma(fm, fit, a, tc);
        REQUIRE(combined.value == plain.value);
        REQUIRE(combined.status == plain.status);
    }

    SECTION("corrected estimate of zero collapses to the control minimum") {
        Eigen::MatrixXd gamma(3, 2);
        gamma << 1.0, 0.0, 0.0, 1.0, 1.0, 1.0;
        const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(3));
        Eigen::VectorXd tau_check(3);
        tau_check << 0.6, -0.2, 0.6;  // outcome 3's effect is exactly the implied correction
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const auto nca = analyze_null_controls(fm, fit, {0}, tc);
        const auto rc = rv_combined(fm, fit, unit_vector(3, 2), tc, {0});
        REQUIRE(rc.status == RvStatus::finite);
        REQUIRE(rc.value.has_value());
        REQUIRE(*rc.value == Catch::Approx(nca.r2_min).margin(1e-14));
    }

    SECTION("combined value dominates both ingredients") {
        Rng rng(31106);
        for (int rep = 0; rep < 40; ++rep) {
            const Eigen::Index q = 5;
            const FactorModel fm = testutil::random_factor_model(q, 2, rng);
            const Eigen::VectorXd tau_check = rng.normal_vector(q);
            const ObservedFit fit =
                ObservedFit::from_components(tau_check, 0.5 + rng.uniform(), fm.covariance());
            const Eigen::VectorXd a = rng.normal_vector(q);
            const std::vector<Eigen::Index> controls = {0};

            const auto rc = rv_combined(fm, fit, a, tc, controls);
            REQUIRE(rc.status == RvStatus::finite);
            const auto nca = analyze_null_controls(fm, fit, controls, tc);
            const auto rvg = rv_gamma(fm, fit, a, tc);
            REQUIRE(*rc.value >= nca.r2_min - 1e-12);
            REQUIRE(*rc.value >= *rvg.value - 1e-10);
        }
    }

    SECTION("matches the direction-grid oracle on the stacked constraints") {
        Rng rng(31107);
        for (int rep = 0; rep < 20; ++rep) {
            const Eigen::Index q = 4, m = 2;
            const FactorModel fm = testutil::random_factor_model(q, m, rng);
            const Eigen::VectorXd tau_check = rng.normal_vector(q);
            const double sigma2 = 0.5 + rng.uniform();
            const ObservedFit fit = ObservedFit::from_components(tau_check, sigma2, fm.covariance());
            const Eigen::VectorXd a = rng.normal_vector(q);
            const std::vector<Eigen::Index> controls = {0};

            const auto rc = rv_combined(fm, fit, a, tc, controls);
            REQUIRE(rc.status == RvStatus::finite);

            // nullifying a'Y while explaining the control = two bias constraints
            Eigen::MatrixXd rows(2, m);
            rows.row(0) = fm.gamma.row(0);
            rows.row(1) = (fm.gamma.transpose() * a).transpose();
            Eigen::VectorXd rhs(2);
            rhs << tau_check[0] * tc.delta(), a.dot(tau_check) * tc.delta();
            const auto oracle = oracle_constrained_min(rows, rhs, fit.sigma(), tc.delta());
            REQUIRE(oracle.has_value());
            REQUIRE(*rc.value == Catch::Approx(*oracle).margin(1e-4));
        }
    }

    SECTION("null-control region endpoint reaches zero at the combined value") {
        Rng rng(31108);
        for (int rep = 0; rep < 25; ++rep) {
            const Eigen::Index q = 5, m = 2;
            const FactorModel fm = testutil::random_factor_model(q, m, rng);
            const Eigen::VectorXd tau_check = rng.normal_vector(q);
            const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
            const Eigen::VectorXd a = rng.normal_vector(q);
            const std::vector<Eigen::Index> controls = {2};

            const auto rc = rv_combined(fm, fit, a, tc, controls);
            REQUIRE(rc.status == RvStatus::finite);
            const auto reg =
                nc_ignorance_region(fm, fit, make_query(a, *rc.value, controls, tc));
            REQUIRE(std::min(std::abs(reg.lower), std::abs(reg.upper)) <
                    1e-9 * (1.0 + std::abs(reg.center)));
        }
    }

    SECTION("contrasts pinned by the controls are flagged, not valued") {
        Eigen::MatrixXd gamma(3, 2);
        gamma << 1.0, 0.0, 2.0, 0.0, 0.0, 1.0;
        const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(3));

        // outcome 2's loading is collinear with the control's, so its bias is
        // pinned: corrected effect nonzero -> no share can nullify it
        Eigen::VectorXd tau_check(3);
        tau_check << 0.5, 0.3, 0.2;
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const auto pinned = rv_combined(fm, fit, unit_vector(3, 1), tc, {0});
        REQUIRE(pinned.status == RvStatus::identified_nonzero);
        REQUIRE_FALSE(pinned.value.has_value());

        // corrected effect zero -> nullified by exactly the control minimum
        tau_check << 0.5, 1.0, 0.2;
        const ObservedFit fit2 = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        const auto nca = analyze_null_controls(fm, fit2, {0}, tc);
        const auto pinned_zero = rv_combined(fm, fit2, unit_vector(3, 1), tc, {0});
        REQUIRE(pinned_zero.status == RvStatus::identified_zero);
        REQUIRE(pinned_zero.value.has_value());
        REQUIRE(*pinned_zero.value == Catch::Approx(nca.r2_min).margin(1e-14));
    }

    SECTION("infeasible control sets are rejected") {
        Eigen::MatrixXd gamma(3, 1);
        gamma << 1.0, 1.0, 0.5;
        const FactorModel fm = make_factor_model(gamma, Eigen::VectorXd::Ones(3));
        Eigen::VectorXd tau_check(3);
        tau_check << 1.0, 2.0, 0.1;
        const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
        REQUIRE_THROWS_AS(rv_combined(fm, fit, unit_vector(3, 2), tc, {0, 1}), InfeasibleError);
    }
}

TEST_CASE("robustness report aggregates and orders the values", "[robustness]") {
    Rng rng(31109);
    const Eigen::Index q = 5;
    const FactorModel fm = testutil::random_factor_model(q, 2, rng);
    const Eigen::VectorXd tau_check = rng.normal_vector(q);
    const ObservedFit fit = ObservedFit::from_components(tau_check, 1.0, fm.covariance());
    const TreatmentContrast tc{1.0, 0.0};
    const Eigen::VectorXd a = rng.normal_vector(q);
    const std::vector<Eigen::Index> controls = {0};

    const auto rep = report_robustness(fm, fit, a, tc, controls);
    REQUIRE(rep.status == RvStatus::finite);
    REQUIRE(rep.rv_gamma.has_value());
    REQUIRE(rep.rv_combined.has_value());
    REQUIRE(rep.r2_min.has_value());
    REQUIRE(rep.xrv <= rep.rv1 + 1e-12);
    REQUIRE(rep.xrv <= *rep.rv_gamma + 1e-6);
    REQUIRE(*rep.rv_combined >= *rep.rv_gamma - 1e-8);
    REQUIRE(*rep.rv_combined >= *rep.r2_min - 1e-12);

    // values agree with the direct entry points
    REQUIRE(rep.rv1 == rv_single(fit, a, tc));
    REQUIRE(rep.xrv == rv_extreme(fit, a, tc));
    REQUIRE(*rep.rv_gamma == *rv_gamma(fm, fit, a, tc).value);
    REQUIRE(*rep.rv_combined == *rv_combined(fm, fit, a, tc, controls).value);

    // bootstrap lower substitutes replace the point values
    RobustnessLower lower;
    lower.rv1 = 0.01;
    lower.rv_gamma = 0.02;
    const auto rep2 = report_robustness(fm, fit, a, tc, {}, &lower);
    REQUIRE(rep2.rv1 == 0.01);
    REQUIRE(*rep2.rv_gamma == 0.02);
    REQUIRE(rep2.xrv == rep.xrv);
}

TEST_CASE("combined value of a second true null estimates the real confounding",
          "[robustness][slow]") {
    // With rank-2 loadings and one control, the orthogonal complement of the
    // control row is one-dimensional, so for a *true-null* target the
    // leftover bias term and the control-explained term recombine exactly to
    // ||rho~||^2: the population combined value equals the generating budget.
    // At n = 1000 the estimate should concentrate there.
    const Eigen::Index q = 10, m = 2;
    const double r2_true = 0.5;
    const int reps = 50;

    Rng gamma_rng(61999);
    Eigen::MatrixXd gamma = gamma_rng.normal_matrix(q, m);
    Eigen::VectorXd tau = Eigen::VectorXd::Ones(q);
    tau[0] = 0.0;
    tau[1] = 0.0;

    std::vector<double> values;
    values.reserve(reps);
    for (int rep = 0; rep < reps; ++rep) {
        SimConfig cfg;
        cfg.n = 1000;
        cfg.q = q;
        cfg.m = m;
        cfg.gamma_true = gamma;
        cfg.tau_true = tau;
        cfg.rho_norm2 = r2_true;
        cfg.seed = 61000 + static_cast<std::uint64_t>(rep);
        const auto sf = testutil::simulate_and_fit(cfg, m);
        const TreatmentContrast tc{1.0, 0.0};
        const auto rc = rv_combined(sf.fm, sf.fit, unit_vector(q, 1), tc, {0});
        const auto nca = analyze_null_controls(sf.fm, sf.fit, {0}, tc);
        REQUIRE(rc.status == RvStatus::finite);
        REQUIRE(*rc.value >= nca.r2_min - 1e-10);  // exact library invariant
        values.push_back(*rc.value);
    }
    REQUIRE(values.size() == static_cast<std::size_t>(reps));
    std::sort(values.begin(), values.end());
    const double median = values[values.size() / 2];
    INFO("median combined value: " << median << ", generating budget: " << r2_true);
    REQUIRE(std::abs(median - r2_true) < 0.05);
}
