#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace factorsens;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& content) {
    const fs::path path = fs::temp_directory_path() / name;
    std::ofstream ofs(path, std::ios::binary);
    ofs << content;
    return path;
}

} // namespace

TEST_CASE("csv parsing", "[data]") {
    const auto path = write_temp("fs_basic.csv",
                                 "y1, y2,t,x\r\n"
                                 "1.5,2.0,1,0.3\n"
                                 "-0.5,1e-2,0,-1\n");
    const CsvTable table = read_csv(path.string());
    REQUIRE(table.header == std::vector<std::string>{"y1", "y2", "t", "x"});
    REQUIRE(table.rows.size() == 2);
    REQUIRE(table.rows[1][1] == "1e-2");
    REQUIRE(table.column_index("t") == 2);
    REQUIRE_THROWS_AS(table.column_index("z"), ValidationError);

    const auto ragged = write_temp("fs_ragged.csv", "a,b\n1,2\n3\n");
    REQUIRE_THROWS_WITH(read_csv(ragged.string()),
                        Catch::Matchers::ContainsSubstring("row 3"));

    REQUIRE(parse_cell("", 1, "y1").has_value() == false);  // empty = missing
    REQUIRE(*parse_cell("-2.5e3", 1, "y1") == -2500.0);
    REQUIRE_THROWS_AS(parse_cell("abc", 4, "t"), ValidationError);
}

TEST_CASE("dataset loading and schema", "[data]") {
    const auto path = write_temp("fs_load.csv",
                                 "y1,y2,t,x\n"
                                 "1.0,2.0,1,0.1\n"
                                 "2.0,1.0,0,0.2\n"
                                 "0.5,0.7,1,-0.3\n"
                                 "1.5,0.2,0,0.4\n");
    CsvSchema schema;
    schema.outcomes = {"y1", "y2"};
    schema.treatment = "t";
    schema.covariates = {"x"};

    SECTION("clean parse") {
        const LoadResult lr = load_dataset(path.string(), schema);
        REQUIRE(lr.data.n() == 4);
        REQUIRE(lr.data.q() == 2);
        REQUIRE(lr.data.p() == 1);
        REQUIRE(lr.dropped_rows == 0);
        REQUIRE(lr.data.outcomes(1, 0) == 2.0);
        REQUIRE(lr.data.treatment[2] == 1.0);
    }

    SECTION("rows with missing cells are dropped and counted") {
        const auto gap = write_temp("fs_gap.csv",
                                    "y1,y2,t,x\n"
                                    "1.0,2.0,1,0.1\n"
                                    "2.0,,0,0.2\n"
                                    "0.5,0.7,1,-0.3\n"
                                    "1.5,0.2,0,0.4\n"
                                    "0.9,0.1,1,0.6\n");
        const LoadResult lr = load_dataset(gap.string(), schema);
        REQUIRE(lr.data.n() == 4);
        REQUIRE(lr.dropped_rows == 1);
    }

    SECTION("missing column is named in the error") {
        CsvSchema bad = schema;
        bad.covariates = {"z"};
        REQUIRE_THROWS_WITH(load_dataset(path.string(), bad),
                            Catch::Matchers::ContainsSubstring("'z'"));
    }

    SECTION("a column cannot play two roles") {
        CsvSchema bad = schema;
        bad.covariates = {"y1"};
        REQUIRE_THROWS_AS(load_dataset(path.string(), bad), ValidationError);
    }

    SECTION("binary flag enforces 0/1 treatment") {
        CsvSchema bin = schema;
        bin.binary_treatment = true;
        REQUIRE_NOTHROW(load_dataset(path.string(), bin));
        const auto cont = write_temp("fs_cont.csv",
                                     "y1,y2,t,x\n"
                                     "1.0,2.0,0.5,0.1\n"
                                     "2.0,1.0,0,0.2\n"
                                     "0.5,0.7,1,-0.3\n"
                                     "1.5,0.2,0,0.4\n");
        REQUIRE_THROWS_AS(load_dataset(cont.string(), bin), ValidationError);
    }
}

TEST_CASE("duplicated outcome columns are rejected", "[data]") {
    Rng rng(7);
    const Eigen::Index n = 30;
    Eigen::MatrixXd y(n, 3);
    y.col(0) = rng.normal_vector(n);
    y.col(1) = rng.normal_vector(n);
    y.col(2) = 2.0 * y.col(0);  // perfectly correlated copy
    Eigen::VectorXd t = rng.normal_vector(n);
    REQUIRE_THROWS_WITH(
        make_dataset(y, t, Eigen::MatrixXd(n, 0), {"a", "b", "c"}, {}, false),
        Catch::Matchers::ContainsSubstring("duplicat"));
    y.col(2) = y.col(1) + 0.1 * rng.normal_vector(n);  // merely similar is fine
    REQUIRE_NOTHROW(make_dataset(y, t, Eigen::MatrixXd(n, 0), {"a", "b", "c"}, {}, false));
}

TEST_CASE("query validation", "[data]") {
    REQUIRE_THROWS_AS(validate_treatment_contrast({1.0, 1.0}), ValidationError);
    SensitivityQuery query = testutil::make_query(testutil::unit_vector(3, 0), 0.5);
    REQUIRE_NOTHROW(validate_query(query, 3));
    query.r2 = 1.0;
    REQUIRE_THROWS_AS(validate_query(query, 3), ValidationError);
    query.r2 = 0.5;
    query.null_controls = {0, 0};
    REQUIRE_THROWS_AS(validate_query(query, 3), ValidationError);  // duplicates
    query.null_controls = {0, 1, 2};
    REQUIRE_THROWS_AS(validate_query(query, 3), ValidationError);  // |C| = q
    query.null_controls = {3};
    REQUIRE_THROWS_AS(validate_query(query, 3), ValidationError);  // out of range
}

TEST_CASE("standardize_outcomes", "[data]") {
    Rng rng(11);
    const Eigen::Index n = 40;
    Eigen::MatrixXd y(n, 2);
    y.col(0) = 2.0 * rng.normal_vector(n);
    y.col(1) = rng.normal_vector(n);
    // force exact sample sds
    for (Eigen::Index j = 0; j < 2; ++j) {
        Eigen::VectorXd c = y.col(j);
        c.array() -= c.mean();
        y.col(j) = c * ((j == 0 ? 2.0 : 1.0) / sample_sd(c));
    }
    const Dataset d = make_dataset(y, rng.normal_vector(n), Eigen::MatrixXd(n, 0),
                                   {"y1", "y2"}, {}, false);
    const StandardizeResult sr = standardize_outcomes(d);
    REQUIRE_THAT(sr.scales[0], Catch::Matchers::WithinRel(2.0, 1e-12));
    REQUIRE_THAT(sr.scales[1], Catch::Matchers::WithinRel(1.0, 1e-12));
    REQUIRE_THAT(sample_sd(sr.data.outcomes.col(0)), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT((sr.data.outcomes.col(1) - d.outcomes.col(1)).cwiseAbs().maxCoeff(),
                 Catch::Matchers::WithinAbs(0.0, 1e-12));

    Eigen::MatrixXd flat = y;
    flat.col(0).setConstant(3.0);
    const Dataset bad = make_dataset(flat, d.treatment, d.covariates, {"y1", "y2"}, {}, false);
    REQUIRE_THROWS_AS(standardize_outcomes(bad), ValidationError);
}

TEST_CASE("standardized analysis maps back to original units", "[data]") {
    SimConfig cfg;
    cfg.n = 400;
    cfg.q = 6;
    cfg.m = 2;
    cfg.seed = 21;
    const SimTruth truth = generate(cfg);

    auto endpoints = [](const Dataset& d) {
        const ObservedFit fit = fit_observed(d);
        const FactorModel fm = fit_factor_em(fit.residuals, 2);
        Eigen::MatrixXd out(d.q(), 2);
        for (Eigen::Index j = 0; j < d.q(); ++j) {
            const auto region = ignorance_region(
                fm, fit, testutil::make_query(testutil::unit_vector(d.q(), j), 0.4));
            out(j, 0) = region.lower;
            out(j, 1) = region.upper;
        }
        return out;
    };

    const Eigen::MatrixXd raw = endpoints(truth.dataset);
    const StandardizeResult sr = standardize_outcomes(truth.dataset);
    const Eigen::MatrixXd std_units = endpoints(sr.data);

    // The regression layer is exactly scale-equivariant.
    const ObservedFit fit_raw = fit_observed(truth.dataset);
    const ObservedFit fit_std = fit_observed(sr.data);
    for (Eigen::Index j = 0; j < truth.dataset.q(); ++j)
        REQUIRE_THAT(fit_std.tau_check[j] * sr.scales[j],
                     Catch::Matchers::WithinAbs(fit_raw.tau_check[j],
                                                1e-10 * (1.0 + std::abs(fit_raw.tau_check[j]))));

    // Region endpoints additionally pass through the EM fit, whose stopping
    // rule is only scale-invariant up to convergence noise.
    for (Eigen::Index j = 0; j < truth.dataset.q(); ++j)
        for (int k = 0; k < 2; ++k) {
            const double back = std_units(j, k) * sr.scales[j];
            REQUIRE_THAT(back,
                         Catch::Matchers::WithinAbs(raw(j, k), 1e-4 * (1.0 + std::abs(raw(j, k)))));
        }
}

TEST_CASE("row permutation leaves point estimates unchanged", "[data]") {
    SimConfig cfg;
    cfg.n = 60;
    cfg.q = 4;
    cfg.m = 1;
    cfg.p = 2;
    cfg.seed = 3;
    const Dataset d = generate(cfg).dataset;

    // reverse the rows
    Dataset rev = d;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        rev.outcomes.row(i) = d.outcomes.row(d.n() - 1 - i);
        rev.treatment[i] = d.treatment[d.n() - 1 - i];
        rev.covariates.row(i) = d.covariates.row(d.n() - 1 - i);
    }
    const ObservedFit f1 = fit_observed(d);
    const ObservedFit f2 = fit_observed(rev);
    REQUIRE_THAT((f1.tau_check - f2.tau_check).cwiseAbs().maxCoeff(),
                 Catch::Matchers::WithinAbs(0.0, 1e-10));
    REQUIRE_THAT(f1.sigma2, Catch::Matchers::WithinRel(f2.sigma2, 1e-10));
    REQUIRE_THAT((f1.resid_cov - f2.resid_cov).cwiseAbs().maxCoeff(),
                 Catch::Matchers::WithinAbs(0.0, 1e-10));
}
