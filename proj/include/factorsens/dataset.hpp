#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/csv.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"

namespace factorsens {

// Rectangular study data: q outcomes, one treatment, p >= 0 baseline
// covariates. Treat as immutable after construction; all analysis code takes
// const references and never mutates.
struct Dataset {
    Eigen::MatrixXd outcomes;    // n x q
    Eigen::VectorXd treatment;   // n
    Eigen::MatrixXd covariates;  // n x p
    std::vector<std::string> outcome_names;
    std::vector<std::string> covariate_names;
    bool binary_treatment = false;

    Eigen::Index n() const { return outcomes.rows(); }
    Eigen::Index q() const { return outcomes.cols(); }
    Eigen::Index p() const { return covariates.cols(); }

    Eigen::Index outcome_index(const std::string& name) const {
        for (std::size_t j = 0; j < outcome_names.size(); ++j)
            if (outcome_names[j] == name) return static_cast<Eigen::Index>(j);
        throw ValidationError("unknown outcome '" + name + "'");
    }
};

// Pair of treatment levels whose effect contrast is under study.
struct TreatmentContrast {
    double t1 = 1.0;
    double t2 = 0.0;

    double delta() const { return t1 - t2; }
};

// Outcome-combination weights a, so the estimand is the effect on a'Y.
struct Contrast {
    Eigen::VectorXd weights;
    std::string label;
};

// One sensitivity question: which contrast, which treatment levels, how much
// confounding (r2 = treatment-confounder partial R-squared budget), which
// outcomes are designated null controls, and an optional odds-ratio bound.
struct SensitivityQuery {
    Contrast contrast;
    TreatmentContrast treatment;
    double r2 = 0.0;
    std::vector<Eigen::Index> null_controls;  // 0-based outcome indices
    std::optional<double> lambda;
};

inline void validate_treatment_contrast(const TreatmentContrast& tc) {
    if (!std::isfinite(tc.t1) || !std::isfinite(tc.t2))
        throw ValidationError("treatment contrast levels must be finite");
    if (tc.t1 == tc.t2) throw ValidationError("treatment contrast levels must differ");
}

inline void validate_contrast(const Contrast& a, Eigen::Index q) {
    if (a.weights.size() != q)
        throw ValidationError("contrast '" + a.label + "' has " +
                              std::to_string(a.weights.size()) + " weights, expected " +
                              std::to_string(q));
    if (!a.weights.allFinite())
        throw ValidationError("contrast '" + a.label + "' has non-finite weights");
    if (a.weights.norm() == 0.0)
        throw ValidationError("contrast '" + a.label + "' is identically zero");
}

inline void validate_query(const SensitivityQuery& query, Eigen::Index q) {
    validate_contrast(query.contrast, q);
    validate_treatment_contrast(query.treatment);
    if (!(query.r2 >= 0.0 && query.r2 < 1.0))
        throw ValidationError("confounding budget r2 must lie in [0, 1)");
    std::set<Eigen::Index> seen;
    for (Eigen::Index c : query.null_controls) {
        if (c < 0 || c >= q)
            throw ValidationError("null-control index " + std::to_string(c + 1) +
                                  " outside 1.." + std::to_string(q));
        if (!seen.insert(c).second)
            throw ValidationError("duplicate null-control index " + std::to_string(c + 1));
    }
    if (static_cast<Eigen::Index>(seen.size()) >= q && q > 0)
        throw ValidationError("null-control set must leave at least one non-control outcome");
    if (query.lambda && !(*query.lambda >= 1.0))
        throw ValidationError("lambda bound must be >= 1");
}

inline void validate_dataset(const Dataset& d) {
    const Eigen::Index n = d.n(), q = d.q(), p = d.p();
    if (q < 1) throw ValidationError("dataset needs at least one outcome column");
    if (d.treatment.size() != n || (p > 0 && d.covariates.rows() != n))
        throw ValidationError("dataset blocks disagree on the number of rows");
    if (static_cast<Eigen::Index>(d.outcome_names.size()) != q)
        throw ValidationError("outcome name count does not match outcome columns");
    if (static_cast<Eigen::Index>(d.covariate_names.size()) != p)
        throw ValidationError("covariate name count does not match covariate columns");
    if (n < p + 3)
        throw ValidationError("need at least p + 3 = " + std::to_string(p + 3) +
                              " complete rows, have " + std::to_string(n));
    if (!d.outcomes.allFinite() || !d.treatment.allFinite() ||
        (p > 0 && !d.covariates.allFinite()))
        throw ValidationError("dataset contains non-finite values");
    if (d.binary_treatment) {
        for (Eigen::Index i = 0; i < n; ++i)
            if (d.treatment[i] != 0.0 && d.treatment[i] != 1.0)
                throw ValidationError("binary treatment has value " +
                                      std::to_string(d.treatment[i]) + " at data row " +
                                      std::to_string(i + 1) + "; expected 0 or 1");
    }
    // Exactly duplicated outcome columns carry no information and break
    // residual-covariance ranks downstream; reject up front.
    std::vector<double> mean(q), sd(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        mean[j] = d.outcomes.col(j).mean();
        sd[j] = std::sqrt((d.outcomes.col(j).array() - mean[j]).square().sum() /
                          static_cast<double>(n - 1));
    }
    for (Eigen::Index j = 0; j < q; ++j) {
        if (sd[j] <= 0.0) continue;
        for (Eigen::Index k = j + 1; k < q; ++k) {
            if (sd[k] <= 0.0) continue;
            const double cov = ((d.outcomes.col(j).array() - mean[j]) *
                                (d.outcomes.col(k).array() - mean[k]))
                                   .sum() /
                               static_cast<double>(n - 1);
            if (cov / (sd[j] * sd[k]) > 1.0 - 1e-12)
                throw ValidationError("outcome columns '" + d.outcome_names[j] + "' and '" +
                                      d.outcome_names[k] + "' are exact duplicates");
        }
    }
}

inline Dataset make_dataset(Eigen::MatrixXd outcomes, Eigen::VectorXd treatment,
                            Eigen::MatrixXd covariates, std::vector<std::string> outcome_names,
                            std::vector<std::string> covariate_names,
                            bool binary_treatment = false) {
    Dataset d{std::move(outcomes),      std::move(treatment),       std::move(covariates),
              std::move(outcome_names), std::move(covariate_names), binary_treatment};
    validate_dataset(d);
    return d;
}

// Which CSV columns play which role.
struct CsvSchema {
    std::vector<std::string> outcomes;
    std::string treatment;
    std::vector<std::string> covariates;
    bool binary_treatment = false;
};

struct LoadResult {
    Dataset data;
    std::size_t dropped_rows = 0;  // rows discarded for missing cells in selected columns
};

inline LoadResult load_dataset(const std::string& path, const CsvSchema& schema) {
    if (schema.outcomes.empty()) throw ValidationError("schema selects no outcome columns");
    if (schema.treatment.empty()) throw ValidationError("schema has no treatment column");
    {
        std::set<std::string> names(schema.outcomes.begin(), schema.outcomes.end());
        for (const auto& c : schema.covariates) names.insert(c);
        names.insert(schema.treatment);
        if (names.size() != schema.outcomes.size() + schema.covariates.size() + 1)
            throw ValidationError("schema assigns some column to more than one role");
    }

    const CsvTable table = read_csv(path);
    std::vector<std::size_t> ocol, xcol;
    ocol.reserve(schema.outcomes.size());
    for (const auto& name : schema.outcomes) ocol.push_back(table.column_index(name));
    const std::size_t tcol = table.column_index(schema.treatment);
    for (const auto& name : schema.covariates) xcol.push_back(table.column_index(name));

    const auto q = static_cast<Eigen::Index>(ocol.size());
    const auto p = static_cast<Eigen::Index>(xcol.size());
    std::vector<Eigen::VectorXd> kept;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        Eigen::VectorXd values(q + 1 + p);
        bool missing = false;
        auto take = [&](std::size_t col, const std::string& name) -> double {
            auto v = parse_cell(row[col], i, name);
            if (!v) missing = true;
            return v.value_or(0.0);
        };
        for (Eigen::Index j = 0; j < q; ++j) values[j] = take(ocol[j], schema.outcomes[j]);
        values[q] = take(tcol, schema.treatment);
        for (Eigen::Index j = 0; j < p; ++j) values[q + 1 + j] = take(xcol[j], schema.covariates[j]);
        if (missing) {
            ++dropped;
            continue;
        }
        kept.push_back(std::move(values));
    }

    const auto n = static_cast<Eigen::Index>(kept.size());
    if (n < p + 3)
        throw ValidationError("only " + std::to_string(n) + " complete rows after dropping " +
                              std::to_string(dropped) + "; need at least " +
                              std::to_string(p + 3));
    Eigen::MatrixXd outcomes(n, q), covariates(n, p);
    Eigen::VectorXd treatment(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        outcomes.row(i) = kept[i].head(q);
        treatment[i] = kept[i][q];
        covariates.row(i) = kept[i].tail(p);
    }
    Dataset d = make_dataset(std::move(outcomes), std::move(treatment), std::move(covariates),
                             schema.outcomes, schema.covariates, schema.binary_treatment);
    return LoadResult{std::move(d), dropped};
}

struct StandardizeResult {
    Dataset data;
    Eigen::VectorXd scales;  // per-outcome sample standard deviations divided out
};

// Divides each outcome column by its sample standard deviation (n-1). Effects
// reported on standardized outcomes times scales[j] recover original units.
inline StandardizeResult standardize_outcomes(const Dataset& d) {
    Eigen::VectorXd scales(d.q());
    Eigen::MatrixXd scaled = d.outcomes;
    for (Eigen::Index j = 0; j < d.q(); ++j) {
        const double sd = sample_sd(d.outcomes.col(j));
        if (sd <= 0.0)
            throw ValidationError("outcome '" + d.outcome_names[j] +
                                  "' has zero variance; cannot standardize");
        scales[j] = sd;
        scaled.col(j) /= sd;
    }
    Dataset out = d;
    out.outcomes = std::move(scaled);
    return StandardizeResult{std::move(out), std::move(scales)};
}

} // namespace factorsens
