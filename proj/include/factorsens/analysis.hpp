#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "factorsens/bootstrap.hpp"
#include "factorsens/bounds.hpp"
#include "factorsens/calibration.hpp"
#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/factor_model.hpp"
#include "factorsens/null_controls.hpp"
#include "factorsens/regression.hpp"
#include "factorsens/robustness.hpp"

namespace factorsens {

using ordered_json = nlohmann::ordered_json;

struct AnalyzeOptions {
    std::optional<Eigen::Index> rank;      // fixed factor rank; empty = select automatically
    std::vector<double> r2_budgets;        // confounding budgets, ascending preferred
    std::vector<Eigen::Index> null_controls;  // 0-based outcome indices
    std::optional<double> lambda_alpha;    // odds-ratio annotation level (binary treatment)
    std::vector<Contrast> extra_contrasts;
    TreatmentContrast tc{1.0, 0.0};
    int bootstrap_b = 0;
    std::uint64_t seed = 0;
    double level = 0.95;
    bool reselect_rank = false;            // re-run rank selection inside each replicate
    double pinv_tol = kPinvTolDefault;
    bool allow_projection = false;         // downgrade infeasible controls to a warning
    std::optional<std::size_t> dropped_rows;  // echo from the loader, if any
};

// Structured per-contrast results (one entry per outcome and per extra contrast).
struct OutcomeAnalysis {
    std::string label;
    std::string key;  // stable statistic key, independent of user labels
    Eigen::VectorXd weights;
    double nuc_center = 0.0;
    std::vector<IgnoranceRegion> factor_regions;   // one per budget
    std::vector<IgnoranceRegion> extreme_regions;  // one per budget
    std::vector<IgnoranceRegion> nc_regions;       // one per budget, if controls set
    std::vector<std::optional<double>> width_factors;  // per budget, if controls set
    RobustnessReport robustness;
};

struct FullAnalysis {
    ObservedFit fit;
    FactorModel fm;
    std::optional<RankSelection> rank_selection;
    IdentifiabilityReport identifiability;
    std::optional<NullControlAnalysis> nca;
    std::vector<OutcomeAnalysis> outcomes;
    std::vector<OutcomeAnalysis> contrasts;
    std::vector<GlobalBound> global_bounds;  // one per budget
    Eigen::MatrixXd identified;              // basis columns; 0 cols if none
    std::optional<PropensityModel> propensity;
};

namespace detail {

inline void validate_analyze_options(const AnalyzeOptions& o) {
    if (o.r2_budgets.empty())
        throw ValidationError("analysis: at least one r2 budget is required");
    for (double r2 : o.r2_budgets)
        if (!(r2 >= 0.0 && r2 < 1.0))
            throw ValidationError("analysis: every r2 budget must lie in [0, 1)");
    if (o.lambda_alpha && !(*o.lambda_alpha > 0.0 && *o.lambda_alpha < 1.0))
        throw ValidationError("analysis: lambda alpha must lie in (0, 1)");
    if (o.bootstrap_b < 0) throw ValidationError("analysis: negative bootstrap count");
    if (!(o.level > 0.0 && o.level < 1.0))
        throw ValidationError("analysis: bootstrap level must lie in (0, 1)");
    if (o.rank && *o.rank < 0) throw ValidationError("analysis: negative rank");
    validate_treatment_contrast(o.tc);
}

inline OutcomeAnalysis analyze_one_contrast(const FactorModel& fm, const ObservedFit& fit,
                                            const std::optional<NullControlAnalysis>& nca,
                                            const AnalyzeOptions& o, std::string label,
                                            std::string key, Eigen::VectorXd weights) {
    OutcomeAnalysis oa;
    oa.label = std::move(label);
    oa.key = std::move(key);
    oa.weights = std::move(weights);
    oa.nuc_center = oa.weights.dot(fit.tau_check) * o.tc.delta();

    SensitivityQuery query;
    query.contrast = Contrast{oa.weights, oa.label};
    query.treatment = o.tc;
    query.null_controls = o.null_controls;
    for (double r2 : o.r2_budgets) {
        query.r2 = r2;
        oa.factor_regions.push_back(ignorance_region(fm, fit, query, RegionMode::factor));
        oa.extreme_regions.push_back(ignorance_region(fm, fit, query, RegionMode::extreme));
        if (nca) {
            oa.nc_regions.push_back(
                nc_ignorance_region(fm, fit, *nca, query, o.allow_projection));
            oa.width_factors.push_back(width_reduction_factor(
                fm, oa.weights, *nca, r2, fit.sigma(), o.tc.delta()));
        }
    }
    oa.robustness =
        report_robustness(fm, fit, oa.weights, o.tc, o.null_controls, nullptr, o.pinv_tol);
    return oa;
}

inline FullAnalysis compute_full_analysis(const Dataset& d, const AnalyzeOptions& o,
                                          std::optional<Eigen::Index> fixed_m,
                                          bool with_selection_table) {
    validate_analyze_options(o);
    FullAnalysis fa;
    fa.fit = fit_observed(d);

    Eigen::Index m;
    if (fixed_m) {
        m = *fixed_m;
    } else if (o.rank) {
        if (*o.rank > d.q()) throw ValidationError("analysis: rank exceeds outcome count");
        m = *o.rank;
    } else {
        RankSelection sel = select_rank(fa.fit.residuals, max_identifiable_rank(d.q()), o.seed);
        m = sel.selected;
        if (with_selection_table) fa.rank_selection = std::move(sel);
    }
    fa.fm = fit_factor_em(fa.fit.residuals, m);
    fa.identifiability = check_identifiability(fa.fm, o.pinv_tol);

    if (!o.null_controls.empty()) {
        fa.nca = analyze_null_controls(fa.fm, fa.fit, o.null_controls, o.tc, o.pinv_tol);
        if (!fa.nca->feasible && !o.allow_projection)
            throw InfeasibleError(
                "null-control constraints are infeasible: apparent control effects lie "
                "outside the column space of the control loadings");
    }

    for (Eigen::Index j = 0; j < d.q(); ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(d.q());
        e[j] = 1.0;
        fa.outcomes.push_back(analyze_one_contrast(fa.fm, fa.fit, fa.nca, o,
                                                   d.outcome_names[static_cast<std::size_t>(j)],
                                                   "out" + std::to_string(j), std::move(e)));
    }
    for (std::size_t k = 0; k < o.extra_contrasts.size(); ++k) {
        const auto& c = o.extra_contrasts[k];
        validate_contrast(c, d.q());
        fa.contrasts.push_back(analyze_one_contrast(
            fa.fm, fa.fit, fa.nca, o,
            c.label.empty() ? "contrast_" + std::to_string(k + 1) : c.label,
            "con" + std::to_string(k), c.weights));
    }

    for (double r2 : o.r2_budgets) fa.global_bounds.push_back(global_bound(fa.fm, fa.fit, o.tc, r2));
    fa.identified = matrix_rank(fa.fm.gamma, o.pinv_tol) < d.q()
                        ? identified_contrasts(fa.fm, o.pinv_tol)
                        : Eigen::MatrixXd(d.q(), 0);

    if (o.lambda_alpha) {
        if (!d.binary_treatment)
            throw ValidationError("analysis: --lambda requires a binary treatment");
        fa.propensity = fit_propensity(d);
    }
    return fa;
}

// Flattened statistics for bootstrap percentile collection.
inline StatMap flatten_analysis(const FullAnalysis& fa) {
    StatMap s;
    auto add_contrast = [&](const OutcomeAnalysis& oa) {
        const std::string& k = oa.key;
        s["nuc/" + k] = oa.nuc_center;
        for (std::size_t bi = 0; bi < oa.factor_regions.size(); ++bi) {
            const std::string suffix = k + "/" + std::to_string(bi);
            s["flo/" + suffix] = oa.factor_regions[bi].lower;
            s["fup/" + suffix] = oa.factor_regions[bi].upper;
            s["xlo/" + suffix] = oa.extreme_regions[bi].lower;
            s["xup/" + suffix] = oa.extreme_regions[bi].upper;
            if (!oa.nc_regions.empty()) {
                s["nlo/" + suffix] = oa.nc_regions[bi].lower;
                s["nup/" + suffix] = oa.nc_regions[bi].upper;
            }
        }
        s["rv1/" + k] = oa.robustness.rv1;
        s["xrv/" + k] = oa.robustness.xrv;
        if (oa.robustness.rv_gamma) s["rvg/" + k] = *oa.robustness.rv_gamma;
        if (oa.robustness.rv_combined) s["rvc/" + k] = *oa.robustness.rv_combined;
    };
    for (const auto& oa : fa.outcomes) add_contrast(oa);
    for (const auto& oa : fa.contrasts) add_contrast(oa);
    if (fa.nca) s["r2_min"] = fa.nca->r2_min;
    return s;
}

inline ordered_json region_to_json(const IgnoranceRegion& reg) {
    return ordered_json{{"label", reg.label},     {"center", reg.center},
                        {"halfwidth", reg.halfwidth}, {"lower", reg.lower},
                        {"upper", reg.upper},     {"r2_tu", reg.r2_tu},
                        {"mode", region_mode_name(reg.mode)}};
}

inline ordered_json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline ordered_json matrix_to_json_rowmajor(const Eigen::Ref<const Eigen::MatrixXd>& m) {
    ordered_json arr = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

inline ordered_json opt_to_json(const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

} // namespace detail

inline ordered_json factor_model_to_json(const FactorModel& fm) {
    return ordered_json{{"m", fm.m()},
                        {"gamma", detail::matrix_to_json_rowmajor(fm.gamma)},
                        {"delta", detail::vector_to_json(fm.delta)},
                        {"loglik", fm.loglik},
                        {"n_used", fm.n_used}};
}

// Full analysis as a deterministic JSON document (schema_version 1). All
// intervals use bootstrap envelopes when bootstrap_b > 0; robustness values
// are then conservatively replaced by their lower percentile.
inline ordered_json analyze_to_json(const Dataset& d, const AnalyzeOptions& o) {
    FullAnalysis fa = detail::compute_full_analysis(d, o, std::nullopt, true);

    std::optional<BootstrapResult> boot;
    if (o.bootstrap_b > 0) {
        BootstrapContext ctx;
        ctx.b = o.bootstrap_b;
        ctx.seed = o.seed;
        ctx.level = o.level;
        const Eigen::Index fitted_m = fa.fm.m();
        boot = bootstrap_analysis(
            d,
            [&](const Dataset& resampled) {
                return detail::flatten_analysis(detail::compute_full_analysis(
                    resampled, o,
                    o.reselect_rank ? std::nullopt : std::optional<Eigen::Index>(fitted_m),
                    false));
            },
            ctx);
    }
    auto boot_has = [&](const std::string& key) {
        return boot && boot->samples.count(key) > 0;
    };

    ordered_json root;
    root["schema_version"] = 1;
    root["n"] = fa.fit.n;
    root["q"] = fa.fit.q;
    root["p"] = fa.fit.p;
    if (o.dropped_rows) root["dropped_rows"] = *o.dropped_rows;
    root["treatment_contrast"] = ordered_json{{"t1", o.tc.t1}, {"t2", o.tc.t2}};
    root["sigma2"] = fa.fit.sigma2;
    root["tau_check"] = detail::vector_to_json(fa.fit.tau_check);
    root["r2_budgets"] = o.r2_budgets;

    ordered_json rank;
    rank["m"] = fa.fm.m();
    rank["auto"] = !o.rank.has_value();
    if (fa.rank_selection) {
        rank["clipped"] = fa.rank_selection->clipped;
        ordered_json table = ordered_json::array();
        for (const auto& row : fa.rank_selection->rows)
            table.push_back(ordered_json{{"m", row.m},
                                         {"bic", row.bic},
                                         {"cv_loglik", row.cv_loglik},
                                         {"cv_se", row.cv_se}});
        rank["table"] = table;
    }
    rank["identifiability"] =
        ordered_json{{"dimension_ok", fa.identifiability.dimension_ok},
                     {"row_deletion_ok", fa.identifiability.row_deletion_ok},
                     {"exhaustive", fa.identifiability.exhaustive},
                     {"per_outcome_r2", detail::vector_to_json(fa.identifiability.per_outcome_r2)}};
    root["rank"] = rank;
    root["factor_model"] = factor_model_to_json(fa.fm);

    ordered_json nc = nullptr;
    if (fa.nca) {
        ordered_json controls_1based = ordered_json::array();
        for (Eigen::Index c : fa.nca->controls) controls_1based.push_back(c + 1);
        nc = ordered_json{{"controls", controls_1based},
                          {"r2_min", fa.nca->r2_min},
                          {"colspace_residual", fa.nca->colspace_residual},
                          {"feasible", fa.nca->feasible},
                          {"projected", !fa.nca->feasible && o.allow_projection}};
        if (boot_has("r2_min")) {
            nc["r2_min_boot"] = ordered_json{{"lower", boot->lower_pct("r2_min")},
                                             {"upper", boot->upper_pct("r2_min")}};
        }
    }
    root["null_controls"] = nc;

    auto contrast_json = [&](const OutcomeAnalysis& oa) {
        ordered_json row;
        row["label"] = oa.label;
        ordered_json nuc;
        nuc["center"] = oa.nuc_center;
        if (boot_has("nuc/" + oa.key)) {
            const auto iv = boot->percentile_interval("nuc/" + oa.key);
            nuc["lower"] = iv.lower;
            nuc["upper"] = iv.upper;
        } else {
            nuc["lower"] = oa.nuc_center;
            nuc["upper"] = oa.nuc_center;
        }
        row["nuc"] = nuc;

        ordered_json regions = ordered_json::array();
        for (std::size_t bi = 0; bi < oa.factor_regions.size(); ++bi) {
            const std::string suffix = oa.key + "/" + std::to_string(bi);
            ordered_json reg = detail::region_to_json(oa.factor_regions[bi]);
            if (boot_has("flo/" + suffix)) {
                const auto env = boot->envelope("flo/" + suffix, "fup/" + suffix);
                reg["boot_lower"] = env.lower;
                reg["boot_upper"] = env.upper;
            }
            regions.push_back(reg);
        }
        row["regions"] = regions;

        ordered_json xregions = ordered_json::array();
        for (std::size_t bi = 0; bi < oa.extreme_regions.size(); ++bi) {
            const std::string suffix = oa.key + "/" + std::to_string(bi);
            ordered_json reg = detail::region_to_json(oa.extreme_regions[bi]);
            if (boot_has("xlo/" + suffix)) {
                const auto env = boot->envelope("xlo/" + suffix, "xup/" + suffix);
                reg["boot_lower"] = env.lower;
                reg["boot_upper"] = env.upper;
            }
            xregions.push_back(reg);
        }
        row["extreme_regions"] = xregions;

        if (!oa.nc_regions.empty()) {
            ordered_json nregions = ordered_json::array();
            for (std::size_t bi = 0; bi < oa.nc_regions.size(); ++bi) {
                const std::string suffix = oa.key + "/" + std::to_string(bi);
                ordered_json reg = detail::region_to_json(oa.nc_regions[bi]);
                if (boot_has("nlo/" + suffix)) {
                    const auto env = boot->envelope("nlo/" + suffix, "nup/" + suffix);
                    reg["boot_lower"] = env.lower;
                    reg["boot_upper"] = env.upper;
                }
                nregions.push_back(reg);
            }
            row["nc_regions"] = nregions;
            ordered_json wf = ordered_json::array();
            for (const auto& f : oa.width_factors) wf.push_back(detail::opt_to_json(f));
            row["width_factors"] = wf;
        } else {
            row["nc_regions"] = nullptr;
        }

        // conservative (lower-percentile) replacements under bootstrap
        RobustnessReport rv = oa.robustness;
        if (boot) {
            RobustnessLower lower;
            if (boot_has("rv1/" + oa.key)) lower.rv1 = boot->lower_pct("rv1/" + oa.key);
            if (boot_has("xrv/" + oa.key)) lower.xrv = boot->lower_pct("xrv/" + oa.key);
            if (boot_has("rvg/" + oa.key)) lower.rv_gamma = boot->lower_pct("rvg/" + oa.key);
            if (boot_has("rvc/" + oa.key)) lower.rv_combined = boot->lower_pct("rvc/" + oa.key);
            if (lower.rv1) rv.rv1 = *lower.rv1;
            if (lower.xrv) rv.xrv = *lower.xrv;
            if (lower.rv_gamma && rv.rv_gamma) rv.rv_gamma = lower.rv_gamma;
            if (lower.rv_combined && rv.rv_combined) rv.rv_combined = lower.rv_combined;
        }
        ordered_json rvj{{"rv1", rv.rv1},
                         {"xrv", rv.xrv},
                         {"rv_gamma", detail::opt_to_json(rv.rv_gamma)},
                         {"rv_combined", detail::opt_to_json(rv.rv_combined)},
                         {"r2_min", detail::opt_to_json(rv.r2_min)},
                         {"status", rv_status_name(rv.status)}};
        if (boot) {
            rvj["point"] = ordered_json{
                {"rv1", oa.robustness.rv1},
                {"xrv", oa.robustness.xrv},
                {"rv_gamma", detail::opt_to_json(oa.robustness.rv_gamma)},
                {"rv_combined", detail::opt_to_json(oa.robustness.rv_combined)}};
        }
        if (fa.propensity && o.lambda_alpha) {
            rvj["lambda_rv_gamma"] =
                rv.rv_gamma ? ordered_json(rv_to_lambda(*rv.rv_gamma, fa.fit.sigma2,
                                                        fa.propensity->mean_propensity,
                                                        *o.lambda_alpha))
                            : ordered_json(nullptr);
        }
        row["robustness"] = rvj;
        return row;
    };

    ordered_json outcomes = ordered_json::array();
    for (const auto& oa : fa.outcomes) outcomes.push_back(contrast_json(oa));
    root["outcomes"] = outcomes;
    ordered_json contrasts = ordered_json::array();
    for (const auto& oa : fa.contrasts) contrasts.push_back(contrast_json(oa));
    root["contrasts"] = contrasts;

    ordered_json global;
    ordered_json gbounds = ordered_json::array();
    for (std::size_t bi = 0; bi < o.r2_budgets.size(); ++bi) {
        ordered_json gb{{"r2", o.r2_budgets[bi]}, {"bound", fa.global_bounds[bi].bound}};
        if (fa.propensity && o.lambda_alpha)
            gb["lambda"] = lambda_alpha(o.r2_budgets[bi], fa.fit.sigma2,
                                        fa.propensity->mean_propensity, *o.lambda_alpha);
        gbounds.push_back(gb);
    }
    global["bounds"] = gbounds;
    global["worst_contrast"] =
        fa.global_bounds.empty() ? ordered_json(nullptr)
                                 : detail::vector_to_json(fa.global_bounds[0].worst_contrast);
    ordered_json ident = ordered_json::array();
    for (Eigen::Index k = 0; k < fa.identified.cols(); ++k)
        ident.push_back(detail::vector_to_json(fa.identified.col(k)));
    global["identified_contrasts"] = ident;
    if (fa.propensity) global["mean_propensity"] = fa.propensity->mean_propensity;
    root["global"] = global;

    root["bootstrap"] = boot ? ordered_json{{"b", boot->b},
                                            {"level", boot->level},
                                            {"n_failed", boot->n_failed},
                                            {"seed", o.seed},
                                            {"reselect_rank", o.reselect_rank}}
                             : ordered_json(nullptr);
    return root;
}

// Covariate benchmarking table (calibration workflow). A dataset without
// covariates yields an empty table (header-only CSV downstream).
inline ordered_json calibrate_to_json(const Dataset& d, std::optional<double> lambda_alpha_level) {
    std::optional<PropensityModel> pm_full;
    if (lambda_alpha_level) {
        if (!d.binary_treatment)
            throw ValidationError("calibrate: --lambda requires a binary treatment");
        if (!(*lambda_alpha_level > 0.0 && *lambda_alpha_level <= 1.0))
            throw ValidationError("calibrate: lambda alpha must lie in (0, 1]");
        pm_full = fit_propensity(d);
    }

    ordered_json rows = ordered_json::array();
    for (Eigen::Index j = 0; j < d.p(); ++j) {
        ordered_json row;
        row["covariate"] = d.covariate_names[static_cast<std::size_t>(j)];
        row["partial_r2_treatment"] = partial_r2_treatment(d, {j});
        ordered_json per_outcome = ordered_json::array();
        for (Eigen::Index k = 0; k < d.q(); ++k) {
            Contrast e;
            e.weights = Eigen::VectorXd::Zero(d.q());
            e.weights[k] = 1.0;
            e.label = d.outcome_names[static_cast<std::size_t>(k)];
            per_outcome.push_back(partial_r2_outcome(d, e, {j}));
        }
        row["partial_r2_outcomes"] = per_outcome;
        if (pm_full) {
            Dataset reduced = d;
            reduced.covariates = detail::drop_columns(d.covariates, {j});
            reduced.covariate_names.erase(reduced.covariate_names.begin() + j);
            const PropensityModel pm_reduced = fit_propensity(reduced);
            row["lambda_quantile"] = benchmark_lambda(d, *pm_full, pm_reduced,
                                                      *lambda_alpha_level);
        } else {
            row["lambda_quantile"] = nullptr;
        }
        rows.push_back(row);
    }
    ordered_json root;
    root["schema_version"] = 1;
    root["n"] = d.n();
    root["q"] = d.q();
    root["p"] = d.p();
    root["alpha"] = lambda_alpha_level ? ordered_json(*lambda_alpha_level) : ordered_json(nullptr);
    root["rows"] = rows;
    return root;
}

inline std::string benchmark_csv(const ordered_json& calibrate_report) {
    std::string out = "covariate,partial_r2_treatment";
    const auto& rows = calibrate_report.at("rows");
    const std::size_t q = calibrate_report.at("q").get<std::size_t>();
    for (std::size_t k = 0; k < q; ++k)
        out += ",partial_r2_outcome_" + std::to_string(k + 1);
    out += ",lambda_quantile\n";
    for (const auto& row : rows) {
        out += row.at("covariate").get<std::string>();
        out += "," + format_full(row.at("partial_r2_treatment").get<double>());
        for (const auto& v : row.at("partial_r2_outcomes"))
            out += "," + format_full(v.get<double>());
        const auto& lam = row.at("lambda_quantile");
        out += ",";
        out += lam.is_null() ? "" : format_full(lam.get<double>());
        out += "\n";
    }
    return out;
}

// --- SVG rendering -----------------------------------------------------------
//
// The plot is a pure view of report.json: horizontal interval rows per
// outcome (point/NUC interval, factor regions per budget, null-control
// regions), a boxed extreme-bound outline, and robustness annotations above
// each row. No timestamps, fixed-precision coordinates.

namespace detail {

inline std::string fmt2(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", x);
    return buf;
}

inline std::string fmt3g(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", x);
    return buf;
}

inline double region_endpoint(const ordered_json& reg, const char* point_key,
                              const char* boot_key) {
    if (reg.contains(boot_key)) return reg.at(boot_key).get<double>();
    return reg.at(point_key).get<double>();
}

} // namespace detail

inline std::string svg_from_report(const ordered_json& report) {
    struct Row {
        std::string label;
        double nuc_center, nuc_lo, nuc_hi;
        std::vector<std::pair<double, double>> factor;
        std::vector<std::pair<double, double>> nc;
        std::pair<double, double> extreme{0.0, 0.0};
        std::string annotation;
    };
    std::vector<Row> rows;
    double xmin = 0.0, xmax = 0.0;
    auto expand = [&](double v) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    };

    auto collect = [&](const ordered_json& arr) {
        for (const auto& oc : arr) {
            Row row;
            row.label = oc.at("label").get<std::string>();
            row.nuc_center = oc.at("nuc").at("center").get<double>();
            row.nuc_lo = oc.at("nuc").at("lower").get<double>();
            row.nuc_hi = oc.at("nuc").at("upper").get<double>();
            expand(row.nuc_lo);
            expand(row.nuc_hi);
            for (const auto& reg : oc.at("regions")) {
                const double lo = detail::region_endpoint(reg, "lower", "boot_lower");
                const double hi = detail::region_endpoint(reg, "upper", "boot_upper");
                row.factor.emplace_back(lo, hi);
                expand(lo);
                expand(hi);
            }
            if (!oc.at("extreme_regions").empty()) {
                const auto& reg = oc.at("extreme_regions").back();
                row.extreme = {detail::region_endpoint(reg, "lower", "boot_lower"),
                               detail::region_endpoint(reg, "upper", "boot_upper")};
                expand(row.extreme.first);
                expand(row.extreme.second);
            }
            if (!oc.at("nc_regions").is_null()) {
                for (const auto& reg : oc.at("nc_regions")) {
                    const double lo = detail::region_endpoint(reg, "lower", "boot_lower");
                    const double hi = detail::region_endpoint(reg, "upper", "boot_upper");
                    row.nc.emplace_back(lo, hi);
                    expand(lo);
                    expand(hi);
                }
            }
            const auto& rv = oc.at("robustness");
            std::string ann = "RV1 " + detail::fmt3g(rv.at("rv1").get<double>()) + "  XRV " +
                              detail::fmt3g(rv.at("xrv").get<double>());
            if (!rv.at("rv_gamma").is_null())
                ann += "  RVg " + detail::fmt3g(rv.at("rv_gamma").get<double>());
            if (!rv.at("rv_combined").is_null())
                ann += "  RVgC " + detail::fmt3g(rv.at("rv_combined").get<double>());
            if (rv.contains("lambda_rv_gamma") && !rv.at("lambda_rv_gamma").is_null())
                ann += "  L " + detail::fmt3g(rv.at("lambda_rv_gamma").get<double>());
            row.annotation = ann;
            rows.push_back(std::move(row));
        }
    };
    collect(report.at("outcomes"));
    collect(report.at("contrasts"));

    const double pad = 0.05 * std::max(xmax - xmin, 1e-12);
    xmin -= pad;
    xmax += pad;
    const double left = 130.0, right = 40.0, top = 46.0, row_h = 52.0, bottom = 28.0;
    const double plot_w = 690.0;
    const double width = left + plot_w + right;
    const double height = top + rows.size() * row_h + bottom;
    auto xpos = [&](double v) { return left + (v - xmin) / (xmax - xmin) * plot_w; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(width) +
           "\" height=\"" + detail::fmt2(height) + "\" viewBox=\"0 0 " + detail::fmt2(width) +
           " " + detail::fmt2(height) + "\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"" + detail::fmt2(width) + "\" height=\"" +
           detail::fmt2(height) + "\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::fmt2(left) +
           "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\" fill=\"#333\">"
           "treatment-effect ignorance regions</text>\n";
    // zero reference line
    if (xmin < 0.0 && xmax > 0.0) {
        const double zx = xpos(0.0);
        svg += "<line x1=\"" + detail::fmt2(zx) + "\" y1=\"" + detail::fmt2(top - 8.0) +
               "\" x2=\"" + detail::fmt2(zx) + "\" y2=\"" +
               detail::fmt2(top + rows.size() * row_h) +
               "\" stroke=\"#999\" stroke-dasharray=\"4 3\" stroke-width=\"1\"/>\n";
    }

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const double y = top + i * row_h + row_h * 0.62;
        svg += "<text x=\"8\" y=\"" + detail::fmt2(y + 4.0) +
               "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#111\">" + row.label +
               "</text>\n";
        svg += "<text x=\"" + detail::fmt2(left) + "\" y=\"" + detail::fmt2(y - 18.0) +
               "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#555\">" +
               row.annotation + "</text>\n";
        // extreme bound box
        if (row.extreme.second > row.extreme.first) {
            svg += "<rect x=\"" + detail::fmt2(xpos(row.extreme.first)) + "\" y=\"" +
                   detail::fmt2(y - 11.0) + "\" width=\"" +
                   detail::fmt2(xpos(row.extreme.second) - xpos(row.extreme.first)) +
                   "\" height=\"22\" fill=\"none\" stroke=\"#bbb\" stroke-width=\"1\"/>\n";
        }
        // factor regions, widest budget drawn thinnest
        for (std::size_t bi = 0; bi < row.factor.size(); ++bi) {
            const double sw = 6.0 - std::min<double>(3.0, static_cast<double>(bi));
            svg += "<line x1=\"" + detail::fmt2(xpos(row.factor[bi].first)) + "\" y1=\"" +
                   detail::fmt2(y) + "\" x2=\"" + detail::fmt2(xpos(row.factor[bi].second)) +
                   "\" y2=\"" + detail::fmt2(y) +
                   "\" stroke=\"#4878a8\" stroke-opacity=\"0.55\" stroke-width=\"" +
                   detail::fmt2(sw) + "\"/>\n";
        }
        // null-control regions
        for (const auto& seg : row.nc) {
            svg += "<line x1=\"" + detail::fmt2(xpos(seg.first)) + "\" y1=\"" +
                   detail::fmt2(y + 8.0) + "\" x2=\"" + detail::fmt2(xpos(seg.second)) +
                   "\" y2=\"" + detail::fmt2(y + 8.0) +
                   "\" stroke=\"#b3403c\" stroke-width=\"3\"/>\n";
        }
        // point interval and center
        svg += "<line x1=\"" + detail::fmt2(xpos(row.nuc_lo)) + "\" y1=\"" + detail::fmt2(y) +
               "\" x2=\"" + detail::fmt2(xpos(row.nuc_hi)) + "\" y2=\"" + detail::fmt2(y) +
               "\" stroke=\"#222\" stroke-width=\"1.5\"/>\n";
        svg += "<circle cx=\"" + detail::fmt2(xpos(row.nuc_center)) + "\" cy=\"" +
               detail::fmt2(y) + "\" r=\"2.6\" fill=\"#222\"/>\n";
    }
    // x-axis ticks at min, 0, max
    const double axis_y = top + rows.size() * row_h + 14.0;
    for (double v : {xmin + pad, 0.0, xmax - pad}) {
        if (v < xmin || v > xmax) continue;
        svg += "<text x=\"" + detail::fmt2(xpos(v)) + "\" y=\"" + detail::fmt2(axis_y) +
               "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#555\" "
               "text-anchor=\"middle\">" +
               detail::fmt3g(v) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace factorsens
