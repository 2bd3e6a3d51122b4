// factorsens: sensitivity analysis for multi-outcome observational studies
// under factor-structured unobserved confounding.
//
// Subcommands:
//   simulate   write a synthetic dataset (data.csv) plus its ground truth (truth.csv)
//   analyze    fit the observed-data model and emit report.json + intervals.svg
//   calibrate  per-covariate benchmarking table (benchmark.csv)
//
// Exit codes: 0 success, 2 validation error, 3 infeasible constraints,
// 4 numeric failure.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "factorsens/factorsens.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        double v = 0.0;
        const auto* first = item.data();
        const auto* last = item.data() + item.size();
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last)
            throw factorsens::ValidationError(flag + ": cannot parse '" + item +
                                              "' as a number");
        out.push_back(v);
        pos = comma + 1;
    }
    return out;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream ofs(path, std::ios::binary);
    if (!ofs) throw factorsens::ValidationError("cannot open output file: " + path.string());
    ofs << content;
    if (!ofs) throw factorsens::NumericError("failed writing output file: " + path.string());
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw factorsens::ValidationError("cannot create output directory: " + out);
    return dir;
}

struct DataFlags {
    std::string data_path;
    std::string outcomes_csv;
    std::string treatment;
    std::string covariates_csv;
    bool binary = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
    cmd->add_option("--data", flags.data_path, "input CSV file")->required();
    cmd->add_option("--outcomes", flags.outcomes_csv, "comma-separated outcome column names")
        ->required();
    cmd->add_option("--treatment", flags.treatment, "treatment column name")->required();
    cmd->add_option("--covariates", flags.covariates_csv,
                    "comma-separated covariate column names");
    cmd->add_flag("--binary", flags.binary, "treat the treatment column as binary 0/1");
}

std::vector<std::string> split_names(const std::string& csv) {
    std::vector<std::string> out;
    if (csv.empty()) return out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        out.push_back(csv.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

factorsens::LoadResult load_from_flags(const DataFlags& flags) {
    factorsens::CsvSchema schema;
    schema.outcomes = split_names(flags.outcomes_csv);
    schema.treatment = flags.treatment;
    schema.covariates = split_names(flags.covariates_csv);
    schema.binary_treatment = flags.binary;
    return factorsens::load_dataset(flags.data_path, schema);
}

int run(int argc, char** argv) {
    CLI::App app{"sensitivity analysis under factor-structured confounding"};
    app.require_subcommand(1);

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "write a synthetic dataset");
    long long sim_n = 1000, sim_q = 10, sim_m = 2;
    double sim_rho2 = 0.5, sim_mix = 0.0;
    std::uint64_t sim_seed = 0;
    std::string sim_tau, sim_out;
    sim->add_option("--n", sim_n, "sample size");
    sim->add_option("--q", sim_q, "number of outcomes");
    sim->add_option("--m", sim_m, "latent factor rank");
    sim->add_option("--rho2", sim_rho2, "squared treatment-confounder correlation");
    sim->add_option("--seed", sim_seed, "random seed");
    sim->add_option("--tau", sim_tau, "comma-separated true effects (length q)");
    sim->add_option("--mediator-mix", sim_mix, "fraction of latent columns caused by T");
    sim->add_option("--out", sim_out, "output directory")->required();

    // --- analyze ---
    auto* ana = app.add_subcommand("analyze", "fit and report ignorance regions");
    DataFlags ana_data;
    add_data_flags(ana, ana_data);
    long long ana_rank = -1;
    bool ana_auto_rank = false;
    std::string ana_r2;
    std::vector<long long> ana_controls;
    double ana_lambda = -1.0, ana_level = 0.95, ana_pinv_tol = factorsens::kPinvTolDefault;
    std::vector<std::string> ana_contrasts;
    long long ana_bootstrap = 0;
    std::uint64_t ana_seed = 0;
    std::string ana_out;
    bool ana_reselect = false, ana_allow_proj = false;
    double ana_t1 = 1.0, ana_t2 = 0.0;
    auto* rank_opt = ana->add_option("--rank", ana_rank, "fixed factor rank");
    auto* auto_opt = ana->add_flag("--auto-rank", ana_auto_rank,
                                   "select the rank by cross-validation (default)");
    rank_opt->excludes(auto_opt);
    auto_opt->excludes(rank_opt);
    ana->add_option("--r2", ana_r2, "comma-separated confounding budgets in [0,1)")->required();
    ana->add_option("--null-controls", ana_controls,
                    "1-based outcome indices with known-zero effects")
        ->delimiter(',');
    ana->add_option("--lambda", ana_lambda, "alpha for odds-ratio annotations (binary only)");
    ana->add_option("--contrast", ana_contrasts,
                    "comma-separated contrast weights (repeatable)")
        ->take_all();
    ana->add_option("--bootstrap", ana_bootstrap, "number of pairs-bootstrap replicates");
    ana->add_option("--seed", ana_seed, "random seed");
    ana->add_option("--out", ana_out, "output directory")->required();
    ana->add_option("--level", ana_level, "bootstrap interval level");
    ana->add_option("--pinv-tol", ana_pinv_tol, "pseudo-inverse relative tolerance");
    ana->add_flag("--reselect-rank", ana_reselect, "re-select the rank in each replicate");
    ana->add_flag("--allow-projection", ana_allow_proj,
                  "project infeasible control effects instead of failing");
    ana->add_option("--t1", ana_t1, "treated level of the contrast");
    ana->add_option("--t2", ana_t2, "control level of the contrast");

    // --- calibrate ---
    auto* cal = app.add_subcommand("calibrate", "per-covariate benchmark table");
    DataFlags cal_data;
    add_data_flags(cal, cal_data);
    double cal_lambda = -1.0;
    std::string cal_out;
    cal->add_option("--lambda", cal_lambda, "alpha for odds-ratio quantiles (binary only)");
    cal->add_option("--out", cal_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message; validation failures always exit 2
        return 2;
    }

    if (*sim) {
        factorsens::SimConfig cfg;
        cfg.n = sim_n;
        cfg.q = sim_q;
        cfg.m = sim_m;
        cfg.rho_norm2 = sim_rho2;
        cfg.seed = sim_seed;
        cfg.mediator_mix = sim_mix;
        if (!sim_tau.empty()) {
            const auto tau = parse_double_list(sim_tau, "--tau");
            cfg.tau_true = Eigen::Map<const Eigen::VectorXd>(
                tau.data(), static_cast<Eigen::Index>(tau.size()));
        }
        const factorsens::SimTruth truth = sim_mix != 0.0 ? factorsens::mediator_scenario(cfg)
                                                          : factorsens::generate(cfg);
        const fs::path dir = prepare_out_dir(sim_out);
        factorsens::write_sim_data(truth, (dir / "data.csv").string());
        factorsens::write_sim_truth(truth, (dir / "truth.csv").string());
        return 0;
    }

    if (*ana) {
        const factorsens::LoadResult loaded = load_from_flags(ana_data);
        factorsens::AnalyzeOptions opts;
        if (!auto_opt->count() && rank_opt->count()) {
            if (ana_rank < 0) throw factorsens::ValidationError("--rank must be >= 0");
            opts.rank = static_cast<Eigen::Index>(ana_rank);
        }
        opts.r2_budgets = parse_double_list(ana_r2, "--r2");
        for (long long c : ana_controls) {
            if (c < 1 || c > loaded.data.q())
                throw factorsens::ValidationError(
                    "--null-controls: index " + std::to_string(c) +
                    " out of range 1.." + std::to_string(loaded.data.q()));
            opts.null_controls.push_back(static_cast<Eigen::Index>(c - 1));
        }
        if (ana->count("--lambda")) opts.lambda_alpha = ana_lambda;
        for (std::size_t k = 0; k < ana_contrasts.size(); ++k) {
            const auto w = parse_double_list(ana_contrasts[k], "--contrast");
            factorsens::Contrast c;
            c.weights = Eigen::Map<const Eigen::VectorXd>(
                w.data(), static_cast<Eigen::Index>(w.size()));
            c.label = "contrast_" + std::to_string(k + 1);
            opts.extra_contrasts.push_back(std::move(c));
        }
        if (ana_bootstrap < 0) throw factorsens::ValidationError("--bootstrap must be >= 0");
        opts.tc = factorsens::TreatmentContrast{ana_t1, ana_t2};
        opts.bootstrap_b = static_cast<int>(ana_bootstrap);
        opts.seed = ana_seed;
        opts.level = ana_level;
        opts.reselect_rank = ana_reselect;
        opts.pinv_tol = ana_pinv_tol;
        opts.allow_projection = ana_allow_proj;
        if (loaded.dropped_rows > 0) opts.dropped_rows = loaded.dropped_rows;

        const factorsens::ordered_json report = factorsens::analyze_to_json(loaded.data, opts);
        const factorsens::ordered_json table =
            factorsens::calibrate_to_json(loaded.data, opts.lambda_alpha);
        const fs::path dir = prepare_out_dir(ana_out);
        write_text_file(dir / "report.json", report.dump(2) + "\n");
        write_text_file(dir / "intervals.svg", factorsens::svg_from_report(report));
        write_text_file(dir / "benchmark.csv", factorsens::benchmark_csv(table));
        return 0;
    }

    // calibrate
    const factorsens::LoadResult loaded = load_from_flags(cal_data);
    if (loaded.data.p() == 0)
        throw factorsens::ValidationError("calibrate: dataset has no covariates");
    std::optional<double> alpha;
    if (cal->count("--lambda")) alpha = cal_lambda;
    const factorsens::ordered_json table = factorsens::calibrate_to_json(loaded.data, alpha);
    const fs::path dir = prepare_out_dir(cal_out);
    write_text_file(dir / "benchmark.csv", factorsens::benchmark_csv(table));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const factorsens::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
