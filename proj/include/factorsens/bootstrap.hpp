#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/rng.hpp"

namespace factorsens {

struct BootstrapContext {
    int b = 1000;
    std::uint64_t seed = 0;
    double level = 0.95;
    int max_retries = 10;  // fresh derived seed per retry of a failed replicate
    unsigned threads = 0;  // 0 = hardware concurrency
};

// Flat name -> value map produced by an analysis pipeline on one dataset.
using StatMap = std::map<std::string, double>;

struct BootstrapInterval {
    double lower = 0.0;
    double upper = 0.0;
};

struct BootstrapResult {
    int b = 0;
    double level = 0.95;
    int n_failed = 0;  // replicates that failed after all retries
    std::map<std::string, std::vector<double>> samples;  // replicate-index order

    const std::vector<double>& sample(const std::string& name) const {
        auto it = samples.find(name);
        if (it == samples.end())
            throw ValidationError("bootstrap: unknown statistic '" + name + "'");
        return it->second;
    }

    double lower_pct(const std::string& name) const {
        return percentile(sample(name), (1.0 - level) / 2.0);
    }
    double upper_pct(const std::string& name) const {
        return percentile(sample(name), 1.0 - (1.0 - level) / 2.0);
    }
    BootstrapInterval percentile_interval(const std::string& name) const {
        return {lower_pct(name), upper_pct(name)};
    }
    // Outer envelope for interval-valued statistics: low percentile of the
    // lower endpoints, high percentile of the upper endpoints.
    BootstrapInterval envelope(const std::string& lower_name,
                               const std::string& upper_name) const {
        return {lower_pct(lower_name), upper_pct(upper_name)};
    }
};

inline Dataset resample_rows(const Dataset& d, Rng& rng) {
    const Eigen::Index n = d.n();
    Dataset out;
    out.outcomes.resize(n, d.q());
    out.treatment.resize(n);
    out.covariates.resize(n, d.p());
    out.outcome_names = d.outcome_names;
    out.covariate_names = d.covariate_names;
    out.binary_treatment = d.binary_treatment;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        out.outcomes.row(i) = d.outcomes.row(k);
        out.treatment[i] = d.treatment[k];
        if (d.p() > 0) out.covariates.row(i) = d.covariates.row(k);
    }
    return out;  // deliberately unvalidated: resampling cannot break column contracts
}

// Pairs bootstrap of an arbitrary deterministic pipeline. Replicate r uses a
// seed derived from (ctx.seed, r, attempt), so results are identical whatever
// the thread count, and collection is by replicate index.
template <typename Pipeline>
BootstrapResult bootstrap_analysis(const Dataset& d, Pipeline&& pipeline,
                                   const BootstrapContext& ctx) {
    if (ctx.b < 1) throw ValidationError("bootstrap: need at least 1 replicate");
    if (!(ctx.level > 0.0 && ctx.level < 1.0))
        throw ValidationError("bootstrap: level must lie in (0, 1)");

    std::vector<std::optional<StatMap>> slots(static_cast<std::size_t>(ctx.b));
    auto run_replicate = [&](int r) {
        for (int attempt = 0; attempt <= ctx.max_retries; ++attempt) {
            Rng rng(derive_seed(ctx.seed, static_cast<std::uint64_t>(r),
                                static_cast<std::uint64_t>(attempt)));
            const Dataset resampled = resample_rows(d, rng);
            try {
                slots[static_cast<std::size_t>(r)] = pipeline(resampled);
                return;
            } catch (const Error&) {
                // retry with a fresh derived seed
            }
        }
    };

    unsigned threads = ctx.threads ? ctx.threads : std::thread::hardware_concurrency();
    if (threads <= 1 || ctx.b == 1) {
        for (int r = 0; r < ctx.b; ++r) run_replicate(r);
    } else {
        std::vector<std::future<void>> futures;
        for (unsigned w = 0; w < threads; ++w) {
            futures.push_back(std::async(std::launch::async, [&, w] {
                for (int r = static_cast<int>(w); r < ctx.b; r += static_cast<int>(threads))
                    run_replicate(r);
            }));
        }
        for (auto& f : futures) f.get();
    }

    BootstrapResult result;
    result.b = ctx.b;
    result.level = ctx.level;
    for (int r = 0; r < ctx.b; ++r) {
        const auto& slot = slots[static_cast<std::size_t>(r)];
        if (!slot) {
            ++result.n_failed;
            continue;
        }
        for (const auto& [name, value] : *slot) result.samples[name].push_back(value);
    }
    if (result.n_failed == ctx.b)
        throw NumericError("bootstrap: every replicate failed to fit");
    return result;
}

} // namespace factorsens
