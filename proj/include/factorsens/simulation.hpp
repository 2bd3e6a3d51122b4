#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "factorsens/csv.hpp"
#include "factorsens/dataset.hpp"
#include "factorsens/errors.hpp"
#include "factorsens/numeric.hpp"
#include "factorsens/rng.hpp"

namespace factorsens {

// Generator configuration. Treatment is normalized to unit conditional
// variance, so rho doubles as the regression of T on the latent confounders
// and ||rho||^2 is exactly the treatment-side confounding share.
struct SimConfig {
    Eigen::Index n = 1000;
    Eigen::Index q = 10;
    Eigen::Index m = 2;
    Eigen::Index p = 0;                    // optional observed covariates
    Eigen::MatrixXd gamma_true;            // empty -> default_gamma(q, m)
    Eigen::VectorXd tau_true;              // empty -> default_tau(q)
    Eigen::VectorXd delta_true;            // empty -> all ones
    double rho_norm2 = 0.5;
    std::optional<Eigen::VectorXd> rho;    // else sampled uniformly on the sphere
    std::uint64_t seed = 0;
    double mediator_mix = 0.0;             // fraction of latent columns caused by T
};

struct SimTruth {
    Dataset dataset;
    Eigen::VectorXd tau_true;
    Eigen::MatrixXd gamma_true;   // model loadings (residual covariance = gamma gamma' + delta)
    Eigen::VectorXd delta_true;
    Eigen::VectorXd rho_true;
    double sigma2_true = 1.0;
    Eigen::VectorXd bias_true;    // per unit of treatment, per outcome
    Eigen::MatrixXd latent;       // n x m draws of U (diagnostics only, not serialized)
    SimConfig config;
};

// Fixed loading matrix with the structure the downstream narrative depends on
// (for q=10, m=2): rows 1-3 mutually collinear, rows 4-6 orthogonal to row 1,
// rows 7-9 positively aligned with row 1, row 10 negatively aligned. Other
// shapes get a deterministic generic fill.
inline Eigen::MatrixXd default_gamma(Eigen::Index q, Eigen::Index m) {
    if (q == 10 && m == 2) {
        Eigen::MatrixXd g(10, 2);
        g << 1.0, 0.0,
             0.8, 0.0,
             1.2, 0.0,
             0.0, 1.0,
             0.0, 0.7,
             0.0, 1.3,
             0.9, 0.5,
             0.5, 0.8,
             1.1, -0.3,
             -0.7, 0.6;
        // assert the four structural properties rather than trusting the literals
        for (int j : {1, 2})
            if (std::abs(g(0, 0) * g(j, 1) - g(0, 1) * g(j, 0)) > 1e-12)
                throw NumericError("default_gamma: rows 1-3 are not collinear");
        for (int j : {3, 4, 5})
            if (std::abs(g.row(0).dot(g.row(j))) > 1e-12)
                throw NumericError("default_gamma: rows 4-6 are not orthogonal to row 1");
        for (int j : {6, 7, 8})
            if (!(g.row(0).dot(g.row(j)) > 0.0))
                throw NumericError("default_gamma: rows 7-9 are not positively aligned");
        if (!(g.row(0).dot(g.row(9)) < 0.0))
            throw NumericError("default_gamma: row 10 is not negatively aligned");
        return g;
    }
    if (m == 0) return Eigen::MatrixXd(q, 0);
    // generic: deterministic normal draws, rows rescaled to norms near 1
    Rng rng(mix_seed(0x6a0bb1e5u + static_cast<std::uint64_t>(q * 131 + m)));
    Eigen::MatrixXd g = rng.normal_matrix(q, m);
    for (Eigen::Index j = 0; j < q; ++j) {
        const double norm = g.row(j).norm();
        const double target = 0.7 + 0.6 * (static_cast<double>(j) / std::max<Eigen::Index>(q - 1, 1));
        if (norm > 0.0) g.row(j) *= target / norm;
    }
    return g;
}

// Zero effect on the first, second, and last outcomes; unit effect elsewhere.
inline Eigen::VectorXd default_tau(Eigen::Index q) {
    Eigen::VectorXd tau = Eigen::VectorXd::Ones(q);
    if (q >= 1) tau[0] = 0.0;
    if (q >= 2) tau[1] = 0.0;
    if (q >= 3) tau[q - 1] = 0.0;
    return tau;
}

namespace detail {

// (I - rho rho')^{-1/2} as a closed-form rank-one update.
inline Eigen::MatrixXd inv_sqrt_one_minus_outer(const Eigen::VectorXd& rho) {
    const Eigen::Index m = rho.size();
    const double r2 = rho.squaredNorm();
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(m, m);
    if (r2 > 1e-14) {
        if (!(r2 < 1.0)) throw ValidationError("||rho||^2 must be < 1");
        s += (1.0 / std::sqrt(1.0 - r2) - 1.0) / r2 * (rho * rho.transpose());
    }
    return s;
}

inline void resolve_config(SimConfig& cfg) {
    if (cfg.n < 4) throw ValidationError("simulate: n too small");
    if (cfg.q < 1 || cfg.m < 0 || cfg.p < 0) throw ValidationError("simulate: bad dimensions");
    if (!(cfg.rho_norm2 >= 0.0 && cfg.rho_norm2 < 1.0))
        throw ValidationError("simulate: rho_norm2 must lie in [0, 1)");
    if (!(cfg.mediator_mix >= 0.0 && cfg.mediator_mix <= 1.0))
        throw ValidationError("simulate: mediator_mix must lie in [0, 1]");
    if (cfg.gamma_true.size() == 0) cfg.gamma_true = default_gamma(cfg.q, cfg.m);
    if (cfg.tau_true.size() == 0) cfg.tau_true = default_tau(cfg.q);
    if (cfg.delta_true.size() == 0) cfg.delta_true = Eigen::VectorXd::Ones(cfg.q);
    if (cfg.gamma_true.rows() != cfg.q || cfg.gamma_true.cols() != cfg.m ||
        cfg.tau_true.size() != cfg.q || cfg.delta_true.size() != cfg.q)
        throw ValidationError("simulate: config dimensions disagree");
    for (Eigen::Index j = 0; j < cfg.q; ++j)
        if (!(cfg.delta_true[j] > 0.0))
            throw ValidationError("simulate: delta_true must be positive");
    if (cfg.rho && (cfg.rho->size() != cfg.m ||
                    std::abs(cfg.rho->squaredNorm() - cfg.rho_norm2) > 1e-8))
        throw ValidationError("simulate: supplied rho inconsistent with rho_norm2");
}

inline SimTruth generate_impl(SimConfig cfg, Eigen::Index n_mediators) {
    resolve_config(cfg);
    if (n_mediators < 0 || n_mediators > cfg.m)
        throw ValidationError("simulate: bad mediator count");

    Rng rng(mix_seed(cfg.seed ^ 0xfac705e15ULL));
    Eigen::VectorXd rho =
        cfg.rho ? *cfg.rho
                : (cfg.m > 0 && cfg.rho_norm2 > 0.0
                       ? Eigen::VectorXd(rng.sphere(cfg.m, std::sqrt(cfg.rho_norm2)))
                       : Eigen::VectorXd::Zero(cfg.m));
    const double r2 = rho.squaredNorm();

    // weights of U in the outcome equation; chosen so the residual covariance
    // of Y given T is exactly gamma gamma' + diag(delta)
    const Eigen::MatrixXd weight = cfg.gamma_true * inv_sqrt_one_minus_outer(rho);

    const Eigen::MatrixXd u = rng.normal_matrix(cfg.n, cfg.m);
    const Eigen::MatrixXd x = rng.normal_matrix(cfg.n, cfg.p);
    const double eps_t_sd = std::sqrt(1.0 - r2);
    Eigen::VectorXd t(cfg.n);
    for (Eigen::Index i = 0; i < cfg.n; ++i)
        t[i] = u.row(i).dot(rho) + eps_t_sd * rng.normal();
    if (cfg.p > 0) t += x.rowwise().sum() * 0.3;  // covariate shift, leaves Var(T|X) = 1

    Eigen::MatrixXd y(cfg.n, cfg.q);
    for (Eigen::Index i = 0; i < cfg.n; ++i) {
        for (Eigen::Index j = 0; j < cfg.q; ++j) {
            double v = cfg.tau_true[j] * t[i] + weight.row(j).dot(u.row(i)) +
                       std::sqrt(cfg.delta_true[j]) * rng.normal();
            if (cfg.p > 0) v += 0.5 * x.row(i).sum();
            y(i, j) = v;
        }
    }

    // true per-unit bias of the naive regression: weight * rho for the fully
    // pre-treatment case; when the trailing n_mediators latent columns are
    // treatment-caused, their contribution is part of the effect, not bias
    Eigen::VectorXd bias = weight * rho;
    if (n_mediators > 0) {
        const Eigen::Index pre = cfg.m - n_mediators;
        const double rp2 = rho.head(pre).squaredNorm();
        const Eigen::VectorXd med_coef = rho.tail(n_mediators) / (1.0 - rp2);
        bias = weight.leftCols(pre) * rho.head(pre) -
               weight.rightCols(n_mediators) * (med_coef * rp2);
    }

    SimTruth truth{Dataset{}, cfg.tau_true, cfg.gamma_true, cfg.delta_true,
                   rho,       1.0,          std::move(bias), u,
                   cfg};
    std::vector<std::string> onames, xnames;
    for (Eigen::Index j = 0; j < cfg.q; ++j) onames.push_back("y" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < cfg.p; ++j) xnames.push_back("x" + std::to_string(j + 1));
    truth.dataset = make_dataset(std::move(y), std::move(t), std::move(x), std::move(onames),
                                 std::move(xnames), false);
    return truth;
}

} // namespace detail

inline SimTruth generate(const SimConfig& cfg) {
    if (cfg.mediator_mix != 0.0)
        throw ValidationError("generate: mediator_mix > 0 requires mediator_scenario");
    return detail::generate_impl(cfg, 0);
}

// Appendix-style conservativeness scenario: the trailing share of latent
// columns is treatment-caused (mediators), so only the leading block
// confounds. The sampled joint distribution is identical to generate's; what
// changes is which part of the naive estimate is genuinely bias.
inline SimTruth mediator_scenario(const SimConfig& cfg) {
    const auto k = static_cast<Eigen::Index>(std::llround(cfg.mediator_mix *
                                                          static_cast<double>(cfg.m)));
    SimConfig flat = cfg;
    flat.mediator_mix = 0.0;  // draws identical to generate under the same seed
    SimTruth truth = detail::generate_impl(flat, k);
    truth.config.mediator_mix = cfg.mediator_mix;
    return truth;
}

// Independent verifier for the worst-case bias bound: brute-force max of
// |a' gamma (I - rho rho')^{-1/2} rho| * |dt| / sigma over random rho on the
// radius-sqrt(r2) sphere, plus the analytic candidate rho ~ gamma' a.
inline double oracle_max_bias(const Eigen::Ref<const Eigen::MatrixXd>& gamma,
                              const Eigen::Ref<const Eigen::VectorXd>& a, double r2,
                              double sigma, double dt, int n_samples, std::uint64_t seed) {
    if (!(r2 >= 0.0 && r2 < 1.0)) throw ValidationError("oracle_max_bias: r2 in [0,1)");
    if (!(sigma > 0.0)) throw ValidationError("oracle_max_bias: sigma must be positive");
    const Eigen::Index m = gamma.cols();
    if (m == 0 || r2 == 0.0) return 0.0;
    const double radius = std::sqrt(r2);
    const double scale = std::abs(dt) / (sigma * std::sqrt(1.0 - r2));
    const Eigen::VectorXd ga = gamma.transpose() * a;
    Rng rng(mix_seed(seed ^ 0x0bacce5ULL));
    double best = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        const Eigen::VectorXd rho = rng.sphere(m, radius);
        best = std::max(best, std::abs(ga.dot(rho)) * scale);
    }
    if (ga.norm() > 0.0) {
        const Eigen::VectorXd rho = ga * (radius / ga.norm());
        best = std::max(best, std::abs(ga.dot(rho)) * scale);
    }
    return best;
}

// Independent verifier for constrained confounding minima: minimize ||rho||^2
// subject to rows * rho * dt / (sigma sqrt(1 - ||rho||^2)) = rhs, by grid
// search over directions with local refinement. Supports m <= 3. Returns
// nullopt when no direction satisfies the constraints (infeasible set).
inline std::optional<double> oracle_constrained_min(
    const Eigen::Ref<const Eigen::MatrixXd>& rows,
    const Eigen::Ref<const Eigen::VectorXd>& rhs, double sigma, double dt,
    int resolution = 4000) {
    const Eigen::Index m = rows.cols();
    const Eigen::Index k = rows.rows();
    if (k == 0 || rhs.size() != k)
        throw ValidationError("oracle_constrained_min: bad constraint shapes");
    if (m < 1 || m > 3) throw ValidationError("oracle_constrained_min: m must be 1..3");
    if (!(sigma > 0.0) || dt == 0.0)
        throw ValidationError("oracle_constrained_min: bad sigma or dt");

    // work with s = ||rho|| / sqrt(1 - ||rho||^2); constraints become
    // s * rows * u = b with u the unit direction
    const Eigen::VectorXd b = rhs * (sigma / dt);
    if (b.norm() == 0.0) return 0.0;  // rho = 0 satisfies everything

    const auto r2_of_s = [](double s) { return s * s / (1.0 + s * s); };

    // least-squares s >= 0 for a given direction, with consistency residual
    const auto fit_direction = [&](const Eigen::VectorXd& u, double& resid) -> double {
        const Eigen::VectorXd v = rows * u;
        const double vv = v.squaredNorm();
        if (vv <= 1e-300) {
            resid = b.norm();
            return 0.0;
        }
        const double s = std::max(0.0, v.dot(b) / vv);
        resid = (s * v - b).norm();
        return s;
    };

    const double feas_tol = 1e-7 * std::max(b.norm(), 1.0);
    double best = std::numeric_limits<double>::infinity();

    if (m == 1) {
        for (double sign : {1.0, -1.0}) {
            Eigen::VectorXd u(1);
            u[0] = sign;
            double resid;
            const double s = fit_direction(u, resid);
            if (resid <= feas_tol) best = std::min(best, s);
        }
    } else if (m == 2) {
        auto dir = [](double th) {
            Eigen::VectorXd u(2);
            u << std::cos(th), std::sin(th);
            return u;
        };
        // coarse scan for near-feasible angles
        std::vector<double> resids(static_cast<std::size_t>(resolution));
        const double step = 2.0 * M_PI / resolution;
        for (int i = 0; i < resolution; ++i) {
            double resid;
            fit_direction(dir(i * step), resid);
            resids[static_cast<std::size_t>(i)] = resid;
        }
        for (int i = 0; i < resolution; ++i) {
            const double prev = resids[static_cast<std::size_t>((i + resolution - 1) % resolution)];
            const double next = resids[static_cast<std::size_t>((i + 1) % resolution)];
            const double here = resids[static_cast<std::size_t>(i)];
            if (here <= prev && here <= next) {  // local residual minimum
                const double lo = (i - 1) * step, hi = (i + 1) * step;
                const double th = golden_min(
                    [&](double t) {
                        double r;
                        fit_direction(dir(t), r);
                        return r;
                    },
                    lo, hi, 1e-13);
                double resid;
                double s = fit_direction(dir(th), resid);
                if (resid > feas_tol) continue;
                if (k == 1) {
                    // feasible set is an arc: additionally minimize s along it
                    const double th2 = golden_min(
                        [&](double t) {
                            double r;
                            const double sv = fit_direction(dir(t), r);
                            return r <= feas_tol ? sv
                                                 : sv + 1e6 * (r - feas_tol) / feas_tol;
                        },
                        th - M_PI / 2, th + M_PI / 2, 1e-13);
                    double r2dummy;
                    const double s2 = fit_direction(dir(th2), r2dummy);
                    if (r2dummy <= feas_tol) s = std::min(s, s2);
                }
                best = std::min(best, s);
            }
        }
    } else {  // m == 3: spherical coordinate grid, coarse but refined locally
        const int nt = static_cast<int>(std::sqrt(static_cast<double>(resolution))) * 2;
        auto dir = [](double th, double ph) {
            Eigen::VectorXd u(3);
            u << std::sin(ph) * std::cos(th), std::sin(ph) * std::sin(th), std::cos(ph);
            return u;
        };
        for (int a1 = 0; a1 < nt; ++a1) {
            for (int a2 = 0; a2 <= nt / 2; ++a2) {
                double th = 2.0 * M_PI * a1 / nt, ph = M_PI * a2 / (nt / 2);
                double resid;
                double s = fit_direction(dir(th, ph), resid);
                // a few rounds of coordinate-wise golden refinement
                for (int round = 0; round < 3; ++round) {
                    th = golden_min(
                        [&](double t) {
                            double r;
                            fit_direction(dir(t, ph), r);
                            return r;
                        },
                        th - 0.3, th + 0.3, 1e-12);
                    ph = golden_min(
                        [&](double t) {
                            double r;
                            fit_direction(dir(th, t), r);
                            return r;
                        },
                        ph - 0.3, ph + 0.3, 1e-12);
                }
                s = fit_direction(dir(th, ph), resid);
                if (resid <= feas_tol) best = std::min(best, s);
            }
        }
    }

    if (!std::isfinite(best)) return std::nullopt;
    return r2_of_s(best);
}

// --- CSV round-tripping -----------------------------------------------------

inline void write_sim_data(const SimTruth& truth, const std::string& path) {
    const Dataset& d = truth.dataset;
    CsvTable table;
    table.header = d.outcome_names;
    table.header.push_back("t");
    for (const auto& x : d.covariate_names) table.header.push_back(x);
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index j = 0; j < d.q(); ++j) row.push_back(format_full(d.outcomes(i, j)));
        row.push_back(format_full(d.treatment[i]));
        for (Eigen::Index j = 0; j < d.p(); ++j) row.push_back(format_full(d.covariates(i, j)));
        table.rows.push_back(std::move(row));
    }
    write_csv(path, table);
}

inline void write_sim_truth(const SimTruth& truth, const std::string& path) {
    CsvTable table;
    table.header = {"outcome", "tau_true", "bias_true", "delta_true"};
    const Eigen::Index m = truth.gamma_true.cols();
    for (Eigen::Index k = 0; k < m; ++k) table.header.push_back("gamma_" + std::to_string(k + 1));
    for (Eigen::Index k = 0; k < m; ++k) table.header.push_back("rho_" + std::to_string(k + 1));
    table.header.insert(table.header.end(),
                        {"sigma2_true", "rho_norm2", "seed", "mediator_mix"});
    for (Eigen::Index j = 0; j < truth.tau_true.size(); ++j) {
        std::vector<std::string> row{truth.dataset.outcome_names[static_cast<std::size_t>(j)],
                                     format_full(truth.tau_true[j]),
                                     format_full(truth.bias_true[j]),
                                     format_full(truth.delta_true[j])};
        for (Eigen::Index k = 0; k < m; ++k) row.push_back(format_full(truth.gamma_true(j, k)));
        for (Eigen::Index k = 0; k < m; ++k) row.push_back(format_full(truth.rho_true[k]));
        row.push_back(format_full(truth.sigma2_true));
        row.push_back(format_full(truth.rho_true.squaredNorm()));
        row.push_back(std::to_string(truth.config.seed));
        row.push_back(format_full(truth.config.mediator_mix));
        table.rows.push_back(std::move(row));
    }
    write_csv(path, table);
}

} // namespace factorsens
