#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/crossfit.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/estimators.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/parallel.hpp"
#include "sdidml/rng.hpp"

namespace sdidml {

enum class DgpForm { linear, nonlinear };

// Staggered-adoption panel generator with known ground truth.
//
// Structure: covariates follow a within-unit AR(1) with persistence 0.5 and
// N(0,1) marginals; unit and period effects are N(0, fe_sd^2); a unit is
// treated with probability pi_i and, if treated, adopts at a period drawn
// uniformly from cohort_periods, staying treated afterwards. pi_i is
// 1 - never_share exactly when no assignment index is active; otherwise it is
// a clipped logistic in the active index terms, keeping pi in [0.05, 0.95]:
//   index = log((1-never_share)/never_share)
//         + (confounded)  1.5 * sum of unit means of the first 3 covariates
//         + (endogeneity) 2.0 * u_i      (u_i also enters the outcome noise)
//         + (instrument)  2.5 * w_i      (w_i drives the instrument column)
// Outcome: Y = theta0*D + heterogeneity*W_i*D + g(X) + alpha_i + lambda_t + eps,
// eps = noise_sd*(rho*u_i + sqrt(1-rho^2)*e_it); instrument column
// Z = instrument_strength*w_i + nu_it.
struct DgpConfig {
    int n_units = 200;
    int n_periods = 8;
    int p_covariates = 20;
    double theta0 = 1.0;
    std::vector<int> cohort_periods = {4, 6};
    double never_share = 0.3;
    DgpForm nonlinearity = DgpForm::linear;
    bool confounded_assignment = false;
    double effect_heterogeneity = 0.0;   // slope on the moderator column; 0 = off
    double endogeneity = 0.0;            // error correlation rho; 0 = off
    double instrument_strength = 0.0;    // 0 = no instrument column
    double noise_sd = 1.0;
    double fe_sd = 1.0;                  // scale of alpha_i and lambda_t; 0 removes them
    std::uint64_t seed = 42;
    bool with_instrument = false;        // emit the instrument column
};

struct SimulatedTruth {
    double theta0 = 0.0;
    std::vector<std::optional<int>> cohort_of_unit;
    std::vector<double> g_obs;     // aligned with dataset rows
    std::vector<double> pi_unit;   // cohort-assignment probability per unit
};

namespace detail {

inline void validate_dgp(const DgpConfig& cfg) {
    if (cfg.n_units < 2) throw ConfigInvalid("n_units must be >= 2");
    if (cfg.n_periods < 2) throw ConfigInvalid("n_periods must be >= 2");
    if (cfg.p_covariates < 1) throw ConfigInvalid("p_covariates must be >= 1");
    if (!(cfg.never_share >= 0.0 && cfg.never_share < 1.0)) {
        throw ConfigInvalid("never_share must lie in [0, 1)");
    }
    if (cfg.cohort_periods.empty()) throw ConfigInvalid("cohort_periods must be non-empty");
    for (int g : cfg.cohort_periods) {
        if (g <= 1 || g > cfg.n_periods) {
            throw ConfigInvalid("cohort period " + std::to_string(g) + " outside (1, n_periods]");
        }
    }
    if (!(std::fabs(cfg.endogeneity) < 1.0)) throw ConfigInvalid("endogeneity |rho| must be < 1");
    if (cfg.noise_sd < 0.0) throw ConfigInvalid("noise_sd must be nonnegative");
    if (cfg.fe_sd < 0.0) throw ConfigInvalid("fe_sd must be nonnegative");
    if (cfg.nonlinearity == DgpForm::nonlinear && cfg.p_covariates < 4) {
        throw ConfigInvalid("nonlinear outcome needs p_covariates >= 4");
    }
}

inline std::string padded_unit_name(int idx, int n_units) {
    int width = 1;
    for (int v = n_units - 1; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(idx);
    return "u" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

} // namespace detail

// Deterministic given cfg: one RNG stream seeded with (seed, 0), draws in a
// fixed order (unit effects, period effects, unit shocks u/w/W, covariates
// unit-by-unit, assignment, observation noises). All shocks are drawn whether
// or not their switch is active, so turning a switch on or off never changes
// the other draws.
inline std::pair<PanelDataset, SimulatedTruth> generate_panel(const DgpConfig& cfg) {
    detail::validate_dgp(cfg);
    Rng rng(derive_seed(cfg.seed, {0}));
    const int N = cfg.n_units;
    const int T = cfg.n_periods;
    const int P = cfg.p_covariates;
    const std::size_t n_rows = static_cast<std::size_t>(N) * static_cast<std::size_t>(T);

    std::vector<double> alpha(static_cast<std::size_t>(N));
    for (auto& a : alpha) a = cfg.fe_sd * rng.normal();
    std::vector<double> lambda(static_cast<std::size_t>(T));
    for (auto& l : lambda) l = cfg.fe_sd * rng.normal();
    std::vector<double> u(static_cast<std::size_t>(N)), w(static_cast<std::size_t>(N)),
        wmod(static_cast<std::size_t>(N));
    for (auto& v : u) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    for (auto& v : wmod) v = rng.normal();

    // AR(1) per (unit, covariate) chain, stationary N(0,1) marginals.
    const double innov_sd = std::sqrt(1.0 - 0.5 * 0.5);
    std::vector<std::vector<double>> x(static_cast<std::size_t>(P));
    for (auto& c : x) c.resize(n_rows);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < P; ++j) {
            double prev = rng.normal();
            x[static_cast<std::size_t>(j)][static_cast<std::size_t>(i) * T] = prev;
            for (int t = 1; t < T; ++t) {
                prev = 0.5 * prev + innov_sd * rng.normal();
                x[static_cast<std::size_t>(j)][static_cast<std::size_t>(i) * T + t] = prev;
            }
        }
    }

    SimulatedTruth truth;
    truth.theta0 = cfg.theta0;
    truth.cohort_of_unit.resize(static_cast<std::size_t>(N));
    truth.pi_unit.resize(static_cast<std::size_t>(N));
    const bool index_active = cfg.confounded_assignment || cfg.endogeneity != 0.0 ||
                              cfg.instrument_strength != 0.0 || cfg.with_instrument;
    for (int i = 0; i < N; ++i) {
        double pi;
        if (!index_active) {
            pi = 1.0 - cfg.never_share;
        } else {
            const double ns = std::clamp(cfg.never_share, 1e-12, 1.0 - 1e-12);
            double index = std::log((1.0 - ns) / ns);
            if (cfg.confounded_assignment) {
                double s = 0.0;
                for (int j = 0; j < std::min(3, P); ++j) {
                    double m = 0.0;
                    for (int t = 0; t < T; ++t) m += x[static_cast<std::size_t>(j)][static_cast<std::size_t>(i) * T + t];
                    s += m / static_cast<double>(T);
                }
                index += 1.5 * s;
            }
            if (cfg.endogeneity != 0.0) index += 2.0 * u[static_cast<std::size_t>(i)];
            if (cfg.instrument_strength != 0.0 || cfg.with_instrument) index += 2.5 * w[static_cast<std::size_t>(i)];
            pi = std::clamp(1.0 / (1.0 + std::exp(-index)), 0.05, 0.95);
        }
        truth.pi_unit[static_cast<std::size_t>(i)] = pi;
        const bool treated = rng.uniform() < pi;
        const int pick = static_cast<int>(rng.uniform_int(cfg.cohort_periods.size()));
        if (treated) truth.cohort_of_unit[static_cast<std::size_t>(i)] = cfg.cohort_periods[static_cast<std::size_t>(pick)];
    }

    std::vector<double> eps(n_rows), nu(n_rows);
    const double rho = cfg.endogeneity;
    const double rho_c = std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < N; ++i) {
        for (int t = 0; t < T; ++t) {
            eps[static_cast<std::size_t>(i) * T + t] =
                cfg.noise_sd * (rho * u[static_cast<std::size_t>(i)] + rho_c * rng.normal());
        }
    }
    for (auto& v : nu) v = rng.normal();

    // Assemble columns.
    std::vector<std::string> units(n_rows);
    std::vector<int> periods(n_rows);
    std::vector<std::string> names = {"y", "d", "cohort"};
    for (int j = 0; j < P; ++j) names.push_back("x" + std::to_string(j + 1));
    const bool emit_z = cfg.with_instrument || cfg.instrument_strength != 0.0;
    if (emit_z) names.push_back("z");
    const bool emit_w = cfg.effect_heterogeneity != 0.0;
    if (emit_w) names.push_back("w");
    std::vector<std::vector<double>> cols(names.size(), std::vector<double>(n_rows));

    truth.g_obs.resize(n_rows);
    const int g_linear_terms = std::min(5, P);
    for (int i = 0; i < N; ++i) {
        for (int t = 0; t < T; ++t) {
            const std::size_t r = static_cast<std::size_t>(i) * T + t;
            units[r] = detail::padded_unit_name(i, N);
            periods[r] = t + 1;
            double g = 0.0;
            for (int j = 0; j < g_linear_terms; ++j) g += 0.5 * x[static_cast<std::size_t>(j)][r];
            if (cfg.nonlinearity == DgpForm::nonlinear) {
                g += x[0][r] * x[0][r] + std::sin(x[1][r]) + x[2][r] * x[3][r];
            }
            truth.g_obs[r] = g;
            const auto& G = truth.cohort_of_unit[static_cast<std::size_t>(i)];
            const double d = (G && periods[r] >= *G) ? 1.0 : 0.0;
            double y = cfg.theta0 * d + g + alpha[static_cast<std::size_t>(i)] +
                       lambda[static_cast<std::size_t>(t)] + eps[r];
            if (cfg.effect_heterogeneity != 0.0) y += cfg.effect_heterogeneity * wmod[static_cast<std::size_t>(i)] * d;
            cols[0][r] = y;
            cols[1][r] = d;
            cols[2][r] = G ? static_cast<double>(*G) : missing_value();
            for (int j = 0; j < P; ++j) cols[static_cast<std::size_t>(3 + j)][r] = x[static_cast<std::size_t>(j)][r];
            std::size_t next = static_cast<std::size_t>(3 + P);
            if (emit_z) cols[next++][r] = cfg.instrument_strength * w[static_cast<std::size_t>(i)] + nu[r];
            if (emit_w) cols[next][r] = wmod[static_cast<std::size_t>(i)];
        }
    }

    PanelDataset ds = PanelDataset::create(units, periods, names, cols);
    ds.roles.outcome = "y";
    ds.roles.treatment = "d";
    for (int j = 0; j < P; ++j) ds.roles.covariates.push_back("x" + std::to_string(j + 1));
    if (emit_z) ds.roles.instrument = "z";
    if (emit_w) ds.roles.moderator = "w";
    return {std::move(ds), std::move(truth)};
}

enum class McMethod { plr, iv_plr, naive, twfe };

// One estimator arm of a Monte Carlo run. period_dummies augments the
// nuisance features with period indicators so the learners can absorb the
// common time shocks the DGP builds in.
struct McEstimatorSpec {
    McMethod method = McMethod::plr;
    LearnerSpec learner = LearnerSpec::of(LearnerKind::ols);
    int folds = 5;
    bool period_dummies = true;
    std::string label;

    std::string name() const {
        if (!label.empty()) return label;
        switch (method) {
            case McMethod::plr: return "plr_" + learner.name() + "_k" + std::to_string(folds);
            case McMethod::iv_plr: return "iv_plr_" + learner.name() + "_k" + std::to_string(folds);
            case McMethod::naive: return "naive_ols";
            case McMethod::twfe: return "twfe";
        }
        return "?";
    }
};

struct McArmReport {
    std::string name;
    int reps_ok = 0;
    int failures = 0;
    double mean_bias = 0.0;
    double rmse = 0.0;
    double mean_se = 0.0;
    double sd = 0.0;       // population divisor, so rmse^2 = bias^2 + sd^2
    double coverage = 0.0;
    std::vector<std::string> failure_messages;
};

struct MonteCarloReport {
    double theta0 = 0.0;
    int reps = 0;
    std::vector<McArmReport> arms;
};

namespace detail {

// OLS of y on d with intercept; cluster-robust slope SE, normal CI.
inline EstimateResult naive_ols(const PanelDataset& ds) {
    const Eigen::VectorXd y = ds.column_vector(ds.roles.outcome);
    const Eigen::VectorXd d = ds.column_vector(ds.roles.treatment);
    const Eigen::Index n = y.size();
    const double dm = d.mean(), ym = y.mean();
    const double sdd = (d.array() - dm).square().sum();
    if (sdd < 1e-12) throw NoResidualTreatmentVariation("treatment has no variation");
    const double theta = (d.array() - dm).matrix().dot((y.array() - ym).matrix()) / sdd;
    const double a = ym - theta * dm;
    const Eigen::VectorXd e = y - (a + theta * d.array()).matrix();
    const Eigen::VectorXd psi = e.cwiseProduct((d.array() - dm).matrix());
    std::vector<int> clusters(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i] = ds.unit_idx(i);
    auto [g, score_sq] = cluster_score_sum(psi, clusters);
    if (g < 2) throw DegenerateClusters("need at least 2 clusters");
    const double c = static_cast<double>(g) / static_cast<double>(g - 1);
    EstimateResult out;
    out.theta = theta;
    out.se = std::sqrt(c * score_sq) / sdd;
    const Inference inf = summarize_inference(out.theta, out.se, kNormalDf);
    out.statistic = inf.statistic;
    out.p_value = inf.p_value;
    out.ci_low = inf.ci_low;
    out.ci_high = inf.ci_high;
    out.n_obs = static_cast<std::size_t>(n);
    out.n_clusters = g;
    out.method = "naive_ols";
    return out;
}

} // namespace detail

// Adds one indicator column per period after the first (pd_<period>) and
// registers them as covariates, letting nuisance learners absorb common
// time shocks.
inline void add_period_dummies(PanelDataset& ds) {
    const auto& levels = ds.period_levels();
    for (std::size_t t = 1; t < levels.size(); ++t) {  // first period is the base
        std::vector<double> col(ds.n_rows(), 0.0);
        for (std::size_t i = 0; i < ds.n_rows(); ++i) {
            if (ds.period_idx(i) == static_cast<int>(t)) col[i] = 1.0;
        }
        const std::string name = "pd_" + std::to_string(levels[t]);
        ds.add_column(name, std::move(col));
        ds.roles.covariates.push_back(name);
    }
}


// Runs every estimator arm on the same generated panel within each rep; rep r
// draws its panel from seed (cfg.seed, r). Reps run in parallel; all
// derivations depend only on (cfg.seed, r, arm index), so worker count never
// changes the report.
inline MonteCarloReport run_monte_carlo(const DgpConfig& cfg,
                                        const std::vector<McEstimatorSpec>& specs, int reps,
                                        int threads = 1) {
    if (reps < 1) throw ConfigInvalid("run_monte_carlo: reps must be >= 1");
    if (specs.empty()) throw ConfigInvalid("run_monte_carlo: no estimator specs");
    const std::size_t S = specs.size();
    std::vector<std::vector<double>> theta(S, std::vector<double>(static_cast<std::size_t>(reps),
                                                                  std::numeric_limits<double>::quiet_NaN()));
    std::vector<std::vector<double>> se(S, std::vector<double>(static_cast<std::size_t>(reps), 0.0));
    std::vector<std::vector<double>> lo(S, std::vector<double>(static_cast<std::size_t>(reps), 0.0));
    std::vector<std::vector<double>> hi(S, std::vector<double>(static_cast<std::size_t>(reps), 0.0));
    std::vector<std::vector<std::string>> errs(S, std::vector<std::string>(static_cast<std::size_t>(reps)));

    parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
        DgpConfig rep_cfg = cfg;
        rep_cfg.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)});
        auto [panel, truth] = generate_panel(rep_cfg);
        for (std::size_t s = 0; s < S; ++s) {
            const McEstimatorSpec& arm = specs[s];
            try {
                EstimateResult est;
                if (arm.method == McMethod::naive) {
                    est = detail::naive_ols(panel);
                } else if (arm.method == McMethod::twfe) {
                    TwfeResult t = estimate_twfe(panel, panel.roles.outcome,
                                                 {panel.roles.treatment});
                    const TwfeRow& row = t.row(panel.roles.treatment);
                    est.theta = row.coef;
                    est.se = row.se;
                    est.ci_low = row.ci_low;
                    est.ci_high = row.ci_high;
                } else {
                    PanelDataset ds = panel;  // value copy; arms stay independent
                    if (arm.period_dummies) add_period_dummies(ds);
                    FoldAssignment folds = assign_folds(ds, arm.folds, rep_cfg.seed);
                    LearnerSpec ly = arm.learner.with_seed(derive_seed(rep_cfg.seed, {s, 1}));
                    LearnerSpec ld = arm.learner.with_seed(derive_seed(rep_cfg.seed, {s, 2}));
                    if (arm.method == McMethod::iv_plr) {
                        LearnerSpec lz = arm.learner.with_seed(derive_seed(rep_cfg.seed, {s, 3}));
                        ResidualizedPanel res = residualize(ds, ly, ld, lz, folds, 1);
                        est = estimate_iv_plr(res);
                    } else {
                        ResidualizedPanel res = residualize(ds, ly, ld, std::nullopt, folds, 1);
                        est = estimate_plr(res);
                    }
                }
                theta[s][r] = est.theta;
                se[s][r] = est.se;
                lo[s][r] = est.ci_low;
                hi[s][r] = est.ci_high;
            } catch (const Error& e) {
                errs[s][r] = e.what();
            }
        }
    });

    MonteCarloReport report;
    report.theta0 = cfg.theta0;
    report.reps = reps;
    for (std::size_t s = 0; s < S; ++s) {
        McArmReport arm;
        arm.name = specs[s].name();
        double sum = 0.0, sum_se = 0.0;
        int covered = 0;
        std::vector<double> ok;
        for (int r = 0; r < reps; ++r) {
            if (!errs[s][static_cast<std::size_t>(r)].empty()) {
                ++arm.failures;
                if (arm.failure_messages.size() < 5) {
                    arm.failure_messages.push_back("rep " + std::to_string(r) + ": " +
                                                   errs[s][static_cast<std::size_t>(r)]);
                }
                continue;
            }
            const double th = theta[s][static_cast<std::size_t>(r)];
            ok.push_back(th);
            sum += th;
            sum_se += se[s][static_cast<std::size_t>(r)];
            if (lo[s][static_cast<std::size_t>(r)] <= cfg.theta0 && cfg.theta0 <= hi[s][static_cast<std::size_t>(r)]) {
                ++covered;
            }
        }
        arm.reps_ok = static_cast<int>(ok.size());
        if (arm.failures > reps / 10) {
            throw TooManyFailedReps("arm '" + arm.name + "' failed " + std::to_string(arm.failures) +
                                    " of " + std::to_string(reps) + " reps; first: " +
                                    (arm.failure_messages.empty() ? "?" : arm.failure_messages.front()));
        }
        if (!ok.empty()) {
            const double mean = sum / static_cast<double>(ok.size());
            arm.mean_bias = mean - cfg.theta0;
            double var = 0.0, msq = 0.0;
            for (double th : ok) {
                var += (th - mean) * (th - mean);
                msq += (th - cfg.theta0) * (th - cfg.theta0);
            }
            arm.sd = std::sqrt(var / static_cast<double>(ok.size()));
            arm.rmse = std::sqrt(msq / static_cast<double>(ok.size()));
            arm.mean_se = sum_se / static_cast<double>(ok.size());
            arm.coverage = static_cast<double>(covered) / static_cast<double>(ok.size());
        }
        report.arms.push_back(std::move(arm));
    }
    return report;
}

} // namespace sdidml
