#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/crossfit.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/estimators.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/parallel.hpp"
#include "sdidml/rng.hpp"
#include "sdidml/stats.hpp"

namespace sdidml {

struct EventStudyRow {
    int relative_time;
    double coef;
    double se;
    double ci_low;
    double ci_high;
};

struct EventStudyResult {
    std::vector<EventStudyRow> rows;  // strictly increasing; reference omitted
    int reference = -1;
    int floor_bin = -4;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
};

namespace detail {

inline std::string event_dummy_name(int rel) {
    return rel < 0 ? "ev_m" + std::to_string(-rel) : "ev_" + std::to_string(rel);
}

} // namespace detail

// Binned event study: relative-time dummies (distances at or below floor_bin
// pooled into it, reference omitted, never-treated rows all-zero) estimated
// jointly with the covariates in a two-way fixed-effects regression.
inline EventStudyResult event_study(const PanelDataset& ds, const CohortMap& cohorts,
                                    const std::vector<std::string>& covariates,
                                    int floor_bin = -4, int reference = -1,
                                    const std::string& cluster = std::string()) {
    if (reference < floor_bin) throw ConfigInvalid("event study reference below the floor bin");
    if (cohorts.never_count() == 0) {
        throw NoControlUnits("every unit is eventually treated; no never-treated controls");
    }
    std::vector<double> rel = relative_time(ds, cohorts, floor_bin);
    std::set<int> values;
    for (double v : rel) {
        if (!is_missing(v)) values.insert(static_cast<int>(v));
    }
    int n_pre = 0, n_post = 0;
    for (int v : values) {
        if (v < reference) ++n_pre;
        if (v > reference) ++n_post;
    }
    if (n_pre < 2) throw NoPrePeriods("need at least 2 relative-time bins before the reference, got " +
                                      std::to_string(n_pre));
    if (n_post < 2) throw InsufficientData("need at least 2 relative-time bins after the reference, got " +
                                           std::to_string(n_post));

    PanelDataset work = ds;
    std::vector<std::string> regressors;
    std::vector<int> dummy_rel;
    for (int v : values) {
        if (v == reference) continue;
        std::vector<double> col(work.n_rows(), 0.0);
        for (std::size_t i = 0; i < work.n_rows(); ++i) {
            if (!is_missing(rel[i]) && static_cast<int>(rel[i]) == v) col[i] = 1.0;
        }
        const std::string name = detail::event_dummy_name(v);
        work.add_column(name, std::move(col));
        regressors.push_back(name);
        dummy_rel.push_back(v);
    }
    for (const auto& c : covariates) regressors.push_back(c);

    TwfeResult twfe = estimate_twfe(work, work.roles.outcome, regressors, cluster);
    EventStudyResult out;
    out.reference = reference;
    out.floor_bin = floor_bin;
    out.n_obs = twfe.n_obs;
    out.n_clusters = twfe.n_clusters;
    for (std::size_t j = 0; j < dummy_rel.size(); ++j) {
        const TwfeRow& r = twfe.rows[j];
        out.rows.push_back(EventStudyRow{dummy_rel[j], r.coef, r.se, r.ci_low, r.ci_high});
    }
    return out;
}

struct PlaceboResult {
    double observed_theta = 0.0;
    std::vector<double> thetas;  // successful reps, rep order
    double p_value = 1.0;
    int reps = 0;
    int failures = 0;
    std::uint64_t seed = 0;
    std::string scheme;  // "unit_cohort" or "observation"
};

namespace detail {

inline std::vector<double> treatment_from_cohorts(const PanelDataset& ds,
                                                  const std::vector<std::optional<int>>& g) {
    std::vector<double> d(ds.n_rows(), 0.0);
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        const auto& gi = g[static_cast<std::size_t>(ds.unit_idx(i))];
        if (gi && ds.period(i) >= *gi) d[i] = 1.0;
    }
    return d;
}

// Re-estimates theta with the outcome residual held fixed: only the treatment
// nuisance depends on D, so each rep refits m(X) alone.
inline double refit_treatment_and_estimate(const PanelDataset& ds, const Eigen::MatrixXd& X,
                                           const ResidualizedPanel& base,
                                           const Eigen::VectorXd& new_d, const LearnerSpec& d_spec,
                                           int folds) {
    Eigen::VectorXd d_hat = out_of_fold_predict(X, new_d, base.fold_of_row, folds, d_spec, 1);
    ResidualizedPanel rep = base;
    rep.d_res = new_d - d_hat;
    rep.mean_d_res = rep.d_res.mean();
    return estimate_plr(rep).theta;
}

} // namespace detail

// Placebo test: permutes the per-unit cohort labels (never-treated included)
// across units, rebuilds D, refits the treatment nuisance, and re-estimates.
// The observation scheme instead permutes the D column across rows, which can
// produce non-absorbing histories; it exists for replication only.
inline PlaceboResult placebo_permutation(const PanelDataset& ds, const CohortMap& cohorts,
                                         const DmlPipeline& pipe, int reps = 500,
                                         std::uint64_t seed = 123,
                                         bool observation_scheme = false, int threads = 1) {
    if (reps < 1) throw ConfigInvalid("placebo_permutation: reps must be >= 1");
    ResidualizedPanel base = residualize_pipeline(ds, pipe);
    EstimateResult observed = estimate_plr(base);
    const Eigen::MatrixXd X = detail::nuisance_features(ds);
    const Eigen::VectorXd d_obs = ds.column_vector(ds.roles.treatment);
    const LearnerSpec d_spec = pipe.learner_d;

    std::vector<double> thetas(static_cast<std::size_t>(reps),
                               std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> errors(static_cast<std::size_t>(reps));
    parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
        const std::uint64_t rep_seed = derive_seed(seed, {static_cast<std::uint64_t>(r)});
        Rng rng(derive_seed(rep_seed, {0}));
        try {
            Eigen::VectorXd new_d(d_obs.size());
            if (observation_scheme) {
                std::vector<int> perm = rng.permutation(static_cast<int>(d_obs.size()));
                for (Eigen::Index i = 0; i < d_obs.size(); ++i) new_d(i) = d_obs(perm[static_cast<std::size_t>(i)]);
            } else {
                std::vector<int> perm = rng.permutation(static_cast<int>(ds.n_units()));
                std::vector<std::optional<int>> g(ds.n_units());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = cohorts.g[static_cast<std::size_t>(perm[i])];
                std::vector<double> d = detail::treatment_from_cohorts(ds, g);
                for (std::size_t i = 0; i < d.size(); ++i) new_d(static_cast<Eigen::Index>(i)) = d[i];
            }
            LearnerSpec spec = d_spec.with_seed(derive_seed(rep_seed, {1}));
            thetas[r] = detail::refit_treatment_and_estimate(ds, X, base, new_d, spec, pipe.folds);
        } catch (const Error& e) {
            errors[r] = e.what();
        }
    });

    PlaceboResult out;
    out.observed_theta = observed.theta;
    out.reps = reps;
    out.seed = seed;
    out.scheme = observation_scheme ? "observation" : "unit_cohort";
    std::size_t extreme = 0;
    for (int r = 0; r < reps; ++r) {
        if (!errors[static_cast<std::size_t>(r)].empty()) {
            ++out.failures;
            continue;
        }
        out.thetas.push_back(thetas[static_cast<std::size_t>(r)]);
        if (std::fabs(thetas[static_cast<std::size_t>(r)]) >= std::fabs(observed.theta)) ++extreme;
    }
    if (out.failures * 10 > reps) {
        throw TooManyFailedReps(std::to_string(out.failures) + " of " + std::to_string(reps) +
                                " placebo reps failed");
    }
    out.p_value = (1.0 + static_cast<double>(extreme)) / (static_cast<double>(out.thetas.size()) + 1.0);
    return out;
}

namespace detail {

inline double quantile_linear(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

} // namespace detail

struct KdeResult {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

// Gaussian kernel density on a 256-point grid spanning the data +-3 bandwidths;
// Silverman bandwidth 0.9 * min(sd, IQR/1.34) * m^(-1/5) with degeneracy guards.
inline KdeResult gaussian_kde(const std::vector<double>& xs) {
    if (xs.empty()) throw InsufficientData("density estimate needs at least one point");
    KdeResult out;
    const std::size_t m = xs.size();
    double sum = 0.0;
    for (double t : xs) sum += t;
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (double t : xs) ss += (t - mean) * (t - mean);
    const double sd = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
    const double iqr = m > 1 ? detail::quantile_linear(xs, 0.75) - detail::quantile_linear(xs, 0.25)
                             : 0.0;
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = std::max(sd, 1e-9);
    out.bandwidth = 0.9 * spread * std::pow(static_cast<double>(m), -0.2);
    if (out.bandwidth <= 0.0) out.bandwidth = 1e-9;

    const double lo = *std::min_element(xs.begin(), xs.end()) - 3.0 * out.bandwidth;
    const double hi = *std::max_element(xs.begin(), xs.end()) + 3.0 * out.bandwidth;
    const int n_grid = 256;
    out.grid.resize(n_grid);
    out.density.resize(n_grid);
    for (int i = 0; i < n_grid; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_grid - 1);
        out.grid[static_cast<std::size_t>(i)] = x;
        double dens = 0.0;
        for (double t : xs) dens += normal_pdf((x - t) / out.bandwidth);
        out.density[static_cast<std::size_t>(i)] = dens / (static_cast<double>(m) * out.bandwidth);
    }
    return out;
}

struct CounterfactualResult {
    double observed_theta = 0.0;
    std::vector<double> thetas;
    double mean = 0.0;
    double sd = 0.0;  // n-1 divisor; the normal-overlay parameters
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
    double observed_percentile = 0.0;
    double p_two_sided = 1.0;  // tail share, centered at the permutation mean
    int reps = 0;
    int failures = 0;
    std::uint64_t seed = 0;
};

// Randomizes the adoption period of every treated unit uniformly over the
// observed periods, re-estimates, and summarizes the resulting distribution
// with a Gaussian KDE (Silverman bandwidth) plus a normal overlay.
inline CounterfactualResult counterfactual_timing(const PanelDataset& ds, const CohortMap& cohorts,
                                                  const DmlPipeline& pipe, int reps = 500,
                                                  std::uint64_t seed = 123, int threads = 1) {
    if (reps < 1) throw ConfigInvalid("counterfactual_timing: reps must be >= 1");
    if (ds.n_periods() < 2) {
        throw NoPrePeriods("timing randomization needs at least 2 periods");
    }
    ResidualizedPanel base = residualize_pipeline(ds, pipe);
    EstimateResult observed = estimate_plr(base);
    const Eigen::MatrixXd X = detail::nuisance_features(ds);
    const std::vector<int>& periods = ds.period_levels();
    const LearnerSpec d_spec = pipe.learner_d;

    std::vector<double> thetas(static_cast<std::size_t>(reps),
                               std::numeric_limits<double>::quiet_NaN());
    std::vector<std::string> errors(static_cast<std::size_t>(reps));
    parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
        const std::uint64_t rep_seed = derive_seed(seed, {static_cast<std::uint64_t>(r)});
        Rng rng(derive_seed(rep_seed, {0}));
        try {
            std::vector<std::optional<int>> g(ds.n_units());
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (cohorts.g[i]) g[i] = periods[rng.uniform_int(periods.size())];
            }
            std::vector<double> d = detail::treatment_from_cohorts(ds, g);
            Eigen::VectorXd new_d(static_cast<Eigen::Index>(d.size()));
            for (std::size_t i = 0; i < d.size(); ++i) new_d(static_cast<Eigen::Index>(i)) = d[i];
            LearnerSpec spec = d_spec.with_seed(derive_seed(rep_seed, {1}));
            thetas[r] = detail::refit_treatment_and_estimate(ds, X, base, new_d, spec, pipe.folds);
        } catch (const Error& e) {
            errors[r] = e.what();
        }
    });

    CounterfactualResult out;
    out.observed_theta = observed.theta;
    out.reps = reps;
    out.seed = seed;
    for (int r = 0; r < reps; ++r) {
        if (!errors[static_cast<std::size_t>(r)].empty()) ++out.failures;
        else out.thetas.push_back(thetas[static_cast<std::size_t>(r)]);
    }
    if (out.failures * 10 > reps) {
        throw TooManyFailedReps(std::to_string(out.failures) + " of " + std::to_string(reps) +
                                " counterfactual reps failed");
    }
    const std::size_t m = out.thetas.size();
    double sum = 0.0;
    for (double t : out.thetas) sum += t;
    out.mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (double t : out.thetas) ss += (t - out.mean) * (t - out.mean);
    out.sd = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;

    KdeResult kde = gaussian_kde(out.thetas);
    out.grid = std::move(kde.grid);
    out.density = std::move(kde.density);
    out.bandwidth = kde.bandwidth;

    std::size_t below = 0, extreme = 0;
    for (double t : out.thetas) {
        if (t <= observed.theta) ++below;
        if (std::fabs(t - out.mean) >= std::fabs(observed.theta - out.mean)) ++extreme;
    }
    out.observed_percentile = static_cast<double>(below) / static_cast<double>(m);
    out.p_two_sided = (1.0 + static_cast<double>(extreme)) / (static_cast<double>(m) + 1.0);
    return out;
}

struct SensitivityRow {
    std::string descriptor;
    bool ok = false;
    EstimateResult estimate;
    std::string error;
};

struct SensitivityTable {
    std::vector<SensitivityRow> rows;  // sorted by descriptor
};

// Cartesian product of fold counts and learner specs, each estimated with the
// base pipeline seed; failures are recorded inline and the scan continues.
inline SensitivityTable sensitivity_scan(const PanelDataset& ds, const DmlPipeline& base,
                                         const std::vector<int>& fold_variants,
                                         const std::vector<LearnerSpec>& learner_variants) {
    if (fold_variants.empty() || learner_variants.empty()) {
        throw ConfigInvalid("sensitivity_scan: need at least one fold and one learner variant");
    }
    SensitivityTable out;
    for (int k : fold_variants) {
        for (const auto& spec : learner_variants) {
            SensitivityRow row;
            row.descriptor = "folds=" + std::to_string(k) + ";learner=" + spec.name();
            DmlPipeline pipe = base;
            pipe.folds = k;
            pipe.learner_y = spec;
            pipe.learner_d = spec;
            pipe.learner_z.reset();
            try {
                row.estimate = run_dml(ds, pipe);
                row.ok = true;
            } catch (const Error& e) {
                row.error = e.what();
            }
            out.rows.push_back(std::move(row));
        }
    }
    std::sort(out.rows.begin(), out.rows.end(),
              [](const SensitivityRow& a, const SensitivityRow& b) {
                  return a.descriptor < b.descriptor;
              });
    return out;
}

} // namespace sdidml
