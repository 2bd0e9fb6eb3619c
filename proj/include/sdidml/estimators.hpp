#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/crossfit.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/stats.hpp"

namespace sdidml {

// df sentinel meaning "use the normal law"; serialized as the string "normal".
inline constexpr int kNormalDf = -1;

struct Inference {
    double statistic;
    double p_value;
    double ci_low;
    double ci_high;
};

// Wald inference at level 95%. The normal branch uses the fixed critical
// value 1.959964; integer df uses the Student t law.
inline Inference summarize_inference(double theta, double se, int df) {
    Inference inf;
    inf.statistic = theta / se;
    if (df == kNormalDf) {
        inf.p_value = normal_two_sided_p(inf.statistic);
        inf.ci_low = theta - kNormal975 * se;
        inf.ci_high = theta + kNormal975 * se;
    } else {
        inf.p_value = student_t_two_sided_p(inf.statistic, static_cast<double>(df));
        const double crit = student_t_quantile(0.975, static_cast<double>(df));
        inf.ci_low = theta - crit * se;
        inf.ci_high = theta + crit * se;
    }
    return inf;
}

struct EstimateResult {
    double theta = 0.0;
    double se = 0.0;
    double statistic = 0.0;
    double p_value = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    int df = kNormalDf;
    std::string method;
    std::string learners;
    int folds = 0;
    std::uint64_t seed = 0;

    // diagnostics and IV extras
    double mean_y_res = std::numeric_limits<double>::quiet_NaN();
    double mean_d_res = std::numeric_limits<double>::quiet_NaN();
    double first_stage_t = std::numeric_limits<double>::quiet_NaN();
    bool weak_instrument = false;
    std::vector<std::string> warnings;
};

namespace detail {

// Cluster-summed score: returns (number of clusters, sum over clusters of
// squared within-cluster score totals).
inline std::pair<std::size_t, double> cluster_score_sum(const Eigen::VectorXd& psi,
                                                        const std::vector<int>& cluster_of_row) {
    if (cluster_of_row.size() != static_cast<std::size_t>(psi.size())) {
        throw ShapeMismatch("cluster assignment does not match score length");
    }
    int max_id = -1;
    for (int c : cluster_of_row) max_id = std::max(max_id, c);
    std::vector<double> sums(static_cast<std::size_t>(max_id + 1), 0.0);
    std::vector<bool> seen(static_cast<std::size_t>(max_id + 1), false);
    for (std::size_t i = 0; i < cluster_of_row.size(); ++i) {
        sums[static_cast<std::size_t>(cluster_of_row[i])] += psi(static_cast<Eigen::Index>(i));
        seen[static_cast<std::size_t>(cluster_of_row[i])] = true;
    }
    std::size_t g = 0;
    double total = 0.0;
    for (std::size_t c = 0; c < sums.size(); ++c) {
        if (seen[c]) {
            ++g;
            total += sums[c] * sums[c];
        }
    }
    return {g, total};
}

inline void check_residual_variation(const Eigen::VectorXd& d_res) {
    const double mean = d_res.mean();
    const double var = (d_res.array() - mean).square().sum() / static_cast<double>(d_res.size());
    if (var < 1e-12) {
        throw NoResidualTreatmentVariation("sample variance of the treatment residual is below 1e-12");
    }
}

} // namespace detail

// Residual-on-residual regression with a cluster-robust plug-in SE:
//   theta = sum(d~ y~) / sum(d~^2),  psi = (y~ - theta d~) d~,
//   SE = sqrt(G/(G-1) * sum_g S_g^2) / sum(d~^2).
// Singleton clusters make the correction n/(n-1), the unclustered case.
inline EstimateResult estimate_plr(const ResidualizedPanel& res,
                                   const std::vector<int>& cluster_of_row) {
    detail::check_residual_variation(res.d_res);
    const Eigen::Index n = res.d_res.size();
    const double denom = res.d_res.squaredNorm();
    const double theta = res.d_res.dot(res.y_res) / denom;
    const Eigen::VectorXd psi = (res.y_res - theta * res.d_res).cwiseProduct(res.d_res);
    auto [g, score_sq] = detail::cluster_score_sum(psi, cluster_of_row);
    if (g < 2) throw DegenerateClusters("need at least 2 clusters, got " + std::to_string(g));
    const double c = static_cast<double>(g) / static_cast<double>(g - 1);
    EstimateResult out;
    out.theta = theta;
    out.se = std::sqrt(c * score_sq) / denom;
    const Inference inf = summarize_inference(out.theta, out.se, kNormalDf);
    out.statistic = inf.statistic;
    out.p_value = inf.p_value;
    out.ci_low = inf.ci_low;
    out.ci_high = inf.ci_high;
    out.n_obs = static_cast<std::size_t>(n);
    out.n_clusters = g;
    out.df = kNormalDf;
    out.method = "dml_plr";
    out.learners = res.y_learner + "/" + res.d_learner;
    out.folds = res.folds;
    out.seed = res.seed;
    out.mean_y_res = res.mean_y_res;
    out.mean_d_res = res.mean_d_res;
    return out;
}

inline EstimateResult estimate_plr(const ResidualizedPanel& res) {
    return estimate_plr(res, res.cluster_of_row);
}

// IV analogue: theta = sum(z~ y~) / sum(z~ d~), psi = (y~ - theta d~) z~.
// First-stage strength is the cluster-robust t of d~ on z~ (no intercept).
inline EstimateResult estimate_iv_plr(const ResidualizedPanel& res,
                                      const std::vector<int>& cluster_of_row) {
    if (!res.z_res) throw ConfigInvalid("estimate_iv_plr: instrument residual missing");
    const Eigen::VectorXd& z = *res.z_res;
    const Eigen::Index n = z.size();
    const double denom = z.dot(res.d_res);
    if (std::fabs(denom) / static_cast<double>(n) < 1e-12) {
        throw WeakDenominator("mean of z_res*d_res is " + format_double(denom / static_cast<double>(n)) +
                              "; instrument carries no first-stage signal");
    }
    const double theta = z.dot(res.y_res) / denom;
    const Eigen::VectorXd psi = (res.y_res - theta * res.d_res).cwiseProduct(z);
    auto [g, score_sq] = detail::cluster_score_sum(psi, cluster_of_row);
    if (g < 2) throw DegenerateClusters("need at least 2 clusters, got " + std::to_string(g));
    const double c = static_cast<double>(g) / static_cast<double>(g - 1);

    EstimateResult out;
    out.theta = theta;
    out.se = std::sqrt(c * score_sq) / std::fabs(denom);
    const Inference inf = summarize_inference(out.theta, out.se, kNormalDf);
    out.statistic = inf.statistic;
    out.p_value = inf.p_value;
    out.ci_low = inf.ci_low;
    out.ci_high = inf.ci_high;
    out.n_obs = static_cast<std::size_t>(n);
    out.n_clusters = g;
    out.df = kNormalDf;
    out.method = "dml_iv_plr";
    out.learners = res.y_learner + "/" + res.d_learner + "/" + res.z_learner;
    out.folds = res.folds;
    out.seed = res.seed;
    out.mean_y_res = res.mean_y_res;
    out.mean_d_res = res.mean_d_res;

    const double zz = z.squaredNorm();
    const double b1 = denom / zz;
    const Eigen::VectorXd fs_psi = (res.d_res - b1 * z).cwiseProduct(z);
    auto [gf, fs_sq] = detail::cluster_score_sum(fs_psi, cluster_of_row);
    const double cf = static_cast<double>(gf) / static_cast<double>(gf - 1);
    const double fs_se = std::sqrt(cf * fs_sq) / zz;
    out.first_stage_t = b1 / fs_se;
    if (out.first_stage_t * out.first_stage_t < 10.0) {
        out.weak_instrument = true;
        out.warnings.push_back("weak instrument: first-stage t^2 = " +
                               format_double(out.first_stage_t * out.first_stage_t) + " < 10");
    }
    return out;
}

inline EstimateResult estimate_iv_plr(const ResidualizedPanel& res) {
    return estimate_iv_plr(res, res.cluster_of_row);
}

struct TwfeRow {
    std::string name;
    double coef = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct TwfeResult {
    std::vector<TwfeRow> rows;
    int demean_iterations = 0;
    double demean_max_change = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    int df = 0;
    std::size_t absorbed_units = 0;
    std::size_t absorbed_periods = 0;

    const TwfeRow& row(const std::string& name) const {
        for (const auto& r : rows) {
            if (r.name == name) return r;
        }
        throw UnknownVariable("no TWFE coefficient named '" + name + "'");
    }
};

namespace detail {

// Alternating within-transformation: subtract unit means, then period means,
// until the largest cell change is below tol. Converges because each pass is
// a projection; the cap guards pathological inputs.
inline int demean_two_way(Eigen::MatrixXd& M, const std::vector<int>& unit_of_row,
                          const std::vector<int>& period_of_row, std::size_t n_units,
                          std::size_t n_periods, double tol, int max_sweeps,
                          double* final_change = nullptr) {
    const Eigen::Index n = M.rows();
    const Eigen::Index q = M.cols();
    Eigen::MatrixXd unit_sum(static_cast<Eigen::Index>(n_units), q);
    Eigen::MatrixXd period_sum(static_cast<Eigen::Index>(n_periods), q);
    Eigen::VectorXd unit_cnt = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_units));
    Eigen::VectorXd period_cnt = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_periods));
    for (Eigen::Index i = 0; i < n; ++i) {
        unit_cnt(unit_of_row[static_cast<std::size_t>(i)]) += 1.0;
        period_cnt(period_of_row[static_cast<std::size_t>(i)]) += 1.0;
    }
    double change = std::numeric_limits<double>::infinity();
    int sweep = 0;
    for (; sweep < max_sweeps && change >= tol; ++sweep) {
        change = 0.0;
        unit_sum.setZero();
        for (Eigen::Index i = 0; i < n; ++i) unit_sum.row(unit_of_row[static_cast<std::size_t>(i)]) += M.row(i);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int u = unit_of_row[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < q; ++j) {
                const double delta = unit_sum(u, j) / unit_cnt(u);
                M(i, j) -= delta;
                change = std::max(change, std::fabs(delta));
            }
        }
        period_sum.setZero();
        for (Eigen::Index i = 0; i < n; ++i) period_sum.row(period_of_row[static_cast<std::size_t>(i)]) += M.row(i);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int t = period_of_row[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < q; ++j) {
                const double delta = period_sum(t, j) / period_cnt(t);
                M(i, j) -= delta;
                change = std::max(change, std::fabs(delta));
            }
        }
    }
    if (final_change) *final_change = change;
    if (change >= tol) throw NonConvergence("two-way demeaning did not converge in " +
                                            std::to_string(max_sweeps) + " sweeps");
    return sweep;
}

} // namespace detail

// Two-way fixed-effects regression: y and regressors are demeaned by unit and
// period, then OLS with CR1 cluster-robust errors and t(G-1) inference. The
// small-sample factor counts only the demeaned regressors (k = #regressors).
inline TwfeResult estimate_twfe(const PanelDataset& ds, const std::string& y_col,
                                const std::vector<std::string>& regressors,
                                const std::string& cluster_col = std::string()) {
    if (ds.n_units() < 2 || ds.n_periods() < 2) {
        throw InsufficientData("two-way fixed effects need at least 2 units and 2 periods");
    }
    if (regressors.empty()) throw ConfigInvalid("estimate_twfe: no regressors given");
    const std::size_t n = ds.n_rows();
    const std::size_t k = regressors.size();

    Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k + 1));
    M.col(0) = ds.column_vector(y_col);
    std::vector<double> col_scale(k, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
        Eigen::VectorXd v = ds.column_vector(regressors[j]);
        col_scale[j] = std::max(1.0, v.cwiseAbs().maxCoeff());
        M.col(static_cast<Eigen::Index>(j + 1)) = v;
    }
    if (!M.allFinite()) throw InsufficientData("estimate_twfe: missing values in estimation columns");

    std::vector<int> unit_of_row(n), period_of_row(n);
    for (std::size_t i = 0; i < n; ++i) {
        unit_of_row[i] = ds.unit_idx(i);
        period_of_row[i] = ds.period_idx(i);
    }
    TwfeResult out;
    out.demean_iterations = detail::demean_two_way(M, unit_of_row, period_of_row, ds.n_units(),
                                                   ds.n_periods(), 1e-10, 1000,
                                                   &out.demean_max_change);

    Eigen::VectorXd yt = M.col(0);
    Eigen::MatrixXd Xt = M.rightCols(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
        if (Xt.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff() <= 1e-8 * col_scale[j]) {
            throw CollinearAfterDemeaning("regressor '" + regressors[j] +
                                          "' is absorbed by the fixed effects");
        }
    }
    // Rank check among the demeaned regressors, naming the offender.
    {
        std::vector<Eigen::VectorXd> basis;
        for (std::size_t j = 0; j < k; ++j) {
            Eigen::VectorXd v = Xt.col(static_cast<Eigen::Index>(j));
            const double orig = v.norm();
            for (const auto& b : basis) v -= b.dot(v) * b;
            if (v.norm() <= 1e-8 * orig) {
                throw CollinearAfterDemeaning("regressor '" + regressors[j] +
                                              "' is collinear with other regressors after demeaning");
            }
            basis.push_back(v.normalized());
        }
    }

    Eigen::MatrixXd XtX = Xt.transpose() * Xt;
    Eigen::LDLT<Eigen::MatrixXd> solver(XtX);
    Eigen::VectorXd beta = solver.solve(Xt.transpose() * yt);
    Eigen::VectorXd resid = yt - Xt * beta;

    std::vector<int> clusters;
    if (!cluster_col.empty() && cluster_col != ds.unit_col_name()) {
        clusters = detail::encode_groups(ds.col(cluster_col));
    } else {
        clusters = unit_of_row;
    }
    int max_id = -1;
    for (int c : clusters) max_id = std::max(max_id, c);
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(max_id + 1),
                                      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k)));
    std::vector<bool> seen(static_cast<std::size_t>(max_id + 1), false);
    for (std::size_t i = 0; i < n; ++i) {
        sums[static_cast<std::size_t>(clusters[i])] +=
            resid(static_cast<Eigen::Index>(i)) * Xt.row(static_cast<Eigen::Index>(i)).transpose();
        seen[static_cast<std::size_t>(clusters[i])] = true;
    }
    std::size_t g = 0;
    for (std::size_t c = 0; c < sums.size(); ++c) {
        if (seen[c]) {
            ++g;
            meat += sums[c] * sums[c].transpose();
        }
    }
    if (g < 2) throw DegenerateClusters("need at least 2 clusters, got " + std::to_string(g));
    const double c1 = static_cast<double>(g) / static_cast<double>(g - 1) *
                      static_cast<double>(n - 1) / static_cast<double>(n - k);
    Eigen::MatrixXd bread = solver.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k),
                                                                   static_cast<Eigen::Index>(k)));
    Eigen::MatrixXd V = c1 * bread * meat * bread;

    out.n_obs = n;
    out.n_clusters = g;
    out.df = static_cast<int>(g) - 1;
    out.absorbed_units = ds.n_units();
    out.absorbed_periods = ds.n_periods();
    out.rows.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        TwfeRow& r = out.rows[j];
        r.name = regressors[j];
        r.coef = beta(static_cast<Eigen::Index>(j));
        r.se = std::sqrt(V(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
        const Inference inf = summarize_inference(r.coef, r.se, out.df);
        r.t = inf.statistic;
        r.p = inf.p_value;
        r.ci_low = inf.ci_low;
        r.ci_high = inf.ci_high;
    }
    return out;
}

// One full DML pass: fold assignment, cross-fitted residualization, and the
// residual-on-residual estimate. Learner seeds derive from the pipeline seed
// (1 outcome, 2 treatment, 3 instrument), fold assignment from the seed itself.
struct DmlPipeline {
    LearnerSpec learner_y = LearnerSpec::of(LearnerKind::forest);
    LearnerSpec learner_d = LearnerSpec::of(LearnerKind::forest);
    std::optional<LearnerSpec> learner_z;
    int folds = 5;
    std::uint64_t seed = 42;
    bool observation_folds = false;
    int threads = 1;
};

inline ResidualizedPanel residualize_pipeline(const PanelDataset& ds, const DmlPipeline& pipe) {
    FoldAssignment folds = assign_folds(ds, pipe.folds, pipe.seed, !pipe.observation_folds);
    LearnerSpec ly = pipe.learner_y.with_seed(derive_seed(pipe.seed, {1}));
    LearnerSpec ld = pipe.learner_d.with_seed(derive_seed(pipe.seed, {2}));
    std::optional<LearnerSpec> lz;
    if (pipe.learner_z) lz = pipe.learner_z->with_seed(derive_seed(pipe.seed, {3}));
    return residualize(ds, ly, ld, lz, folds, pipe.threads);
}

inline EstimateResult run_dml(const PanelDataset& ds, const DmlPipeline& pipe) {
    ResidualizedPanel res = residualize_pipeline(ds, pipe);
    return pipe.learner_z ? estimate_iv_plr(res) : estimate_plr(res);
}

} // namespace sdidml
