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
#include "sdidml/rng.hpp"
#include "sdidml/stats.hpp"

namespace sdidml {

struct ModerationResult {
    TwfeRow main;         // D
    TwfeRow interaction;  // D*W, the headline inference
    std::optional<TwfeRow> moderator;  // absent when the fixed effects absorb W
    bool moderator_absorbed = false;
    TwfeResult underlying;
};

namespace detail {

inline bool constant_within_groups(const std::vector<double>& v, const std::vector<int>& group,
                                   std::size_t n_groups) {
    std::vector<double> first(n_groups, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double& f = first[static_cast<std::size_t>(group[i])];
        if (std::isnan(f)) f = v[i];
        else if (f != v[i]) return false;
    }
    return true;
}

} // namespace detail

// Interaction model: TWFE of Y on {D, D*W, W, X}. A time-invariant (or
// period-invariant) moderator main effect is absorbed by the fixed effects
// and dropped, as an absorbing regression would drop it; the interaction
// always stays in.
inline ModerationResult moderation(const PanelDataset& ds,
                                   const std::vector<std::string>& covariates,
                                   const std::string& cluster = std::string()) {
    if (ds.roles.moderator.empty()) throw ConfigInvalid("moderation: moderator role not set");
    const std::string& w_col = ds.roles.moderator;
    const std::string& d_col = ds.roles.treatment;
    const std::vector<double>& w = ds.col(w_col);
    const std::vector<double>& d = ds.col(d_col);
    double wmin = w[0], wmax = w[0];
    for (double v : w) {
        wmin = std::min(wmin, v);
        wmax = std::max(wmax, v);
    }
    if (wmin == wmax) {
        throw ConstantModerator("moderator '" + w_col + "' is constant; D*W is collinear with D");
    }

    PanelDataset work = ds;
    std::vector<double> inter(work.n_rows());
    for (std::size_t i = 0; i < inter.size(); ++i) inter[i] = d[i] * w[i];
    const std::string inter_col = d_col + "_x_" + w_col;
    work.add_column(inter_col, std::move(inter));

    std::vector<int> unit_of_row(work.n_rows()), period_of_row(work.n_rows());
    for (std::size_t i = 0; i < work.n_rows(); ++i) {
        unit_of_row[i] = work.unit_idx(i);
        period_of_row[i] = work.period_idx(i);
    }
    const bool absorbed = detail::constant_within_groups(w, unit_of_row, work.n_units()) ||
                          detail::constant_within_groups(w, period_of_row, work.n_periods());

    std::vector<std::string> regressors = {d_col, inter_col};
    if (!absorbed) regressors.push_back(w_col);
    for (const auto& c : covariates) regressors.push_back(c);

    ModerationResult out;
    out.underlying = estimate_twfe(work, work.roles.outcome, regressors, cluster);
    out.main = out.underlying.row(d_col);
    out.interaction = out.underlying.row(inter_col);
    out.moderator_absorbed = absorbed;
    if (!absorbed) out.moderator = out.underlying.row(w_col);
    return out;
}

struct PathEstimate {
    double coef = 0.0;
    double se = 0.0;
    double statistic = 0.0;
    double p = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct MediationResult {
    PathEstimate total;    // c: D -> Y
    PathEstimate a;        // D -> M
    PathEstimate b;        // M -> Y given D
    PathEstimate direct;   // c': D -> Y given M
    double indirect = 0.0;           // a*b
    double sobel_se = 0.0;           // sqrt(a^2 se_b^2 + b^2 se_a^2)
    double statistic = 0.0;
    double p_value = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool fixed_effects = true;
    std::optional<double> bootstrap_se;
    int bootstrap_reps = 0;
    std::uint64_t seed = 0;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
};

namespace detail {

struct OlsRows {
    std::vector<TwfeRow> rows;
    int df = 0;
};

// Pooled OLS with intercept and CR1 cluster errors; k counts the intercept.
inline OlsRows ols_cluster(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                           const std::vector<std::string>& names,
                           const std::vector<int>& clusters) {
    const Eigen::Index n = y.size();
    const Eigen::Index p = X.cols();
    Eigen::MatrixXd Xi(n, p + 1);
    Xi.col(0).setOnes();
    Xi.rightCols(p) = X;
    Eigen::LDLT<Eigen::MatrixXd> solver(Xi.transpose() * Xi);
    Eigen::VectorXd beta = solver.solve(Xi.transpose() * y);
    Eigen::VectorXd resid = y - Xi * beta;

    int max_id = -1;
    for (int c : clusters) max_id = std::max(max_id, c);
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(max_id + 1),
                                      Eigen::VectorXd::Zero(p + 1));
    std::vector<bool> seen(static_cast<std::size_t>(max_id + 1), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        sums[static_cast<std::size_t>(clusters[static_cast<std::size_t>(i)])] += resid(i) * Xi.row(i).transpose();
        seen[static_cast<std::size_t>(clusters[static_cast<std::size_t>(i)])] = true;
    }
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p + 1, p + 1);
    std::size_t g = 0;
    for (std::size_t c = 0; c < sums.size(); ++c) {
        if (seen[c]) {
            ++g;
            meat += sums[c] * sums[c].transpose();
        }
    }
    if (g < 2) throw DegenerateClusters("need at least 2 clusters");
    const double c1 = static_cast<double>(g) / static_cast<double>(g - 1) *
                      static_cast<double>(n - 1) / static_cast<double>(n - (p + 1));
    Eigen::MatrixXd bread = solver.solve(Eigen::MatrixXd::Identity(p + 1, p + 1));
    Eigen::MatrixXd V = c1 * bread * meat * bread;

    OlsRows out;
    out.df = static_cast<int>(g) - 1;
    for (Eigen::Index j = 0; j < p; ++j) {
        TwfeRow r;
        r.name = names[static_cast<std::size_t>(j)];
        r.coef = beta(j + 1);
        r.se = std::sqrt(V(j + 1, j + 1));
        const Inference inf = summarize_inference(r.coef, r.se, out.df);
        r.t = inf.statistic;
        r.p = inf.p_value;
        r.ci_low = inf.ci_low;
        r.ci_high = inf.ci_high;
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline PathEstimate to_path(const TwfeRow& r) {
    return PathEstimate{r.coef, r.se, r.t, r.p, r.ci_low, r.ci_high};
}

} // namespace detail

// Three-equation product-of-paths mediation on one sample:
//   total:  Y ~ D + X        -> c
//   a:      M ~ D + X        -> a
//   joint:  Y ~ D + M + X    -> c' (D), b (M)
// indirect = a*b with the delta-method SE. fixed_effects=true runs each
// equation as TWFE; false runs pooled OLS with intercept, for which
// c = c' + a*b holds exactly on a common sample. The optional cluster
// bootstrap resamples units with replacement and reports the sd of a*b.
inline MediationResult mediation(const PanelDataset& ds,
                                 const std::vector<std::string>& covariates,
                                 bool fixed_effects = true,
                                 const std::string& cluster = std::string(),
                                 int bootstrap_reps = 0, std::uint64_t seed = 42) {
    if (ds.roles.mediator.empty()) throw ConfigInvalid("mediation: mediator role not set");
    const std::string& m_col = ds.roles.mediator;
    const std::string& d_col = ds.roles.treatment;
    const std::string& y_col = ds.roles.outcome;
    {
        const std::vector<double>& m = ds.col(m_col);
        double lo = m[0], hi = m[0];
        for (double v : m) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (lo == hi) throw ConstantMediator("mediator '" + m_col + "' is constant");
    }

    std::vector<std::string> base = {d_col};
    for (const auto& c : covariates) base.push_back(c);
    std::vector<std::string> joint = {d_col, m_col};
    for (const auto& c : covariates) joint.push_back(c);

    MediationResult out;
    out.fixed_effects = fixed_effects;
    out.seed = seed;
    std::size_t n_clusters = 0;
    if (fixed_effects) {
        TwfeResult total = estimate_twfe(ds, y_col, base, cluster);
        TwfeResult path_a = estimate_twfe(ds, m_col, base, cluster);
        TwfeResult jointr = estimate_twfe(ds, y_col, joint, cluster);
        out.total = detail::to_path(total.row(d_col));
        out.a = detail::to_path(path_a.row(d_col));
        out.b = detail::to_path(jointr.row(m_col));
        out.direct = detail::to_path(jointr.row(d_col));
        out.n_obs = total.n_obs;
        n_clusters = total.n_clusters;
    } else {
        Eigen::VectorXd y = ds.column_vector(y_col);
        Eigen::VectorXd m = ds.column_vector(m_col);
        Eigen::MatrixXd Xb = ds.feature_matrix(base);
        Eigen::MatrixXd Xj = ds.feature_matrix(joint);
        std::vector<int> clusters;
        if (!cluster.empty() && cluster != ds.unit_col_name()) {
            clusters = detail::encode_groups(ds.col(cluster));
        } else {
            clusters.resize(ds.n_rows());
            for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i] = ds.unit_idx(i);
        }
        detail::OlsRows total = detail::ols_cluster(y, Xb, base, clusters);
        detail::OlsRows path_a = detail::ols_cluster(m, Xb, base, clusters);
        detail::OlsRows jointr = detail::ols_cluster(y, Xj, joint, clusters);
        out.total = detail::to_path(total.rows[0]);
        out.a = detail::to_path(path_a.rows[0]);
        out.direct = detail::to_path(jointr.rows[0]);
        out.b = detail::to_path(jointr.rows[1]);
        out.n_obs = ds.n_rows();
        n_clusters = static_cast<std::size_t>(total.df) + 1;
    }
    out.n_clusters = n_clusters;
    out.indirect = out.a.coef * out.b.coef;
    out.sobel_se = std::sqrt(out.a.coef * out.a.coef * out.b.se * out.b.se +
                             out.b.coef * out.b.coef * out.a.se * out.a.se);
    if (out.sobel_se > 0.0) {
        out.statistic = out.indirect / out.sobel_se;
        out.p_value = normal_two_sided_p(out.statistic);
    }
    out.ci_low = out.indirect - kNormal975 * out.sobel_se;
    out.ci_high = out.indirect + kNormal975 * out.sobel_se;

    if (bootstrap_reps > 0) {
        out.bootstrap_reps = bootstrap_reps;
        const std::size_t N = ds.n_units();
        Eigen::VectorXd y = ds.column_vector(y_col);
        Eigen::VectorXd m = ds.column_vector(m_col);
        Eigen::MatrixXd Xb = ds.feature_matrix(base);
        Eigen::MatrixXd Xj = ds.feature_matrix(joint);
        std::vector<std::vector<std::size_t>> rows_of_unit(N);
        for (std::size_t i = 0; i < ds.n_rows(); ++i) {
            rows_of_unit[static_cast<std::size_t>(ds.unit_idx(i))].push_back(i);
        }
        std::vector<double> draws;
        draws.reserve(static_cast<std::size_t>(bootstrap_reps));
        for (int r = 0; r < bootstrap_reps; ++r) {
            Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
            std::vector<std::size_t> rows;
            std::vector<int> unit_ids, period_ids;
            for (std::size_t c = 0; c < N; ++c) {
                const std::size_t pick = static_cast<std::size_t>(rng.uniform_int(N));
                for (std::size_t rr : rows_of_unit[pick]) {
                    rows.push_back(rr);
                    unit_ids.push_back(static_cast<int>(c));
                    period_ids.push_back(ds.period_idx(rr));
                }
            }
            const Eigen::Index nb = static_cast<Eigen::Index>(rows.size());
            try {
                if (fixed_effects) {
                    // Columns: y, m, then the D + covariate block.
                    Eigen::MatrixXd M(nb, 2 + Xb.cols());
                    for (Eigen::Index i = 0; i < nb; ++i) {
                        const Eigen::Index src = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
                        M(i, 0) = y(src);
                        M(i, 1) = m(src);
                        M.row(i).tail(Xb.cols()) = Xb.row(src);
                    }
                    detail::demean_two_way(M, unit_ids, period_ids, N, ds.n_periods(), 1e-10, 1000);
                    Eigen::MatrixXd Xa = M.rightCols(Xb.cols());  // D + covariates
                    Eigen::VectorXd a_hat = (Xa.transpose() * Xa).ldlt().solve(Xa.transpose() * M.col(1));
                    Eigen::MatrixXd Xjd(nb, Xb.cols() + 1);  // D, m, covariates
                    Xjd.col(0) = M.col(2);
                    Xjd.col(1) = M.col(1);
                    if (Xb.cols() > 1) Xjd.rightCols(Xb.cols() - 1) = M.rightCols(Xb.cols() - 1);
                    Eigen::VectorXd j_hat = (Xjd.transpose() * Xjd).ldlt().solve(Xjd.transpose() * M.col(0));
                    draws.push_back(a_hat(0) * j_hat(1));
                } else {
                    Eigen::MatrixXd Xa(nb, Xb.cols() + 1), Xjd(nb, Xj.cols() + 1);
                    Eigen::VectorXd yb(nb), mb(nb);
                    for (Eigen::Index i = 0; i < nb; ++i) {
                        const Eigen::Index src = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
                        Xa(i, 0) = 1.0;
                        Xa.row(i).tail(Xb.cols()) = Xb.row(src);
                        Xjd(i, 0) = 1.0;
                        Xjd.row(i).tail(Xj.cols()) = Xj.row(src);
                        yb(i) = y(src);
                        mb(i) = m(src);
                    }
                    Eigen::VectorXd a_hat = (Xa.transpose() * Xa).ldlt().solve(Xa.transpose() * mb);
                    Eigen::VectorXd j_hat = (Xjd.transpose() * Xjd).ldlt().solve(Xjd.transpose() * yb);
                    draws.push_back(a_hat(1) * j_hat(2));
                }
            } catch (const Error&) {
                // degenerate resample; skipped
            }
        }
        if (draws.size() > 1) {
            double mean = 0.0;
            for (double v : draws) mean += v;
            mean /= static_cast<double>(draws.size());
            double ss = 0.0;
            for (double v : draws) ss += (v - mean) * (v - mean);
            out.bootstrap_se = std::sqrt(ss / static_cast<double>(draws.size() - 1));
        }
    }
    return out;
}

struct SubgroupRow {
    double group_value = 0.0;
    std::string label;
    std::size_t n_units = 0;
    EstimateResult estimate;
};

struct SubgroupPair {
    std::string label_a;
    std::string label_b;
    double delta = 0.0;  // theta_a - theta_b
    double se = 0.0;     // sqrt(se_a^2 + se_b^2), groups independent
    double z = 0.0;
    double p = 1.0;
};

struct SubgroupComparison {
    std::vector<SubgroupRow> groups;   // sorted by group value
    std::vector<SubgroupPair> pairs;
    std::string note = "cross-group difference assumes independence across disjoint unit sets";
};

// Per-group re-estimation: each group gets a fresh fold assignment and a
// seed derived from (pipeline seed, group index in sorted-value order).
inline SubgroupComparison subgroup_compare(const PanelDataset& ds, const std::string& group_col,
                                           const DmlPipeline& pipe) {
    const std::vector<double>& gv = ds.col(group_col);
    std::set<double> values;
    for (double v : gv) {
        if (!is_missing(v)) values.insert(v);
    }
    if (values.size() < 2) {
        throw ConfigInvalid("subgroup comparison needs at least 2 groups in '" + group_col + "'");
    }
    SubgroupComparison out;
    std::size_t gi = 0;
    for (double v : values) {
        PanelDataset sub = filter_subgroup(ds, group_col, {v});
        const std::size_t need = 2 * static_cast<std::size_t>(pipe.folds);
        if (sub.n_units() < need) {
            throw GroupTooSmall("group " + group_col + "=" + format_double(v) + " has " +
                                std::to_string(sub.n_units()) + " units; need at least " +
                                std::to_string(need));
        }
        DmlPipeline gp = pipe;
        gp.seed = derive_seed(pipe.seed, {static_cast<std::uint64_t>(gi)});
        SubgroupRow row;
        row.group_value = v;
        row.label = group_col + "=" + format_double(v);
        row.n_units = sub.n_units();
        row.estimate = run_dml(sub, gp);
        out.groups.push_back(std::move(row));
        ++gi;
    }
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
        for (std::size_t j = i + 1; j < out.groups.size(); ++j) {
            SubgroupPair pr;
            pr.label_a = out.groups[i].label;
            pr.label_b = out.groups[j].label;
            pr.delta = out.groups[i].estimate.theta - out.groups[j].estimate.theta;
            pr.se = std::sqrt(out.groups[i].estimate.se * out.groups[i].estimate.se +
                              out.groups[j].estimate.se * out.groups[j].estimate.se);
            if (pr.se > 0.0) {
                pr.z = pr.delta / pr.se;
                pr.p = normal_two_sided_p(pr.z);
            }
            out.pairs.push_back(std::move(pr));
        }
    }
    return out;
}

} // namespace sdidml
