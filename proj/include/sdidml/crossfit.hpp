#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/csv.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/learners.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/parallel.hpp"
#include "sdidml/rng.hpp"

namespace sdidml {

// K-fold partition. Unit-level assignment keeps all observations of a unit in
// one fold so serial correlation cannot leak across the train/predict split;
// observation-level assignment exists only as a replication mode.
struct FoldAssignment {
    int K = 0;
    std::uint64_t seed = 0;
    bool by_unit = true;
    std::vector<int> fold_of_unit;  // indexed by unit level; empty in observation mode
    std::vector<int> fold_of_row;
};

// Seeded shuffle then round-robin: fold sizes differ by at most one.
inline std::vector<int> round_robin_folds(std::size_t n, int K, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> perm = rng.permutation(static_cast<int>(n));
    std::vector<int> fold(n);
    for (std::size_t i = 0; i < n; ++i) {
        fold[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % static_cast<std::size_t>(K));
    }
    return fold;
}

inline FoldAssignment assign_folds(const PanelDataset& ds, int K, std::uint64_t seed,
                                   bool by_unit = true) {
    if (K < 2) throw TooFewUnits("need at least 2 folds, got " + std::to_string(K));
    FoldAssignment fa;
    fa.K = K;
    fa.seed = seed;
    fa.by_unit = by_unit;
    if (by_unit) {
        if (static_cast<std::size_t>(K) > ds.n_units()) {
            throw TooFewUnits("K=" + std::to_string(K) + " folds but only " +
                              std::to_string(ds.n_units()) + " units");
        }
        fa.fold_of_unit = round_robin_folds(ds.n_units(), K, seed);
        fa.fold_of_row.resize(ds.n_rows());
        for (std::size_t i = 0; i < ds.n_rows(); ++i) {
            fa.fold_of_row[i] = fa.fold_of_unit[static_cast<std::size_t>(ds.unit_idx(i))];
        }
    } else {
        if (static_cast<std::size_t>(K) > ds.n_rows()) {
            throw TooFewUnits("K=" + std::to_string(K) + " folds but only " +
                              std::to_string(ds.n_rows()) + " rows");
        }
        fa.fold_of_row = round_robin_folds(ds.n_rows(), K, seed);
    }
    return fa;
}

// Out-of-fold predictions over an explicit design. For each fold k the model
// is trained on the complement with seed (spec.seed, k) and predicts fold k.
inline Eigen::VectorXd out_of_fold_predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                           const std::vector<int>& fold_of_row, int K,
                                           const LearnerSpec& spec, int threads = 1) {
    const Eigen::Index n = X.rows();
    if (static_cast<std::size_t>(n) != fold_of_row.size()) throw ShapeMismatch("fold assignment does not match row count");
    Eigen::VectorXd pred(n);
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t k) {
        std::vector<int> train, test;
        for (Eigen::Index i = 0; i < n; ++i) {
            (fold_of_row[static_cast<std::size_t>(i)] == static_cast<int>(k) ? test : train)
                .push_back(static_cast<int>(i));
        }
        if (test.empty()) return;
        try {
            Eigen::MatrixXd Xtr(train.size(), X.cols()), Xte(test.size(), X.cols());
            Eigen::VectorXd ytr(train.size());
            for (std::size_t i = 0; i < train.size(); ++i) {
                Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]);
                ytr(static_cast<Eigen::Index>(i)) = y(train[i]);
            }
            for (std::size_t i = 0; i < test.size(); ++i) Xte.row(static_cast<Eigen::Index>(i)) = X.row(test[i]);
            LearnerSpec fold_spec = spec.with_seed(derive_seed(spec.seed, {static_cast<std::uint64_t>(k)}));
            FittedModel model = fit(fold_spec, Xtr, ytr, 1);
            Eigen::VectorXd p = model.predict(Xte);
            for (std::size_t i = 0; i < test.size(); ++i) pred(test[i]) = p(static_cast<Eigen::Index>(i));
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " (fold " + std::to_string(k) + ")");
        }
    });
    return pred;
}

inline Eigen::VectorXd out_of_fold_predict(const PanelDataset& ds, const std::string& target,
                                           const std::vector<std::string>& features,
                                           const LearnerSpec& spec, const FoldAssignment& folds,
                                           int threads = 1) {
    Eigen::MatrixXd X = ds.feature_matrix(features);
    Eigen::VectorXd y = ds.column_vector(target);
    return out_of_fold_predict(X, y, folds.fold_of_row, folds.K, spec, threads);
}

// Cross-fitted residuals plus the provenance needed for downstream inference.
struct ResidualizedPanel {
    std::vector<std::size_t> row_index;  // refs into the source dataset
    Eigen::VectorXd y_res;
    Eigen::VectorXd d_res;
    std::optional<Eigen::VectorXd> z_res;
    std::vector<int> fold_of_row;
    std::vector<int> cluster_of_row;     // group indices; from the cluster role, else unit
    std::vector<int> unit_of_row;
    std::vector<double> period_of_row;
    std::string y_learner;
    std::string d_learner;
    std::string z_learner;
    int folds = 0;
    std::uint64_t seed = 0;
    double mean_y_res = 0.0;
    double mean_d_res = 0.0;
    double mean_z_res = 0.0;

    std::size_t n() const { return row_index.size(); }
};

namespace detail {

// Encodes an arbitrary numeric column into dense group indices 0..G-1.
inline std::vector<int> encode_groups(const std::vector<double>& values) {
    std::vector<double> levels(values);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::vector<int> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), values[i]) - levels.begin());
    }
    return out;
}

inline std::vector<int> cluster_indices(const PanelDataset& ds) {
    if (!ds.roles.cluster.empty() && ds.roles.cluster != ds.unit_col_name()) {
        return encode_groups(ds.col(ds.roles.cluster));
    }
    std::vector<int> out(ds.n_rows());
    for (std::size_t i = 0; i < ds.n_rows(); ++i) out[i] = ds.unit_idx(i);
    return out;
}

// The nuisance feature design. With no covariates the learners see a single
// zero column, so only the mean learner is meaningful; richer specs fail loudly.
inline Eigen::MatrixXd nuisance_features(const PanelDataset& ds) {
    if (ds.roles.covariates.empty()) {
        return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.n_rows()), 1);
    }
    return ds.feature_matrix(ds.roles.covariates);
}

} // namespace detail

// Double (triple, with an instrument) residualization: each variable is
// replaced by its deviation from a cross-fitted prediction given X.
inline ResidualizedPanel residualize(const PanelDataset& ds, const LearnerSpec& y_spec,
                                     const LearnerSpec& d_spec,
                                     const std::optional<LearnerSpec>& z_spec,
                                     const FoldAssignment& folds, int threads = 1) {
    if (ds.roles.outcome.empty() || ds.roles.treatment.empty()) {
        throw ConfigInvalid("residualize: outcome and treatment roles must be assigned");
    }
    if (z_spec.has_value() != !ds.roles.instrument.empty()) {
        throw ConfigInvalid("residualize: an instrument learner must be given exactly when the instrument role is set");
    }
    const Eigen::MatrixXd X = detail::nuisance_features(ds);
    const Eigen::VectorXd y = ds.column_vector(ds.roles.outcome);
    const Eigen::VectorXd d = ds.column_vector(ds.roles.treatment);

    ResidualizedPanel out;
    out.row_index.resize(ds.n_rows());
    for (std::size_t i = 0; i < ds.n_rows(); ++i) out.row_index[i] = i;
    out.fold_of_row = folds.fold_of_row;
    out.cluster_of_row = detail::cluster_indices(ds);
    out.unit_of_row.resize(ds.n_rows());
    out.period_of_row.resize(ds.n_rows());
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        out.unit_of_row[i] = ds.unit_idx(i);
        out.period_of_row[i] = ds.period(i);
    }
    out.y_learner = y_spec.name();
    out.d_learner = d_spec.name();
    out.folds = folds.K;
    out.seed = folds.seed;

    out.y_res = y - out_of_fold_predict(X, y, folds.fold_of_row, folds.K, y_spec, threads);
    out.d_res = d - out_of_fold_predict(X, d, folds.fold_of_row, folds.K, d_spec, threads);
    if (z_spec) {
        const Eigen::VectorXd z = ds.column_vector(ds.roles.instrument);
        out.z_res = z - out_of_fold_predict(X, z, folds.fold_of_row, folds.K, *z_spec, threads);
        out.z_learner = z_spec->name();
        out.mean_z_res = out.z_res->mean();
    }
    out.mean_y_res = out.y_res.mean();
    out.mean_d_res = out.d_res.mean();

    const double md = out.mean_d_res;
    const double var_d = (out.d_res.array() - md).square().sum() / static_cast<double>(out.d_res.size());
    if (var_d < 1e-12) {
        throw NoResidualTreatmentVariation(
            "sample variance of the treatment residual is " + format_double(var_d) +
            "; treatment is perfectly predicted, so the effect is not identified (overlap failure)");
    }
    return out;
}

// External check surface: unit, period, fold (1-based), and the residuals.
inline CsvTable residuals_to_csv(const PanelDataset& ds, const ResidualizedPanel& res) {
    CsvTable t;
    t.header = {ds.unit_col_name(), ds.time_col_name(), "fold", "y_res", "d_res"};
    if (res.z_res) t.header.push_back("z_res");
    for (std::size_t i = 0; i < res.n(); ++i) {
        std::vector<std::string> row;
        row.push_back(ds.unit_name(res.unit_of_row[i]));
        row.push_back(format_double(res.period_of_row[i]));
        row.push_back(std::to_string(res.fold_of_row[i] + 1));
        row.push_back(format_double(res.y_res(static_cast<Eigen::Index>(i))));
        row.push_back(format_double(res.d_res(static_cast<Eigen::Index>(i))));
        if (res.z_res) row.push_back(format_double((*res.z_res)(static_cast<Eigen::Index>(i))));
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace sdidml
