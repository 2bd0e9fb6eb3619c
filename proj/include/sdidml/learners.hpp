#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/csv.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/parallel.hpp"
#include "sdidml/rng.hpp"
#include "sdidml/tree.hpp"

namespace sdidml {

enum class LearnerKind { mean, ols, ridge, lasso_cv, forest, boosting };

// Learner configuration. Defaults follow the tuning constants of the method:
// forest 500 trees at depth 20 with mtry = max(1, floor(p/3)); boosting
// learning rate 0.01 with early stop after 50 non-improving rounds; lasso
// path of 100 lambdas down to 1e-4 of lambda_max with 5 CV folds.
struct LearnerSpec {
    LearnerKind kind = LearnerKind::ols;

    // ridge
    double lambda = 1.0;

    // lasso_cv
    int n_lambdas = 100;
    double lambda_min_ratio = 1e-4;
    int cv_folds = 5;
    // When set (non-NaN), skips cross-validation and fits at this penalty.
    double forced_lambda = std::numeric_limits<double>::quiet_NaN();

    // forest; mtry = 0 means the max(1, floor(p/3)) default
    int n_trees = 500;
    int max_depth = 20;
    int mtry = 0;
    int min_leaf = 5;
    bool bootstrap = true;

    // boosting
    double learning_rate = 0.01;
    int max_rounds = 1000;
    int early_stop_rounds = 50;
    int boost_depth = 3;

    std::uint64_t seed = 0;

    static LearnerSpec of(LearnerKind k) {
        LearnerSpec s;
        s.kind = k;
        return s;
    }

    LearnerSpec with_seed(std::uint64_t s) const {
        LearnerSpec out = *this;
        out.seed = s;
        return out;
    }

    // Canonical text form: kind plus any non-default parameters, e.g.
    // "forest(n_trees=200)". Seed is runtime provenance, not printed.
    std::string name() const {
        const LearnerSpec def = defaults_for(kind);
        std::vector<std::string> parts;
        auto add_num = [&](const char* key, double v, double dv) {
            if (v != dv && !(std::isnan(v) && std::isnan(dv))) parts.push_back(std::string(key) + "=" + format_double(v));
        };
        auto add_int = [&](const char* key, int v, int dv) {
            if (v != dv) parts.push_back(std::string(key) + "=" + std::to_string(v));
        };
        switch (kind) {
            case LearnerKind::mean:
            case LearnerKind::ols:
                break;
            case LearnerKind::ridge:
                add_num("lambda", lambda, def.lambda);
                break;
            case LearnerKind::lasso_cv:
                add_int("n_lambdas", n_lambdas, def.n_lambdas);
                add_num("lambda_min_ratio", lambda_min_ratio, def.lambda_min_ratio);
                add_int("cv_folds", cv_folds, def.cv_folds);
                add_num("lambda", forced_lambda, def.forced_lambda);
                break;
            case LearnerKind::forest:
                add_int("n_trees", n_trees, def.n_trees);
                add_int("max_depth", max_depth, def.max_depth);
                add_int("mtry", mtry, def.mtry);
                add_int("min_leaf", min_leaf, def.min_leaf);
                if (bootstrap != def.bootstrap) parts.push_back(std::string("bootstrap=") + (bootstrap ? "true" : "false"));
                break;
            case LearnerKind::boosting:
                add_num("learning_rate", learning_rate, def.learning_rate);
                add_int("max_rounds", max_rounds, def.max_rounds);
                add_int("early_stop_rounds", early_stop_rounds, def.early_stop_rounds);
                add_int("max_depth", boost_depth, def.boost_depth);
                break;
        }
        std::string out = kind_name(kind);
        if (!parts.empty()) {
            out += "(";
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (i) out += ",";
                out += parts[i];
            }
            out += ")";
        }
        return out;
    }

    static const char* kind_name(LearnerKind k) {
        switch (k) {
            case LearnerKind::mean: return "mean";
            case LearnerKind::ols: return "ols";
            case LearnerKind::ridge: return "ridge";
            case LearnerKind::lasso_cv: return "lasso_cv";
            case LearnerKind::forest: return "forest";
            case LearnerKind::boosting: return "boosting";
        }
        return "?";
    }

    static LearnerSpec defaults_for(LearnerKind k) {
        LearnerSpec s;
        s.kind = k;
        return s;
    }

    // Parses "kind" or "kind(key=value,...)".
    static LearnerSpec parse(const std::string& text) {
        std::string s = text;
        auto strip = [](std::string v) {
            std::size_t b = v.find_first_not_of(" \t");
            std::size_t e = v.find_last_not_of(" \t");
            if (b == std::string::npos) return std::string();
            return v.substr(b, e - b + 1);
        };
        s = strip(s);
        std::string kind_str = s;
        std::string args;
        std::size_t paren = s.find('(');
        if (paren != std::string::npos) {
            if (s.back() != ')') throw ConfigError("learner spec '" + text + "': missing ')'");
            kind_str = strip(s.substr(0, paren));
            args = s.substr(paren + 1, s.size() - paren - 2);
        }
        LearnerSpec spec;
        if (kind_str == "mean") spec.kind = LearnerKind::mean;
        else if (kind_str == "ols") spec.kind = LearnerKind::ols;
        else if (kind_str == "ridge") spec.kind = LearnerKind::ridge;
        else if (kind_str == "lasso_cv") spec.kind = LearnerKind::lasso_cv;
        else if (kind_str == "forest") spec.kind = LearnerKind::forest;
        else if (kind_str == "boosting") spec.kind = LearnerKind::boosting;
        else throw ConfigError("unknown learner kind '" + kind_str + "'");

        if (args.empty()) return spec;
        std::stringstream ss(args);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = strip(item);
            std::size_t eq = item.find('=');
            if (eq == std::string::npos) throw ConfigError("learner spec '" + text + "': expected key=value, got '" + item + "'");
            std::string key = strip(item.substr(0, eq));
            std::string val = strip(item.substr(eq + 1));
            auto as_double = [&]() {
                try { return std::stod(val); }
                catch (...) { throw ConfigError("learner spec '" + text + "': bad number '" + val + "'"); }
            };
            auto as_int = [&]() {
                try { return std::stoi(val); }
                catch (...) { throw ConfigError("learner spec '" + text + "': bad integer '" + val + "'"); }
            };
            bool ok = true;
            switch (spec.kind) {
                case LearnerKind::ridge:
                    if (key == "lambda") spec.lambda = as_double();
                    else ok = false;
                    break;
                case LearnerKind::lasso_cv:
                    if (key == "n_lambdas") spec.n_lambdas = as_int();
                    else if (key == "lambda_min_ratio") spec.lambda_min_ratio = as_double();
                    else if (key == "cv_folds") spec.cv_folds = as_int();
                    else if (key == "lambda") spec.forced_lambda = as_double();
                    else ok = false;
                    break;
                case LearnerKind::forest:
                    if (key == "n_trees") spec.n_trees = as_int();
                    else if (key == "max_depth") spec.max_depth = as_int();
                    else if (key == "mtry") spec.mtry = as_int();
                    else if (key == "min_leaf") spec.min_leaf = as_int();
                    else if (key == "bootstrap") spec.bootstrap = (val == "true" || val == "1");
                    else ok = false;
                    break;
                case LearnerKind::boosting:
                    if (key == "learning_rate") spec.learning_rate = as_double();
                    else if (key == "max_rounds") spec.max_rounds = as_int();
                    else if (key == "early_stop_rounds") spec.early_stop_rounds = as_int();
                    else if (key == "max_depth") spec.boost_depth = as_int();
                    else ok = false;
                    break;
                default:
                    ok = false;
            }
            if (!ok) throw ConfigError("learner spec '" + text + "': unknown parameter '" + key + "'");
        }
        return spec;
    }
};

struct CvEntry {
    double lambda;
    double mse;
};

// Immutable fitted state; predict is const and thread-safe.
struct FittedModel {
    LearnerSpec spec;
    int n_features = 0;
    double train_mse = 0.0;
    std::vector<std::string> warnings;

    // linear kinds (coefficients on the original feature scale)
    double intercept = 0.0;
    Eigen::VectorXd coef;

    // lasso
    double selected_lambda = std::numeric_limits<double>::quiet_NaN();
    std::vector<CvEntry> cv_table;

    // trees
    std::vector<RegressionTree> trees;
    double boost_init = 0.0;

    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
        if (static_cast<int>(X.cols()) != n_features) {
            throw ShapeMismatch("predict: model was trained on " + std::to_string(n_features) +
                                " features, got " + std::to_string(X.cols()));
        }
        const Eigen::Index m = X.rows();
        Eigen::VectorXd out(m);
        switch (spec.kind) {
            case LearnerKind::mean:
                out.setConstant(intercept);
                break;
            case LearnerKind::ols:
            case LearnerKind::ridge:
            case LearnerKind::lasso_cv:
                out = (X * coef).array() + intercept;
                break;
            case LearnerKind::forest: {
                out.setZero();
                std::vector<double> row(static_cast<std::size_t>(n_features));
                for (Eigen::Index i = 0; i < m; ++i) {
                    for (int j = 0; j < n_features; ++j) row[static_cast<std::size_t>(j)] = X(i, j);
                    double s = 0.0;
                    for (const auto& t : trees) s += t.predict_row(row.data());
                    out(i) = s / static_cast<double>(trees.size());
                }
                break;
            }
            case LearnerKind::boosting: {
                std::vector<double> row(static_cast<std::size_t>(n_features));
                for (Eigen::Index i = 0; i < m; ++i) {
                    for (int j = 0; j < n_features; ++j) row[static_cast<std::size_t>(j)] = X(i, j);
                    double s = boost_init;
                    for (const auto& t : trees) s += spec.learning_rate * t.predict_row(row.data());
                    out(i) = s;
                }
                break;
            }
        }
        return out;
    }
};

namespace detail {

inline void check_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (X.rows() != y.size()) throw ShapeMismatch("X rows != y length");
    if (X.rows() < 2) throw InsufficientData("need at least 2 rows");
    if (X.cols() < 1) throw ShapeMismatch("need at least 1 feature");
    if (!X.allFinite() || !y.allFinite()) throw InsufficientData("design or target contains missing or non-finite values");
}

// Greedy Gram-Schmidt rank check that names the first column linearly
// dependent on its predecessors (and the intercept).
inline void check_full_rank_with_intercept(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    std::vector<Eigen::VectorXd> basis;
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n).normalized();
    basis.push_back(ones);
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd v = X.col(j);
        const double orig = v.norm();
        for (const auto& b : basis) v -= b.dot(v) * b;
        if (v.norm() <= 1e-10 * (orig > 0 ? orig : 1.0)) {
            throw SingularDesign("feature column " + std::to_string(j) +
                                 " is collinear with the intercept and preceding columns");
        }
        basis.push_back(v.normalized());
    }
}

struct Standardized {
    Eigen::MatrixXd X;      // centered and scaled columns (zero-variance -> zero column)
    Eigen::VectorXd y;      // centered target
    Eigen::VectorXd mean_x;
    Eigen::VectorXd sd_x;   // n-1 denominator; 0 marks a constant column
    double mean_y = 0.0;
};

inline Standardized standardize(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Standardized s;
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    s.mean_x = X.colwise().mean();
    s.sd_x.resize(p);
    s.X.resize(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd c = X.col(j).array() - s.mean_x(j);
        const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(n - 1));
        s.sd_x(j) = sd;
        s.X.col(j) = sd > 0.0 ? (c / sd).eval() : Eigen::VectorXd::Zero(n).eval();
    }
    s.mean_y = y.mean();
    s.y = y.array() - s.mean_y;
    return s;
}

// Cyclic coordinate descent with soft-thresholding at a fixed penalty, on the
// standardized scale. beta is the warm start and receives the solution.
inline void lasso_cd(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& ys, double lambda,
                     Eigen::VectorXd& beta, Eigen::VectorXd& resid) {
    const Eigen::Index n = Xs.rows();
    const Eigen::Index p = Xs.cols();
    Eigen::VectorXd col_sq(p);
    for (Eigen::Index j = 0; j < p; ++j) col_sq(j) = Xs.col(j).squaredNorm() / static_cast<double>(n);
    resid = ys - Xs * beta;
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (col_sq(j) == 0.0) continue;
            const double old = beta(j);
            const double z = Xs.col(j).dot(resid) / static_cast<double>(n) + col_sq(j) * old;
            const double mag = std::fabs(z) - lambda;
            const double next = mag > 0.0 ? std::copysign(mag, z) / col_sq(j) : 0.0;
            if (next != old) {
                resid -= (next - old) * Xs.col(j);
                beta(j) = next;
                max_change = std::max(max_change, std::fabs(next - old));
            }
        }
        if (max_change < 1e-7) break;
    }
}

} // namespace detail

// Geometric penalty grid from lambda_max down to lambda_max * ratio, with
// lambda_max = max_j |x~_j' y~| / n on the centered/standardized scale.
// A constant target makes lambda_max 0; the path degenerates to {0}.
inline std::vector<double> lasso_lambda_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             int n_lambdas, double lambda_min_ratio) {
    if (n_lambdas < 2) throw ConfigInvalid("lasso_lambda_path: n_lambdas must be >= 2");
    if (!(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0)) {
        throw ConfigInvalid("lasso_lambda_path: lambda_min_ratio must be in (0, 1)");
    }
    detail::Standardized s = detail::standardize(X, y);
    const Eigen::Index n = X.rows();
    double lambda_max = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        lambda_max = std::max(lambda_max, std::fabs(s.X.col(j).dot(s.y)) / static_cast<double>(n));
    }
    if (lambda_max == 0.0) return {0.0};
    std::vector<double> path(static_cast<std::size_t>(n_lambdas));
    const double log_max = std::log(lambda_max);
    const double log_min = std::log(lambda_max * lambda_min_ratio);
    for (int k = 0; k < n_lambdas; ++k) {
        path[static_cast<std::size_t>(k)] =
            std::exp(log_max + (log_min - log_max) * static_cast<double>(k) / static_cast<double>(n_lambdas - 1));
    }
    path.front() = lambda_max;  // exact endpoints
    path.back() = lambda_max * lambda_min_ratio;
    return path;
}

// Minimum-CV-MSE penalty selection over a shared path; ties break toward the
// larger lambda. Fold split is a seeded shuffle with round-robin assignment.
inline std::pair<double, std::vector<CvEntry>> select_lambda_cv(const Eigen::MatrixXd& X,
                                                                const Eigen::VectorXd& y,
                                                                const LearnerSpec& spec) {
    if (spec.cv_folds < 2) throw ConfigInvalid("select_lambda_cv: cv_folds must be >= 2");
    const Eigen::Index n = X.rows();
    if (n < spec.cv_folds) throw InsufficientData("select_lambda_cv: fewer rows than cv folds");
    std::vector<double> path = lasso_lambda_path(X, y, spec.n_lambdas, spec.lambda_min_ratio);
    const std::size_t L = path.size();

    Rng rng(derive_seed(spec.seed, {0x1A550ULL}));
    std::vector<int> perm = rng.permutation(static_cast<int>(n));
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < perm.size(); ++i) {
        fold_of[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % static_cast<std::size_t>(spec.cv_folds));
    }

    std::vector<double> mse_sum(L, 0.0);
    for (int k = 0; k < spec.cv_folds; ++k) {
        std::vector<int> train, test;
        for (Eigen::Index i = 0; i < n; ++i) {
            (fold_of[static_cast<std::size_t>(i)] == k ? test : train).push_back(static_cast<int>(i));
        }
        Eigen::MatrixXd Xtr(train.size(), X.cols()), Xte(test.size(), X.cols());
        Eigen::VectorXd ytr(train.size()), yte(test.size());
        for (std::size_t i = 0; i < train.size(); ++i) { Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]); ytr(static_cast<Eigen::Index>(i)) = y(train[i]); }
        for (std::size_t i = 0; i < test.size(); ++i) { Xte.row(static_cast<Eigen::Index>(i)) = X.row(test[i]); yte(static_cast<Eigen::Index>(i)) = y(test[i]); }
        detail::Standardized s = detail::standardize(Xtr, ytr);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
        Eigen::VectorXd resid;
        for (std::size_t li = 0; li < L; ++li) {
            detail::lasso_cd(s.X, s.y, path[li], beta, resid);
            // Back-transform to the original scale and score the held-out fold.
            Eigen::VectorXd b = Eigen::VectorXd::Zero(X.cols());
            double b0 = s.mean_y;
            for (Eigen::Index j = 0; j < X.cols(); ++j) {
                if (s.sd_x(j) > 0.0) {
                    b(j) = beta(j) / s.sd_x(j);
                    b0 -= b(j) * s.mean_x(j);
                }
            }
            const Eigen::VectorXd pred = (Xte * b).array() + b0;
            mse_sum[li] += (yte - pred).squaredNorm() / static_cast<double>(test.size());
        }
    }
    std::vector<CvEntry> table(L);
    std::size_t best = 0;
    for (std::size_t li = 0; li < L; ++li) {
        table[li] = CvEntry{path[li], mse_sum[li] / static_cast<double>(spec.cv_folds)};
        if (table[li].mse < table[best].mse) best = li;  // strict: ties keep the larger lambda
    }
    return {path[best], table};
}

// Fits a learner. Deterministic given (spec, X, y, spec.seed); tree ensembles
// may fit across threads without changing the result.
inline FittedModel fit(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       int threads = 1) {
    detail::check_design(X, y);
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    FittedModel m;
    m.spec = spec;
    m.n_features = static_cast<int>(p);

    switch (spec.kind) {
        case LearnerKind::mean: {
            m.intercept = y.mean();
            m.coef = Eigen::VectorXd::Zero(p);
            break;
        }
        case LearnerKind::ols: {
            detail::check_full_rank_with_intercept(X);
            Eigen::MatrixXd Xi(n, p + 1);
            Xi.col(0).setOnes();
            Xi.rightCols(p) = X;
            Eigen::VectorXd b = Xi.colPivHouseholderQr().solve(y);
            m.intercept = b(0);
            m.coef = b.tail(p);
            break;
        }
        case LearnerKind::ridge: {
            if (spec.lambda < 0.0) throw ConfigInvalid("ridge: lambda must be nonnegative");
            detail::Standardized s = detail::standardize(X, y);
            Eigen::VectorXd beta;
            if (spec.lambda == 0.0) {
                beta = s.X.colPivHouseholderQr().solve(s.y);
            } else {
                Eigen::MatrixXd A = s.X.transpose() * s.X / static_cast<double>(n);
                A.diagonal().array() += spec.lambda;
                beta = A.ldlt().solve(s.X.transpose() * s.y / static_cast<double>(n));
            }
            m.coef = Eigen::VectorXd::Zero(p);
            m.intercept = s.mean_y;
            for (Eigen::Index j = 0; j < p; ++j) {
                if (s.sd_x(j) > 0.0) {
                    m.coef(j) = beta(j) / s.sd_x(j);
                    m.intercept -= m.coef(j) * s.mean_x(j);
                }
            }
            break;
        }
        case LearnerKind::lasso_cv: {
            if (n < spec.cv_folds && std::isnan(spec.forced_lambda)) {
                throw InsufficientData("lasso_cv: fewer rows than cv folds");
            }
            double lambda_star;
            if (std::isnan(spec.forced_lambda)) {
                auto [ls, table] = select_lambda_cv(X, y, spec);
                lambda_star = ls;
                m.cv_table = std::move(table);
            } else {
                lambda_star = spec.forced_lambda;
            }
            m.selected_lambda = lambda_star;
            detail::Standardized s = detail::standardize(X, y);
            Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
            Eigen::VectorXd resid;
            // Warm start down the path for a stable solution at lambda_star.
            std::vector<double> path = lasso_lambda_path(X, y, std::max(2, spec.n_lambdas), spec.lambda_min_ratio);
            for (double l : path) {
                if (l <= lambda_star) break;
                detail::lasso_cd(s.X, s.y, l, beta, resid);
            }
            detail::lasso_cd(s.X, s.y, lambda_star, beta, resid);
            m.coef = Eigen::VectorXd::Zero(p);
            m.intercept = s.mean_y;
            for (Eigen::Index j = 0; j < p; ++j) {
                if (s.sd_x(j) > 0.0) {
                    m.coef(j) = beta(j) / s.sd_x(j);
                    m.intercept -= m.coef(j) * s.mean_x(j);
                }
            }
            if (path.size() == 1 && path[0] == 0.0) m.warnings.push_back("constant target: lambda path degenerates to {0}");
            break;
        }
        case LearnerKind::forest: {
            if (n < 2 * spec.min_leaf) throw InsufficientData("forest: need at least 2*min_leaf rows");
            if (spec.n_trees < 1) throw ConfigInvalid("forest: n_trees must be >= 1");
            const int mtry = spec.mtry > 0 ? std::min(spec.mtry, static_cast<int>(p))
                                           : std::max(1, static_cast<int>(p) / 3);
            m.trees.resize(static_cast<std::size_t>(spec.n_trees));
            parallel_for(static_cast<std::size_t>(spec.n_trees), threads, [&](std::size_t t) {
                Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(t)}));
                std::vector<int> rows(static_cast<std::size_t>(n));
                if (spec.bootstrap) {
                    for (auto& r : rows) r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
                } else {
                    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
                }
                m.trees[t] = detail::fit_tree(X, y, std::move(rows), spec.max_depth, spec.min_leaf, mtry, rng);
            });
            break;
        }
        case LearnerKind::boosting: {
            if (n < 2 * spec.min_leaf + 1) throw InsufficientData("boosting: too few rows for a holdout split");
            Rng rng(derive_seed(spec.seed, {0xB0057ULL}));
            std::vector<int> perm = rng.permutation(static_cast<int>(n));
            const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
            std::vector<int> hold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
            std::vector<int> train(perm.begin() + static_cast<std::ptrdiff_t>(n_hold), perm.end());
            if (train.size() < static_cast<std::size_t>(2 * spec.min_leaf)) {
                throw InsufficientData("boosting: training split smaller than 2*min_leaf");
            }
            Eigen::MatrixXd Xtr(train.size(), p), Xho(hold.size(), p);
            Eigen::VectorXd ytr(train.size()), yho(hold.size());
            for (std::size_t i = 0; i < train.size(); ++i) { Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]); ytr(static_cast<Eigen::Index>(i)) = y(train[i]); }
            for (std::size_t i = 0; i < hold.size(); ++i) { Xho.row(static_cast<Eigen::Index>(i)) = X.row(hold[i]); yho(static_cast<Eigen::Index>(i)) = y(hold[i]); }

            m.boost_init = ytr.mean();
            Eigen::VectorXd f_tr = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(train.size()), m.boost_init);
            Eigen::VectorXd f_ho = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(hold.size()), m.boost_init);
            double best_mse = (yho - f_ho).squaredNorm() / static_cast<double>(hold.size());
            int best_round = 0;
            std::vector<RegressionTree> all_trees;
            std::vector<int> id_rows(train.size());
            for (std::size_t i = 0; i < id_rows.size(); ++i) id_rows[i] = static_cast<int>(i);
            std::vector<double> row(static_cast<std::size_t>(p));
            for (int round = 1; round <= spec.max_rounds; ++round) {
                Eigen::VectorXd resid = ytr - f_tr;
                Rng tree_rng(derive_seed(spec.seed, {0xB0057ULL, static_cast<std::uint64_t>(round)}));
                RegressionTree tree = detail::fit_tree(Xtr, resid, id_rows, spec.boost_depth, spec.min_leaf,
                                                       static_cast<int>(p), tree_rng);
                for (Eigen::Index i = 0; i < f_tr.size(); ++i) {
                    for (int j = 0; j < p; ++j) row[static_cast<std::size_t>(j)] = Xtr(i, j);
                    f_tr(i) += spec.learning_rate * tree.predict_row(row.data());
                }
                for (Eigen::Index i = 0; i < f_ho.size(); ++i) {
                    for (int j = 0; j < p; ++j) row[static_cast<std::size_t>(j)] = Xho(i, j);
                    f_ho(i) += spec.learning_rate * tree.predict_row(row.data());
                }
                all_trees.push_back(std::move(tree));
                const double mse = (yho - f_ho).squaredNorm() / static_cast<double>(hold.size());
                if (mse < best_mse) {
                    best_mse = mse;
                    best_round = round;
                }
                if (round - best_round >= spec.early_stop_rounds) break;
            }
            all_trees.resize(static_cast<std::size_t>(best_round));
            m.trees = std::move(all_trees);
            break;
        }
    }
    m.train_mse = (y - m.predict(X)).squaredNorm() / static_cast<double>(n);
    return m;
}

} // namespace sdidml
