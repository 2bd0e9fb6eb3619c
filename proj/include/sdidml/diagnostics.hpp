#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "sdidml/errors.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/stats.hpp"

namespace sdidml {

struct DescribeRow {
    std::string name;
    std::size_t n = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double min = std::numeric_limits<double>::quiet_NaN();
    double max = std::numeric_limits<double>::quiet_NaN();
};

struct DescribeTable {
    std::vector<DescribeRow> rows;
};

// Per-variable summary over non-missing entries; sd uses the n-1 divisor.
inline DescribeTable describe(const PanelDataset& ds, const std::vector<std::string>& vars) {
    DescribeTable out;
    for (const auto& v : vars) {
        if (!ds.has_column(v)) throw UnknownVariable("'" + v + "' not in dataset");
        const std::vector<double>& col = ds.col(v);
        DescribeRow row;
        row.name = v;
        double sum = 0.0;
        for (double x : col) {
            if (is_missing(x)) continue;
            if (row.n == 0) {
                row.min = row.max = x;
            } else {
                row.min = std::min(row.min, x);
                row.max = std::max(row.max, x);
            }
            sum += x;
            ++row.n;
        }
        if (row.n > 0) {
            row.mean = sum / static_cast<double>(row.n);
            if (row.n > 1) {
                double ss = 0.0;
                for (double x : col) {
                    if (!is_missing(x)) ss += (x - row.mean) * (x - row.mean);
                }
                row.sd = std::sqrt(ss / static_cast<double>(row.n - 1));
            } else {
                row.sd = 0.0;
            }
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

struct CorrelationResult {
    std::vector<std::string> vars;
    Eigen::MatrixXd r;      // NaN marks an undefined pair
    Eigen::MatrixXd p;      // two-sided, from t = r*sqrt((n-2)/(1-r^2)), df = n-2
    std::vector<std::vector<std::string>> stars;
    Eigen::MatrixXi n_complete;
};

// Pairwise-complete Pearson correlations with significance stars
// (* p<0.1, ** p<0.05, *** p<0.01). A zero-variance or too-short pair
// yields the NaN marker rather than an error.
inline CorrelationResult correlation_matrix(const PanelDataset& ds,
                                            const std::vector<std::string>& vars) {
    const std::size_t p = vars.size();
    CorrelationResult out;
    out.vars = vars;
    out.r = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p),
                                      std::numeric_limits<double>::quiet_NaN());
    out.p = out.r;
    out.n_complete = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    out.stars.assign(p, std::vector<std::string>(p));
    std::vector<const std::vector<double>*> cols;
    for (const auto& v : vars) {
        if (!ds.has_column(v)) throw UnknownVariable("'" + v + "' not in dataset");
        cols.push_back(&ds.col(v));
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const std::vector<double>& a = *cols[i];
            const std::vector<double>& b = *cols[j];
            std::size_t n = 0;
            double sa = 0.0, sb = 0.0;
            for (std::size_t t = 0; t < a.size(); ++t) {
                if (is_missing(a[t]) || is_missing(b[t])) continue;
                sa += a[t];
                sb += b[t];
                ++n;
            }
            out.n_complete(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<int>(n);
            out.n_complete(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = static_cast<int>(n);
            if (n < 3) continue;
            const double ma = sa / static_cast<double>(n);
            const double mb = sb / static_cast<double>(n);
            double saa = 0.0, sbb = 0.0, sab = 0.0;
            for (std::size_t t = 0; t < a.size(); ++t) {
                if (is_missing(a[t]) || is_missing(b[t])) continue;
                saa += (a[t] - ma) * (a[t] - ma);
                sbb += (b[t] - mb) * (b[t] - mb);
                sab += (a[t] - ma) * (b[t] - mb);
            }
            if (saa <= 0.0 || sbb <= 0.0) continue;  // zero-variance pair stays undefined
            double r = i == j ? 1.0 : sab / std::sqrt(saa * sbb);
            r = std::clamp(r, -1.0, 1.0);
            out.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r;
            out.r(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = r;
            if (i == j) continue;
            double pv;
            const double one_minus = 1.0 - r * r;
            if (one_minus <= 0.0) {
                pv = 0.0;
            } else {
                const double t_stat = r * std::sqrt(static_cast<double>(n - 2) / one_minus);
                pv = student_t_two_sided_p(t_stat, static_cast<double>(n - 2));
            }
            out.p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pv;
            out.p(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = pv;
            std::string star;
            if (pv < 0.01) star = "***";
            else if (pv < 0.05) star = "**";
            else if (pv < 0.1) star = "*";
            out.stars[i][j] = star;
            out.stars[j][i] = star;
        }
    }
    return out;
}

struct VifRow {
    std::string name;
    double vif = 0.0;
    double reciprocal = 0.0;
};

struct VifTable {
    std::vector<VifRow> rows;  // sorted by VIF, descending
    double mean_vif = 0.0;
};

namespace detail {

// Rows with no missing value in any of the given columns.
inline std::vector<std::size_t> complete_rows(const PanelDataset& ds,
                                              const std::vector<std::string>& vars) {
    std::vector<const std::vector<double>*> cols;
    for (const auto& v : vars) {
        if (!ds.has_column(v)) throw UnknownVariable("'" + v + "' not in dataset");
        cols.push_back(&ds.col(v));
    }
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        bool ok = true;
        for (const auto* c : cols) {
            if (is_missing((*c)[i])) {
                ok = false;
                break;
            }
        }
        if (ok) rows.push_back(i);
    }
    return rows;
}

inline Eigen::MatrixXd gather_matrix(const PanelDataset& ds, const std::vector<std::string>& vars,
                                     const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(vars.size()));
    for (std::size_t j = 0; j < vars.size(); ++j) {
        const std::vector<double>& c = ds.col(vars[j]);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[rows[i]];
        }
    }
    return X;
}

} // namespace detail

// VIF_j = 1/(1 - R^2_j) from the regression of regressor j on the others
// plus an intercept, over listwise-complete rows; table sorted descending.
inline VifTable vif(const PanelDataset& ds, const std::vector<std::string>& regressors) {
    const std::size_t p = regressors.size();
    if (p < 2) throw ConfigInvalid("vif: need at least 2 regressors");
    std::vector<std::size_t> rows = detail::complete_rows(ds, regressors);
    if (rows.size() <= p) throw InsufficientData("vif: need more complete rows than regressors");
    Eigen::MatrixXd X = detail::gather_matrix(ds, regressors, rows);
    const Eigen::Index n = X.rows();

    VifTable out;
    for (std::size_t j = 0; j < p; ++j) {
        Eigen::VectorXd y = X.col(static_cast<Eigen::Index>(j));
        const double mean = y.mean();
        const double sst = (y.array() - mean).square().sum();
        if (sst <= 0.0) {
            throw PerfectCollinearity("regressor '" + regressors[j] + "' is constant");
        }
        Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(p));  // intercept + others
        Z.col(0).setOnes();
        Eigen::Index c = 1;
        for (std::size_t k = 0; k < p; ++k) {
            if (k != j) Z.col(c++) = X.col(static_cast<Eigen::Index>(k));
        }
        Eigen::VectorXd b = Z.colPivHouseholderQr().solve(y);
        const double ssr = (y - Z * b).squaredNorm();
        const double r2 = 1.0 - ssr / sst;
        if (r2 >= 1.0 - 1e-12) {
            throw PerfectCollinearity("regressor '" + regressors[j] +
                                      "' is perfectly explained by the other regressors");
        }
        out.rows.push_back(VifRow{regressors[j], 1.0 / (1.0 - r2), 1.0 - r2});
    }
    double total = 0.0;
    for (const auto& r : out.rows) total += r.vif;
    out.mean_vif = total / static_cast<double>(p);
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const VifRow& a, const VifRow& b) { return a.vif > b.vif; });
    return out;
}

struct KmoResult {
    double overall = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd per_variable;
};

// Kaiser-Meyer-Olkin sampling adequacy from the inverse correlation matrix;
// an identity R makes the statistic 0/0, reported as the NaN marker.
inline KmoResult kmo(const Eigen::MatrixXd& R) {
    const Eigen::Index p = R.rows();
    if (R.cols() != p) throw ShapeMismatch("kmo: correlation matrix must be square");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(R);
    if (!lu.isInvertible()) throw SingularCorrelation("correlation matrix is not invertible");
    Eigen::MatrixXd S = lu.inverse();
    KmoResult out;
    out.per_variable = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    double sum_r2 = 0.0, sum_a2 = 0.0;
    Eigen::VectorXd row_r2 = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd row_a2 = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (i == j) continue;
            const double r2 = R(i, j) * R(i, j);
            const double a = -S(i, j) / std::sqrt(S(i, i) * S(j, j));
            sum_r2 += r2;
            sum_a2 += a * a;
            row_r2(i) += r2;
            row_a2(i) += a * a;
        }
    }
    if (sum_r2 + sum_a2 > 0.0) out.overall = sum_r2 / (sum_r2 + sum_a2);
    for (Eigen::Index i = 0; i < p; ++i) {
        if (row_r2(i) + row_a2(i) > 0.0) out.per_variable(i) = row_r2(i) / (row_r2(i) + row_a2(i));
    }
    return out;
}

struct PcaResult {
    std::vector<std::string> vars;
    Eigen::VectorXd eigenvalues;   // descending
    Eigen::MatrixXd loadings;      // orthonormal columns, sign-normalized
    int retained = 0;
    Eigen::MatrixXd scores;        // complete rows x retained components
    std::vector<std::size_t> score_rows;
    double kmo_overall = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd kmo_per_variable;
    std::vector<std::string> warnings;
};

// PCA on the sample correlation matrix. Variables are standardized (n-1 sd)
// over listwise-complete rows; components with eigenvalue >= mineigen are
// retained (inclusive); each loading column is flipped so its largest-
// magnitude entry is positive.
inline PcaResult pca(const PanelDataset& ds, const std::vector<std::string>& vars,
                     double mineigen = 1.0) {
    const std::size_t p = vars.size();
    if (p < 2) throw ConfigInvalid("pca: need at least 2 variables");
    std::vector<std::size_t> rows = detail::complete_rows(ds, vars);
    if (rows.size() <= p) throw InsufficientData("pca: need more complete rows than variables");
    Eigen::MatrixXd X = detail::gather_matrix(ds, vars, rows);
    const Eigen::Index n = X.rows();

    Eigen::MatrixXd Z(n, static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < p; ++j) {
        Eigen::VectorXd c = X.col(static_cast<Eigen::Index>(j));
        const double mean = c.mean();
        c.array() -= mean;
        const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(n - 1));
        if (sd <= 0.0) throw ZeroVariance("variable '" + vars[j] + "' is constant");
        Z.col(static_cast<Eigen::Index>(j)) = c / sd;
    }
    Eigen::MatrixXd R = Z.transpose() * Z / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(R);
    if (eig.info() != Eigen::Success) throw NotPositiveSemiDefinite("eigendecomposition failed");
    PcaResult out;
    out.vars = vars;
    out.score_rows = rows;
    out.eigenvalues = eig.eigenvalues().reverse();
    out.loadings = eig.eigenvectors().rowwise().reverse();
    if (out.eigenvalues.minCoeff() < -1e-8) {
        throw NotPositiveSemiDefinite("correlation matrix has eigenvalue " +
                                      format_double(out.eigenvalues.minCoeff()));
    }
    for (Eigen::Index k = 0; k < out.loadings.cols(); ++k) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < out.loadings.rows(); ++i) {
            if (std::fabs(out.loadings(i, k)) > std::fabs(out.loadings(best, k))) best = i;
        }
        if (out.loadings(best, k) < 0.0) out.loadings.col(k) = -out.loadings.col(k);
    }
    out.retained = 0;
    for (Eigen::Index k = 0; k < out.eigenvalues.size(); ++k) {
        if (out.eigenvalues(k) >= mineigen) ++out.retained;
    }
    out.scores = Z * out.loadings.leftCols(out.retained);

    try {
        KmoResult k = kmo(R);
        out.kmo_overall = k.overall;
        out.kmo_per_variable = k.per_variable;
    } catch (const SingularCorrelation&) {
        out.kmo_per_variable = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p),
                                                         std::numeric_limits<double>::quiet_NaN());
        out.warnings.push_back("correlation matrix singular; sampling adequacy undefined");
    }
    return out;
}

} // namespace sdidml
