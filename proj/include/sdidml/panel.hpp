#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sdidml/csv.hpp"
#include "sdidml/errors.hpp"

namespace sdidml {

inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

// Column roles for estimation. Optional roles are empty strings when unset;
// cluster defaults to the unit id when empty.
struct RoleMap {
    std::string outcome;
    std::string treatment;
    std::vector<std::string> covariates;
    std::string instrument;
    std::string moderator;
    std::string mediator;
    std::string cluster;

    std::vector<std::pair<std::string, std::string>> named_roles() const {
        std::vector<std::pair<std::string, std::string>> out;
        if (!outcome.empty()) out.emplace_back("outcome", outcome);
        if (!treatment.empty()) out.emplace_back("treatment", treatment);
        for (const auto& c : covariates) out.emplace_back("covariate", c);
        if (!instrument.empty()) out.emplace_back("instrument", instrument);
        if (!moderator.empty()) out.emplace_back("moderator", moderator);
        if (!mediator.empty()) out.emplace_back("mediator", mediator);
        if (!cluster.empty()) out.emplace_back("cluster", cluster);
        return out;
    }
};

struct ValidationReport {
    std::size_t n_rows = 0;
    std::size_t n_units = 0;
    std::size_t n_periods = 0;
    bool balanced = false;
    std::size_t dropped_rows = 0;
    std::vector<std::pair<std::string, std::size_t>> drop_reasons;
    std::vector<std::string> zero_variance_columns;
    std::vector<std::string> warnings;
};

// Per-unit first treatment period; nullopt = never treated. Entries align
// with PanelDataset::unit_levels().
struct CohortMap {
    std::vector<std::optional<int>> g;
    std::vector<std::string> warnings;

    std::size_t size() const { return g.size(); }
    bool treated(std::size_t unit_idx) const { return g[unit_idx].has_value(); }
    std::size_t never_count() const {
        std::size_t k = 0;
        for (const auto& v : g) if (!v) ++k;
        return k;
    }
    bool operator==(const CohortMap& other) const { return g == other.g; }
};

// Long-format panel. Rows are kept sorted by (unit, period); numeric columns
// are stored column-major with NaN for missing cells.
class PanelDataset {
public:
    PanelDataset() = default;

    // Builds a dataset from parallel row arrays; sorts and checks key
    // uniqueness. Column value vectors must match the row count.
    static PanelDataset create(std::vector<std::string> units, std::vector<int> periods,
                               std::vector<std::string> column_names,
                               std::vector<std::vector<double>> columns,
                               std::string unit_col = "unit", std::string time_col = "period") {
        PanelDataset ds;
        ds.unit_col_name_ = std::move(unit_col);
        ds.time_col_name_ = std::move(time_col);
        ds.column_names_ = std::move(column_names);
        ds.columns_ = std::move(columns);
        const std::size_t n = units.size();
        if (periods.size() != n) throw ShapeMismatch("units and periods length differ");
        for (const auto& c : ds.columns_) {
            if (c.size() != n) throw ShapeMismatch("column length differs from row count");
        }
        // Level-encode units in lexicographic order.
        std::vector<std::string> levels(units.begin(), units.end());
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        ds.unit_levels_ = levels;
        std::unordered_map<std::string, int> level_of;
        for (std::size_t i = 0; i < levels.size(); ++i) level_of[levels[i]] = static_cast<int>(i);
        ds.unit_idx_.resize(n);
        for (std::size_t r = 0; r < n; ++r) ds.unit_idx_[r] = level_of[units[r]];
        ds.period_ = std::move(periods);
        ds.sort_rows_and_check_keys();
        ds.index_periods();
        return ds;
    }

    std::size_t n_rows() const { return period_.size(); }
    std::size_t n_units() const { return unit_levels_.size(); }
    std::size_t n_periods() const { return period_levels_.size(); }

    const std::vector<std::string>& unit_levels() const { return unit_levels_; }
    const std::vector<int>& period_levels() const { return period_levels_; }
    const std::vector<int>& unit_idx() const { return unit_idx_; }
    const std::vector<int>& period() const { return period_; }
    const std::vector<int>& period_idx() const { return period_idx_; }
    int unit_idx(std::size_t row) const { return unit_idx_[row]; }
    int period(std::size_t row) const { return period_[row]; }
    int period_idx(std::size_t row) const { return period_idx_[row]; }
    const std::string& unit_name(int idx) const { return unit_levels_[static_cast<std::size_t>(idx)]; }
    const std::vector<std::string>& column_names() const { return column_names_; }
    const std::string& unit_col_name() const { return unit_col_name_; }
    const std::string& time_col_name() const { return time_col_name_; }

    RoleMap roles;

    bool has_column(const std::string& name) const {
        return std::find(column_names_.begin(), column_names_.end(), name) != column_names_.end();
    }

    std::size_t column_index(const std::string& name) const {
        auto it = std::find(column_names_.begin(), column_names_.end(), name);
        if (it == column_names_.end()) throw MissingColumn("'" + name + "' not in dataset");
        return static_cast<std::size_t>(it - column_names_.begin());
    }

    const std::vector<double>& col(const std::string& name) const {
        return columns_[column_index(name)];
    }
    std::vector<double>& col_mut(const std::string& name) {
        return columns_[column_index(name)];
    }

    void add_column(const std::string& name, std::vector<double> values) {
        if (has_column(name) || name == unit_col_name_ || name == time_col_name_) {
            throw NameCollision("column '" + name + "' already exists");
        }
        if (values.size() != n_rows()) throw ShapeMismatch("new column length differs from row count");
        column_names_.push_back(name);
        columns_.push_back(std::move(values));
    }

    void set_or_add_column(const std::string& name, std::vector<double> values) {
        if (has_column(name)) {
            if (values.size() != n_rows()) throw ShapeMismatch("column length differs from row count");
            columns_[column_index(name)] = std::move(values);
        } else {
            add_column(name, std::move(values));
        }
    }

    // Keeps rows whose index satisfies keep[r]; re-encodes unit levels.
    PanelDataset filter_rows(const std::vector<bool>& keep) const {
        PanelDataset out;
        out.unit_col_name_ = unit_col_name_;
        out.time_col_name_ = time_col_name_;
        out.column_names_ = column_names_;
        out.roles = roles;
        std::vector<std::string> units;
        for (std::size_t r = 0; r < n_rows(); ++r) {
            if (!keep[r]) continue;
            units.push_back(unit_name(unit_idx_[r]));
            out.period_.push_back(period_[r]);
        }
        out.columns_.assign(column_names_.size(), {});
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            out.columns_[c].reserve(units.size());
            for (std::size_t r = 0; r < n_rows(); ++r) {
                if (keep[r]) out.columns_[c].push_back(columns_[c][r]);
            }
        }
        std::vector<std::string> levels(units.begin(), units.end());
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        out.unit_levels_ = levels;
        std::unordered_map<std::string, int> level_of;
        for (std::size_t i = 0; i < levels.size(); ++i) level_of[levels[i]] = static_cast<int>(i);
        out.unit_idx_.resize(units.size());
        for (std::size_t r = 0; r < units.size(); ++r) out.unit_idx_[r] = level_of[units[r]];
        // Input rows were sorted; filtering preserves the order.
        out.index_periods();
        return out;
    }

    // Dense design matrix from named columns, in the order given.
    Eigen::MatrixXd feature_matrix(const std::vector<std::string>& cols) const {
        Eigen::MatrixXd X(static_cast<Eigen::Index>(n_rows()), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const auto& v = col(cols[j]);
            for (std::size_t r = 0; r < v.size(); ++r) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[r];
        }
        return X;
    }

    Eigen::VectorXd column_vector(const std::string& name) const {
        const auto& v = col(name);
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

private:
    friend PanelDataset load_panel_csv(const std::string&, const std::string&, const std::string&);

    void sort_rows_and_check_keys() {
        const std::size_t n = n_rows();
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (unit_idx_[a] != unit_idx_[b]) return unit_idx_[a] < unit_idx_[b];
            return period_[a] < period_[b];
        });
        auto apply = [&](auto& v) {
            auto copy = v;
            for (std::size_t i = 0; i < n; ++i) v[i] = copy[order[i]];
        };
        apply(unit_idx_);
        apply(period_);
        for (auto& c : columns_) apply(c);
        for (std::size_t i = 1; i < n; ++i) {
            if (unit_idx_[i] == unit_idx_[i - 1] && period_[i] == period_[i - 1]) {
                throw DuplicateKey("(unit '" + unit_name(unit_idx_[i]) + "', period " +
                                   std::to_string(period_[i]) + ") appears more than once");
            }
        }
    }

    void index_periods() {
        std::set<int> s(period_.begin(), period_.end());
        period_levels_.assign(s.begin(), s.end());
        std::unordered_map<int, int> idx;
        for (std::size_t i = 0; i < period_levels_.size(); ++i) idx[period_levels_[i]] = static_cast<int>(i);
        period_idx_.resize(period_.size());
        for (std::size_t r = 0; r < period_.size(); ++r) period_idx_[r] = idx[period_[r]];
    }

    std::string unit_col_name_ = "unit";
    std::string time_col_name_ = "period";
    std::vector<std::string> unit_levels_;
    std::vector<int> period_levels_;
    std::vector<int> unit_idx_;
    std::vector<int> period_;
    std::vector<int> period_idx_;
    std::vector<std::string> column_names_;
    std::vector<std::vector<double>> columns_;
};

inline PanelDataset load_panel_csv(const std::string& path, const std::string& unit_col,
                                   const std::string& time_col) {
    CsvTable t = read_csv_file(path);
    if (t.header.empty()) throw EmptyData("'" + path + "' has no header row");
    auto find_col = [&](const std::string& name) {
        auto it = std::find(t.header.begin(), t.header.end(), name);
        if (it == t.header.end()) throw MissingColumn("'" + name + "' not found in '" + path + "'");
        return static_cast<std::size_t>(it - t.header.begin());
    };
    const std::size_t ucol = find_col(unit_col);
    const std::size_t tcol = find_col(time_col);
    if (t.rows.empty()) throw EmptyData("'" + path + "' contains no data rows");

    std::vector<std::string> units;
    std::vector<int> periods;
    std::vector<std::string> names;
    std::vector<std::size_t> value_cols;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (j == ucol || j == tcol) continue;
        names.push_back(t.header[j]);
        value_cols.push_back(j);
    }
    std::vector<std::vector<double>> columns(names.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row.size() != t.header.size()) {
            throw ParseError("data row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                             " fields, header has " + std::to_string(t.header.size()));
        }
        units.push_back(row[ucol]);
        periods.push_back(static_cast<int>(parse_cell_int(row[tcol], r + 1, time_col)));
        for (std::size_t k = 0; k < value_cols.size(); ++k) {
            columns[k].push_back(parse_cell_double(row[value_cols[k]], r + 1, names[k]));
        }
    }
    PanelDataset ds = PanelDataset::create(std::move(units), std::move(periods), std::move(names),
                                           std::move(columns), unit_col, time_col);
    if (ds.n_units() < 2 || ds.n_periods() < 2) {
        throw EmptyData("panel needs at least 2 units and 2 periods; got " +
                        std::to_string(ds.n_units()) + " unit(s), " +
                        std::to_string(ds.n_periods()) + " period(s)");
    }
    return ds;
}

inline std::string panel_to_csv(const PanelDataset& ds) {
    CsvTable t;
    t.header.push_back(ds.unit_col_name());
    t.header.push_back(ds.time_col_name());
    for (const auto& c : ds.column_names()) t.header.push_back(c);
    t.rows.resize(ds.n_rows());
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        auto& row = t.rows[r];
        row.push_back(ds.unit_name(ds.unit_idx()[r]));
        row.push_back(std::to_string(ds.period()[r]));
        for (const auto& c : ds.column_names()) {
            double v = ds.col(c)[r];
            row.push_back(is_missing(v) ? std::string() : format_double(v));
        }
    }
    return write_csv(t);
}

// Listwise deletion over role columns, binary-treatment check, zero-variance
// flags. Mutates ds: drops offending rows and installs the role map.
inline ValidationReport assign_roles(PanelDataset& ds, const RoleMap& roles) {
    // Role columns must exist and not overlap.
    std::map<std::string, std::string> seen;
    for (const auto& [role, colname] : roles.named_roles()) {
        if (!ds.has_column(colname)) throw MissingColumn("role " + role + " column '" + colname + "'");
        auto it = seen.find(colname);
        if (it != seen.end() && !(role == "cluster" && it->second == "cluster")) {
            throw RoleOverlap("column '" + colname + "' assigned to both " + it->second + " and " + role);
        }
        seen.emplace(colname, role);
    }
    if (roles.outcome.empty()) throw MissingColumn("role outcome is unset");
    if (roles.treatment.empty()) throw MissingColumn("role treatment is unset");

    ValidationReport report;
    const std::size_t n_before = ds.n_rows();
    std::vector<bool> keep(n_before, true);
    std::map<std::string, std::size_t> reasons;
    auto scan = [&](const std::string& role, const std::string& colname) {
        const auto& v = ds.col(colname);
        for (std::size_t r = 0; r < v.size(); ++r) {
            if (keep[r] && is_missing(v[r])) {
                keep[r] = false;
                ++reasons["missing " + role];
            }
        }
    };
    scan("outcome", roles.outcome);
    scan("treatment", roles.treatment);
    for (const auto& c : roles.covariates) scan("covariate " + c, c);
    if (!roles.instrument.empty()) scan("instrument", roles.instrument);
    if (!roles.moderator.empty()) scan("moderator", roles.moderator);
    if (!roles.mediator.empty()) scan("mediator", roles.mediator);
    if (!roles.cluster.empty()) scan("cluster", roles.cluster);

    std::size_t dropped = 0;
    for (bool k : keep) if (!k) ++dropped;
    if (dropped > 0) ds = ds.filter_rows(keep);
    if (ds.n_rows() == 0) throw EmptyData("all rows dropped by listwise deletion");
    if (ds.n_units() < 2 || ds.n_periods() < 2) {
        throw EmptyData("listwise deletion left fewer than 2 units or 2 periods");
    }
    ds.roles = roles;

    const auto& d = ds.col(roles.treatment);
    for (std::size_t r = 0; r < d.size(); ++r) {
        if (d[r] != 0.0 && d[r] != 1.0) {
            throw NonBinaryTreatment("treatment '" + roles.treatment + "' has value " +
                                     format_double(d[r]) + " at data row " + std::to_string(r + 1));
        }
    }
    for (const auto& c : roles.covariates) {
        const auto& v = ds.col(c);
        bool constant = true;
        for (std::size_t r = 1; r < v.size(); ++r) {
            if (v[r] != v[0]) { constant = false; break; }
        }
        if (constant) report.zero_variance_columns.push_back(c);
    }

    report.n_rows = ds.n_rows();
    report.n_units = ds.n_units();
    report.n_periods = ds.n_periods();
    report.balanced = report.n_rows == report.n_units * report.n_periods;
    report.dropped_rows = dropped;
    for (const auto& [k, v] : reasons) report.drop_reasons.emplace_back(k, v);
    if (!report.balanced) report.warnings.push_back("panel is unbalanced");
    for (const auto& c : report.zero_variance_columns) {
        report.warnings.push_back("covariate '" + c + "' has zero variance");
    }
    return report;
}

namespace detail {

// Rebuilds the treatment column as 1{t >= G_i} and cross-checks any existing
// values, recording a warning on mismatch.
inline void regenerate_treatment(PanelDataset& ds, CohortMap& cohorts) {
    const std::string d_name = ds.roles.treatment.empty() ? std::string("D") : ds.roles.treatment;
    std::vector<double> d(ds.n_rows(), 0.0);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const auto& g = cohorts.g[static_cast<std::size_t>(ds.unit_idx()[r])];
        d[r] = (g && ds.period()[r] >= *g) ? 1.0 : 0.0;
    }
    if (ds.has_column(d_name)) {
        const auto& old_d = ds.col(d_name);
        std::size_t mismatches = 0;
        for (std::size_t r = 0; r < old_d.size(); ++r) {
            if (!is_missing(old_d[r]) && old_d[r] != d[r]) ++mismatches;
        }
        if (mismatches > 0) {
            cohorts.warnings.push_back("existing treatment column '" + d_name + "' disagrees with derived cohorts at " +
                                       std::to_string(mismatches) + " cell(s); regenerated");
        }
    }
    ds.set_or_add_column(d_name, std::move(d));
}

} // namespace detail

// Cohorts from a timing column: per unit, a constant period value (missing =
// never treated). Regenerates the treatment column from the result.
inline CohortMap derive_cohorts(PanelDataset& ds, const std::string& timing_column) {
    const auto& v = ds.col(timing_column);
    CohortMap cohorts;
    cohorts.g.assign(ds.n_units(), std::nullopt);
    std::vector<bool> seen(ds.n_units(), false);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const std::size_t u = static_cast<std::size_t>(ds.unit_idx()[r]);
        std::optional<int> g;
        if (!is_missing(v[r])) {
            double iv = std::round(v[r]);
            if (std::fabs(v[r] - iv) > 1e-9) {
                throw ParseError("timing column '" + timing_column + "' has non-integer value " +
                                 format_double(v[r]));
            }
            g = static_cast<int>(iv);
        }
        if (!seen[u]) {
            cohorts.g[u] = g;
            seen[u] = true;
        } else if (cohorts.g[u] != g) {
            throw ParseError("timing column '" + timing_column + "' varies within unit '" +
                             ds.unit_name(static_cast<int>(u)) + "'");
        }
    }
    const int lo = ds.period_levels().front();
    const int hi = ds.period_levels().back();
    for (std::size_t u = 0; u < cohorts.g.size(); ++u) {
        if (cohorts.g[u] && (*cohorts.g[u] < lo || *cohorts.g[u] > hi)) {
            throw TimingOutOfRange("unit '" + ds.unit_name(static_cast<int>(u)) + "' has G=" +
                                   std::to_string(*cohorts.g[u]) + " outside observed periods [" +
                                   std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
    }
    detail::regenerate_treatment(ds, cohorts);
    return cohorts;
}

// Cohorts from an explicit unit -> G map; units absent from the map are
// never treated.
inline CohortMap derive_cohorts(PanelDataset& ds,
                                const std::map<std::string, std::optional<int>>& timing) {
    CohortMap cohorts;
    cohorts.g.assign(ds.n_units(), std::nullopt);
    std::unordered_map<std::string, std::size_t> unit_index;
    for (std::size_t u = 0; u < ds.n_units(); ++u) unit_index[ds.unit_levels()[u]] = u;
    const int lo = ds.period_levels().front();
    const int hi = ds.period_levels().back();
    for (const auto& [unit, g] : timing) {
        auto it = unit_index.find(unit);
        if (it == unit_index.end()) throw UnknownUnit("timing map names unknown unit '" + unit + "'");
        if (g && (*g < lo || *g > hi)) {
            throw TimingOutOfRange("unit '" + unit + "' has G=" + std::to_string(*g) +
                                   " outside observed periods [" + std::to_string(lo) + ", " +
                                   std::to_string(hi) + "]");
        }
        cohorts.g[it->second] = g;
    }
    detail::regenerate_treatment(ds, cohorts);
    return cohorts;
}

// Recovers the cohort map implied by an absorbing 0/1 treatment column.
inline CohortMap derive_cohorts_from_treatment(const PanelDataset& ds, const std::string& d_col) {
    const auto& d = ds.col(d_col);
    CohortMap cohorts;
    cohorts.g.assign(ds.n_units(), std::nullopt);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        if (d[r] != 0.0 && d[r] != 1.0) {
            throw NonBinaryTreatment("'" + d_col + "' has value " + format_double(d[r]) +
                                     " at data row " + std::to_string(r + 1));
        }
        const std::size_t u = static_cast<std::size_t>(ds.unit_idx()[r]);
        if (d[r] == 1.0) {
            if (!cohorts.g[u]) cohorts.g[u] = ds.period()[r];
        } else if (cohorts.g[u]) {
            throw NonBinaryTreatment("treatment is not absorbing for unit '" +
                                     ds.unit_name(ds.unit_idx()[r]) + "': 0 follows 1");
        }
    }
    return cohorts;
}

// Derived-feature construction: standardize / square / interact, appended
// with deterministic names.
struct FeatureOp {
    enum class Kind { standardize, square, interact };
    Kind kind;
    std::string a;
    std::string b;  // interact only

    static FeatureOp standardize(std::string col) { return {Kind::standardize, std::move(col), {}}; }
    static FeatureOp square(std::string col) { return {Kind::square, std::move(col), {}}; }
    static FeatureOp interact(std::string col_a, std::string col_b) {
        return {Kind::interact, std::move(col_a), std::move(col_b)};
    }
};

inline PanelDataset derive_features(const PanelDataset& ds, const std::vector<FeatureOp>& ops) {
    PanelDataset out = ds;
    for (const auto& op : ops) {
        const auto& a = out.col(op.a);
        std::vector<double> v(out.n_rows());
        std::string name;
        switch (op.kind) {
            case FeatureOp::Kind::standardize: {
                name = "std_" + op.a;
                double sum = 0.0;
                std::size_t n = 0;
                for (double x : a) if (!is_missing(x)) { sum += x; ++n; }
                if (n < 2) throw ZeroVariance("standardize('" + op.a + "'): fewer than 2 observed values");
                const double mean = sum / static_cast<double>(n);
                double ss = 0.0;
                for (double x : a) if (!is_missing(x)) ss += (x - mean) * (x - mean);
                const double sd = std::sqrt(ss / static_cast<double>(n - 1));
                if (sd == 0.0) throw ZeroVariance("standardize('" + op.a + "'): column is constant");
                for (std::size_t r = 0; r < a.size(); ++r) {
                    v[r] = is_missing(a[r]) ? missing_value() : (a[r] - mean) / sd;
                }
                break;
            }
            case FeatureOp::Kind::square: {
                name = op.a + "2";
                for (std::size_t r = 0; r < a.size(); ++r) v[r] = a[r] * a[r];
                break;
            }
            case FeatureOp::Kind::interact: {
                name = op.a + "_x_" + op.b;
                const auto& b = out.col(op.b);
                for (std::size_t r = 0; r < a.size(); ++r) v[r] = a[r] * b[r];
                break;
            }
        }
        out.add_column(name, std::move(v));  // NameCollision if it exists
    }
    return out;
}

// distance = t - G_i, values <= floor_bin pooled into floor_bin; NaN sentinel
// for never-treated rows.
inline std::vector<double> relative_time(const PanelDataset& ds, const CohortMap& cohorts,
                                         int floor_bin = -4) {
    if (floor_bin >= 0) throw ConfigInvalid("relative_time: floor_bin must be negative");
    if (cohorts.g.size() != ds.n_units()) throw ShapeMismatch("cohort map does not align with dataset units");
    std::vector<double> out(ds.n_rows(), missing_value());
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const auto& g = cohorts.g[static_cast<std::size_t>(ds.unit_idx()[r])];
        if (!g) continue;
        int d = ds.period()[r] - *g;
        if (d <= floor_bin) d = floor_bin;
        out[r] = static_cast<double>(d);
    }
    return out;
}

// Keeps every row of units whose time-invariant group value is in
// keep_values; group membership must be constant within unit.
inline PanelDataset filter_subgroup(const PanelDataset& ds, const std::string& column,
                                    const std::set<double>& keep_values) {
    const auto& v = ds.col(column);
    std::vector<double> group_of_unit(ds.n_units(), missing_value());
    std::vector<bool> seen(ds.n_units(), false);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const std::size_t u = static_cast<std::size_t>(ds.unit_idx()[r]);
        if (!seen[u]) {
            group_of_unit[u] = v[r];
            seen[u] = true;
        } else if (group_of_unit[u] != v[r] && !(is_missing(group_of_unit[u]) && is_missing(v[r]))) {
            throw InconsistentGroup("unit '" + ds.unit_name(ds.unit_idx()[r]) + "' changes '" +
                                    column + "' over time");
        }
    }
    std::vector<bool> keep(ds.n_rows(), false);
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const double g = group_of_unit[static_cast<std::size_t>(ds.unit_idx()[r])];
        keep[r] = !is_missing(g) && keep_values.count(g) > 0;
    }
    std::size_t kept = 0;
    for (bool k : keep) if (k) ++kept;
    if (kept == 0) throw EmptySubgroup("no units with '" + column + "' in the requested set");
    return ds.filter_rows(keep);
}

} // namespace sdidml
