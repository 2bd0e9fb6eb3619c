#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdidml/csv.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/learners.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/simulator.hpp"

namespace sdidml {

// Run configuration, a flat sectioned key=value format. Sections and keys are
// closed sets; anything unrecognized is rejected with its line number.
// Defaults: folds=5, seed=42, event_floor=-4, event_reference=-1,
// placebo_reps=500, placebo_seed=123, sensitivity folds {3,5} x learners
// {forest, lasso_cv}.
struct RunConfig {
    // [data]
    std::string data_path;
    std::string unit_col = "unit";
    std::string time_col = "period";

    // [roles]
    RoleMap roles;
    std::string group_col;

    // [cohorts]
    std::string timing_column;
    std::map<std::string, std::optional<int>> cohort_map;
    bool has_cohort_map = false;

    // [dml]
    int folds = 5;
    LearnerSpec learner_y = LearnerSpec::of(LearnerKind::forest);
    LearnerSpec learner_d = LearnerSpec::of(LearnerKind::forest);
    std::optional<LearnerSpec> learner_z;
    std::uint64_t seed = 42;

    // [robustness]
    int event_floor = -4;
    int event_reference = -1;
    int placebo_reps = 500;
    std::uint64_t placebo_seed = 123;
    std::vector<int> sensitivity_folds = {3, 5};
    std::vector<LearnerSpec> sensitivity_learners = {LearnerSpec::of(LearnerKind::forest),
                                                     LearnerSpec::of(LearnerKind::lasso_cv)};

    // [simulate]
    bool has_simulate = false;
    DgpConfig dgp;

    // [output]
    std::string out_dir;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    int depth = 0;  // commas inside learner parentheses are not separators
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(item));
            item.clear();
        } else {
            item += c;
        }
    }
    if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

inline long parse_int_cfg(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects an integer, got '" + v + "'");
    }
}

inline double parse_real_cfg(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects a real number, got '" + v + "'");
    }
}

inline bool parse_bool_cfg(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                      "' expects true/false, got '" + v + "'");
}

inline LearnerSpec parse_learner_cfg(const std::string& v, int line, const std::string& key) {
    try {
        return LearnerSpec::parse(v);
    } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line) + ": key '" + key + "': " + e.what());
    }
}

} // namespace detail

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header '" + line + "'");
            }
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "data" && section != "roles" && section != "cohorts" &&
                section != "dml" && section != "robustness" && section != "simulate" &&
                section != "output") {
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
            }
            if (section == "simulate") cfg.has_simulate = true;
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
        }
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        auto unknown = [&]() -> ConfigError {
            return ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                               "' in section [" + section + "]");
        };

        if (section == "data") {
            if (key == "path") cfg.data_path = val;
            else if (key == "unit_col") cfg.unit_col = val;
            else if (key == "time_col") cfg.time_col = val;
            else throw unknown();
        } else if (section == "roles") {
            if (key == "outcome") cfg.roles.outcome = val;
            else if (key == "treatment") cfg.roles.treatment = val;
            else if (key == "covariates") cfg.roles.covariates = detail::split_list(val);
            else if (key == "instrument") cfg.roles.instrument = val;
            else if (key == "moderator") cfg.roles.moderator = val;
            else if (key == "mediator") cfg.roles.mediator = val;
            else if (key == "cluster") cfg.roles.cluster = val;
            else if (key == "group") cfg.group_col = val;
            else throw unknown();
        } else if (section == "cohorts") {
            if (key == "timing_column") cfg.timing_column = val;
            else if (key == "map") {
                cfg.has_cohort_map = true;
                for (const std::string& entry : detail::split_list(val)) {
                    std::size_t colon = entry.find(':');
                    if (colon == std::string::npos) {
                        throw ConfigError("line " + std::to_string(line_no) +
                                          ": cohort map entries take the form unit:period or unit:never, got '" +
                                          entry + "'");
                    }
                    const std::string unit = detail::trim(entry.substr(0, colon));
                    const std::string when = detail::trim(entry.substr(colon + 1));
                    if (when == "never") cfg.cohort_map[unit] = std::nullopt;
                    else cfg.cohort_map[unit] = static_cast<int>(detail::parse_int_cfg(when, line_no, key));
                }
            } else throw unknown();
        } else if (section == "dml") {
            if (key == "folds") cfg.folds = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "learner_y") cfg.learner_y = detail::parse_learner_cfg(val, line_no, key);
            else if (key == "learner_d") cfg.learner_d = detail::parse_learner_cfg(val, line_no, key);
            else if (key == "learner_z") cfg.learner_z = detail::parse_learner_cfg(val, line_no, key);
            else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int_cfg(val, line_no, key));
            else throw unknown();
        } else if (section == "robustness") {
            if (key == "event_floor") cfg.event_floor = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "event_reference") cfg.event_reference = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "placebo_reps") cfg.placebo_reps = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "placebo_seed") cfg.placebo_seed = static_cast<std::uint64_t>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "sensitivity_folds") {
                cfg.sensitivity_folds.clear();
                for (const std::string& f : detail::split_list(val)) {
                    cfg.sensitivity_folds.push_back(static_cast<int>(detail::parse_int_cfg(f, line_no, key)));
                }
            } else if (key == "sensitivity_learners") {
                cfg.sensitivity_learners.clear();
                for (const std::string& l : detail::split_list(val)) {
                    cfg.sensitivity_learners.push_back(detail::parse_learner_cfg(l, line_no, key));
                }
            } else throw unknown();
        } else if (section == "simulate") {
            if (key == "n_units") cfg.dgp.n_units = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "n_periods") cfg.dgp.n_periods = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "p_covariates") cfg.dgp.p_covariates = static_cast<int>(detail::parse_int_cfg(val, line_no, key));
            else if (key == "theta0") cfg.dgp.theta0 = detail::parse_real_cfg(val, line_no, key);
            else if (key == "cohort_periods") {
                cfg.dgp.cohort_periods.clear();
                for (const std::string& g : detail::split_list(val)) {
                    cfg.dgp.cohort_periods.push_back(static_cast<int>(detail::parse_int_cfg(g, line_no, key)));
                }
            } else if (key == "never_share") cfg.dgp.never_share = detail::parse_real_cfg(val, line_no, key);
            else if (key == "nonlinearity") {
                if (val == "linear") cfg.dgp.nonlinearity = DgpForm::linear;
                else if (val == "nonlinear") cfg.dgp.nonlinearity = DgpForm::nonlinear;
                else throw ConfigError("line " + std::to_string(line_no) +
                                       ": nonlinearity must be linear or nonlinear, got '" + val + "'");
            } else if (key == "confounded") cfg.dgp.confounded_assignment = detail::parse_bool_cfg(val, line_no, key);
            else if (key == "heterogeneity") cfg.dgp.effect_heterogeneity = detail::parse_real_cfg(val, line_no, key);
            else if (key == "endogeneity") cfg.dgp.endogeneity = detail::parse_real_cfg(val, line_no, key);
            else if (key == "instrument_strength") cfg.dgp.instrument_strength = detail::parse_real_cfg(val, line_no, key);
            else if (key == "instrument") cfg.dgp.with_instrument = detail::parse_bool_cfg(val, line_no, key);
            else if (key == "noise_sd") cfg.dgp.noise_sd = detail::parse_real_cfg(val, line_no, key);
            else if (key == "fe_sd") cfg.dgp.fe_sd = detail::parse_real_cfg(val, line_no, key);
            else if (key == "seed") cfg.dgp.seed = static_cast<std::uint64_t>(detail::parse_int_cfg(val, line_no, key));
            else throw unknown();
        } else if (section == "output") {
            if (key == "dir") cfg.out_dir = val;
            else throw unknown();
        }
    }
    if (!cfg.data_path.empty() && cfg.has_simulate) {
        throw ConfigError("config sets both [data] path and [simulate]; choose one data source");
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Canonical text form; parse(serialize(cfg)) == cfg and serialization of the
// result is byte-identical (idempotent round trip).
inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    auto learner_list = [](const std::vector<LearnerSpec>& ls) {
        std::string s;
        for (std::size_t i = 0; i < ls.size(); ++i) {
            if (i) s += ", ";
            s += ls[i].name();
        }
        return s;
    };
    auto int_list = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(v[i]);
        }
        return s;
    };
    out << "[data]\n";
    if (!cfg.data_path.empty()) out << "path = " << cfg.data_path << "\n";
    out << "unit_col = " << cfg.unit_col << "\n";
    out << "time_col = " << cfg.time_col << "\n";
    out << "\n[roles]\n";
    if (!cfg.roles.outcome.empty()) out << "outcome = " << cfg.roles.outcome << "\n";
    if (!cfg.roles.treatment.empty()) out << "treatment = " << cfg.roles.treatment << "\n";
    if (!cfg.roles.covariates.empty()) {
        out << "covariates = ";
        for (std::size_t i = 0; i < cfg.roles.covariates.size(); ++i) {
            if (i) out << ", ";
            out << cfg.roles.covariates[i];
        }
        out << "\n";
    }
    if (!cfg.roles.instrument.empty()) out << "instrument = " << cfg.roles.instrument << "\n";
    if (!cfg.roles.moderator.empty()) out << "moderator = " << cfg.roles.moderator << "\n";
    if (!cfg.roles.mediator.empty()) out << "mediator = " << cfg.roles.mediator << "\n";
    if (!cfg.roles.cluster.empty()) out << "cluster = " << cfg.roles.cluster << "\n";
    if (!cfg.group_col.empty()) out << "group = " << cfg.group_col << "\n";
    if (!cfg.timing_column.empty() || cfg.has_cohort_map) {
        out << "\n[cohorts]\n";
        if (!cfg.timing_column.empty()) out << "timing_column = " << cfg.timing_column << "\n";
        if (cfg.has_cohort_map) {
            out << "map = ";
            bool first = true;
            for (const auto& [unit, g] : cfg.cohort_map) {
                if (!first) out << ", ";
                first = false;
                out << unit << ":" << (g ? std::to_string(*g) : std::string("never"));
            }
            out << "\n";
        }
    }
    out << "\n[dml]\n";
    out << "folds = " << cfg.folds << "\n";
    out << "learner_y = " << cfg.learner_y.name() << "\n";
    out << "learner_d = " << cfg.learner_d.name() << "\n";
    if (cfg.learner_z) out << "learner_z = " << cfg.learner_z->name() << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "\n[robustness]\n";
    out << "event_floor = " << cfg.event_floor << "\n";
    out << "event_reference = " << cfg.event_reference << "\n";
    out << "placebo_reps = " << cfg.placebo_reps << "\n";
    out << "placebo_seed = " << cfg.placebo_seed << "\n";
    out << "sensitivity_folds = " << int_list(cfg.sensitivity_folds) << "\n";
    out << "sensitivity_learners = " << learner_list(cfg.sensitivity_learners) << "\n";
    if (cfg.has_simulate) {
        out << "\n[simulate]\n";
        out << "n_units = " << cfg.dgp.n_units << "\n";
        out << "n_periods = " << cfg.dgp.n_periods << "\n";
        out << "p_covariates = " << cfg.dgp.p_covariates << "\n";
        out << "theta0 = " << format_double(cfg.dgp.theta0) << "\n";
        out << "cohort_periods = " << int_list(cfg.dgp.cohort_periods) << "\n";
        out << "never_share = " << format_double(cfg.dgp.never_share) << "\n";
        out << "nonlinearity = " << (cfg.dgp.nonlinearity == DgpForm::linear ? "linear" : "nonlinear") << "\n";
        out << "confounded = " << (cfg.dgp.confounded_assignment ? "true" : "false") << "\n";
        out << "heterogeneity = " << format_double(cfg.dgp.effect_heterogeneity) << "\n";
        out << "endogeneity = " << format_double(cfg.dgp.endogeneity) << "\n";
        out << "instrument_strength = " << format_double(cfg.dgp.instrument_strength) << "\n";
        out << "instrument = " << (cfg.dgp.with_instrument ? "true" : "false") << "\n";
        out << "noise_sd = " << format_double(cfg.dgp.noise_sd) << "\n";
        out << "fe_sd = " << format_double(cfg.dgp.fe_sd) << "\n";
        out << "seed = " << cfg.dgp.seed << "\n";
    }
    if (!cfg.out_dir.empty()) {
        out << "\n[output]\n";
        out << "dir = " << cfg.out_dir << "\n";
    }
    return out.str();
}

} // namespace sdidml
