#pragma once

#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdidml/config.hpp"
#include "sdidml/crossfit.hpp"
#include "sdidml/diagnostics.hpp"
#include "sdidml/errors.hpp"
#include "sdidml/estimators.hpp"
#include "sdidml/json_writer.hpp"
#include "sdidml/mechanisms.hpp"
#include "sdidml/panel.hpp"
#include "sdidml/robustness.hpp"
#include "sdidml/simulator.hpp"

namespace sdidml {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunOptions {
    std::string config_path;
    std::string subcommand;
    std::string out_override;  // --out; beats SDIDML_OUT, config, and "./out"
    std::optional<std::uint64_t> seed_override;
    int threads = 1;
    bool observation_folds = false;
    bool observation_placebo = false;
};

struct StepStatus {
    std::string step;
    std::string status;  // ok | skipped | failed
    std::string detail;
};

struct RunResult {
    int exit_code = 0;
    std::string out_dir;
    std::vector<StepStatus> steps;
    std::vector<std::string> files;  // emission order
    std::string first_error;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& s) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a64(s);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
#if defined(_WIN32)
    gmtime_s(&tm, &t);
#else
    gmtime_r(&t, &tm);
#endif
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
}

// The headline line rendered into summary.md for every estimate.
inline std::string inference_line(double theta, double se, double statistic, double p, double lo,
                                  double hi, int df = kNormalDf) {
    const char* label = df == kNormalDf ? "z" : "t";
    std::string s = "\xce\xb8=";  // theta
    s += JsonValue::format_real(theta);
    s += ", SE=";
    s += JsonValue::format_real(se);
    s += ", ";
    s += label;
    s += "=";
    s += JsonValue::format_real(statistic);
    s += ", p=";
    s += JsonValue::format_real(p);
    s += ", 95% CI [";
    s += JsonValue::format_real(lo);
    s += ", ";
    s += JsonValue::format_real(hi);
    s += "]";
    return s;
}

inline JsonValue df_json(int df) {
    return df == kNormalDf ? JsonValue::string("normal") : JsonValue::integer(df);
}

// Fixed key order: theta, se, statistic, p_value, ci_low, ci_high, n_obs,
// n_clusters, df, method, learners, folds, seed; IV appends first_stage_t
// and weak_instrument.
inline JsonValue estimate_to_json(const EstimateResult& e, bool iv_extras = false) {
    JsonValue o = JsonValue::object();
    o.set("theta", JsonValue::real(e.theta));
    o.set("se", JsonValue::real(e.se));
    o.set("statistic", JsonValue::real(e.statistic));
    o.set("p_value", JsonValue::real(e.p_value));
    o.set("ci_low", JsonValue::real(e.ci_low));
    o.set("ci_high", JsonValue::real(e.ci_high));
    o.set("n_obs", JsonValue::integer(static_cast<long long>(e.n_obs)));
    o.set("n_clusters", JsonValue::integer(static_cast<long long>(e.n_clusters)));
    o.set("df", df_json(e.df));
    o.set("method", JsonValue::string(e.method));
    o.set("learners", JsonValue::string(e.learners));
    o.set("folds", JsonValue::integer(e.folds));
    o.set("seed", JsonValue::integer(static_cast<long long>(e.seed)));
    if (iv_extras) {
        o.set("first_stage_t", JsonValue::real(e.first_stage_t));
        o.set("weak_instrument", JsonValue::boolean(e.weak_instrument));
    }
    return o;
}

inline JsonValue twfe_row_json(const TwfeRow& r) {
    JsonValue o = JsonValue::object();
    o.set("name", JsonValue::string(r.name));
    o.set("coef", JsonValue::real(r.coef));
    o.set("se", JsonValue::real(r.se));
    o.set("statistic", JsonValue::real(r.t));
    o.set("p_value", JsonValue::real(r.p));
    o.set("ci_low", JsonValue::real(r.ci_low));
    o.set("ci_high", JsonValue::real(r.ci_high));
    return o;
}

inline JsonValue path_estimate_json(const PathEstimate& p) {
    JsonValue o = JsonValue::object();
    o.set("coef", JsonValue::real(p.coef));
    o.set("se", JsonValue::real(p.se));
    o.set("statistic", JsonValue::real(p.statistic));
    o.set("p_value", JsonValue::real(p.p));
    o.set("ci_low", JsonValue::real(p.ci_low));
    o.set("ci_high", JsonValue::real(p.ci_high));
    return o;
}

// Accumulates emitted files (written atomically as they arrive), step status
// lines, and summary sections; finalize() adds summary.md and manifest.json.
// Content never embeds a timestamp; the timestamp lives only in the manifest,
// outside its own hash, so re-runs are hash-identical.
class ReportBuilder {
  public:
    explicit ReportBuilder(std::filesystem::path out_dir) : out_dir_(std::move(out_dir)) {}

    const std::filesystem::path& out_dir() const { return out_dir_; }

    void emit(const std::string& name, const std::string& content) {
        write_file_atomic(out_dir_ / name, content);
        names_.push_back(name);
        hashes_.emplace_back(name, fnv1a64_hex(content));
    }

    void step(const std::string& name, const std::string& status, const std::string& detail) {
        steps_.push_back({name, status, detail});
    }

    void section(const std::string& title) { sections_.emplace_back(title, std::vector<std::string>{}); }

    void line(const std::string& text) {
        if (sections_.empty()) section("run");
        sections_.back().second.push_back(text);
    }

    bool empty() const { return names_.empty() && steps_.size() == 0; }

    const std::vector<StepStatus>& steps() const { return steps_; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<std::pair<std::string, std::string>>& hashes() const { return hashes_; }

    std::string build_summary(const std::string& subcommand) const {
        std::ostringstream md;
        md << "# sdidml summary\n\n";
        md << "subcommand: " << subcommand << "\n";
        for (const auto& [title, lines] : sections_) {
            md << "\n## " << title << "\n\n";
            for (const auto& l : lines) md << "- " << l << "\n";
        }
        if (!names_.empty()) {
            md << "\n## files\n\n";
            for (const auto& n : names_) md << "- " << n << "\n";
        }
        return md.str();
    }

    // summary.md always; manifest.json unless the bundle is empty. The
    // manifest hashes every emitted file including summary.md.
    void finalize(const std::string& subcommand, const std::string& config_echo) {
        const bool was_empty = empty();
        emit("summary.md", build_summary(subcommand));
        if (was_empty) return;
        JsonValue m = JsonValue::object();
        m.set("tool", JsonValue::string("sdidml"));
        m.set("version", JsonValue::string(kToolVersion));
        m.set("subcommand", JsonValue::string(subcommand));
        m.set("timestamp", JsonValue::string(utc_timestamp()));
        m.set("config", JsonValue::string(config_echo));
        JsonValue files = JsonValue::object();
        for (const auto& [name, hash] : hashes_) files.set(name, JsonValue::string(hash));
        m.set("files", std::move(files));
        JsonValue steps = JsonValue::array();
        for (const auto& s : steps_) {
            JsonValue o = JsonValue::object();
            o.set("step", JsonValue::string(s.step));
            o.set("status", JsonValue::string(s.status));
            o.set("detail", JsonValue::string(s.detail));
            steps.push_back(std::move(o));
        }
        m.set("steps", std::move(steps));
        write_file_atomic(out_dir_ / "manifest.json", m.dump());
        names_.push_back("manifest.json");
    }

  private:
    std::filesystem::path out_dir_;
    std::vector<std::string> names_;
    std::vector<std::pair<std::string, std::string>> hashes_;
    std::vector<StepStatus> steps_;
    std::vector<std::pair<std::string, std::vector<std::string>>> sections_;
};

inline std::string resolve_out_dir(const RunConfig& cfg, const RunOptions& opts) {
    if (!opts.out_override.empty()) return opts.out_override;
    if (const char* env = std::getenv("SDIDML_OUT"); env != nullptr && *env != '\0') return env;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    return "./out";
}

namespace detail {

inline std::string csv_cell(double v) {
    return is_missing(v) ? std::string() : format_double(v);
}

// Executes individual workflow steps against one loaded (or simulated)
// dataset, emitting each step's files through the builder and returning a
// one-line detail for the status log.
class RunContext {
  public:
    RunContext(RunConfig cfg, RunOptions opts, ReportBuilder& out)
        : cfg_(std::move(cfg)), opts_(std::move(opts)), out_(out) {}

    const RunConfig& config() const { return cfg_; }

    void acquire_data() {
        if (!cfg_.data_path.empty()) {
            ds_.emplace(load_panel_csv(cfg_.data_path, cfg_.unit_col, cfg_.time_col));
            vreport_ = assign_roles(*ds_, cfg_.roles);
        } else if (cfg_.has_simulate) {
            auto [panel, truth] = generate_panel(cfg_.dgp);
            ds_.emplace(std::move(panel));
            truth_ = std::move(truth);
            simulated_ = true;
            vreport_.n_rows = ds_->n_rows();
            vreport_.n_units = ds_->n_units();
            vreport_.n_periods = ds_->n_periods();
            vreport_.balanced = true;
            out_.emit("data.csv", panel_to_csv(*ds_));
            out_.emit("truth.json", truth_json());
        } else {
            throw ConfigError("config needs either [data] path or a [simulate] section");
        }
    }

    const PanelDataset& data() const { return *ds_; }
    bool simulated() const { return simulated_; }

    // Empty string means the step can run; otherwise the skip reason used by
    // `all` (standalone invocations turn the same condition into ConfigError).
    std::string skip_reason(const std::string& step) const {
        const RoleMap& roles = ds_->roles;
        if ((step == "vif" || step == "pca") && roles.covariates.empty())
            return "no covariates configured (roles.covariates)";
        if (step == "iv-dml" && roles.instrument.empty()) return "no instrument role configured";
        if (step == "moderate" && roles.moderator.empty()) return "no moderator role configured";
        if (step == "mediate" && roles.mediator.empty()) return "no mediator role configured";
        if (step == "subgroup" && cfg_.group_col.empty()) return "no group column configured";
        return std::string();
    }

    std::string run_step(const std::string& step) {
        if (step == "validate") return step_validate();
        if (step == "describe") return step_describe();
        if (step == "corr") return step_corr();
        if (step == "vif") return step_vif();
        if (step == "pca") return step_pca();
        if (step == "twfe") return step_twfe();
        if (step == "dml") return step_dml();
        if (step == "iv-dml") return step_iv_dml();
        if (step == "event-study") return step_event_study();
        if (step == "placebo") return step_placebo();
        if (step == "counterfactual") return step_counterfactual();
        if (step == "sensitivity") return step_sensitivity();
        if (step == "moderate") return step_moderate();
        if (step == "mediate") return step_mediate();
        if (step == "subgroup") return step_subgroup();
        if (step == "simulate") return step_simulate();
        throw ConfigError("unknown subcommand '" + step + "'");
    }

  private:
    std::vector<std::string> role_vars() const {
        std::vector<std::string> vars;
        const RoleMap& roles = ds_->roles;
        auto add = [&](const std::string& c) {
            if (!c.empty()) vars.push_back(c);
        };
        add(roles.outcome);
        add(roles.treatment);
        for (const auto& c : roles.covariates) vars.push_back(c);
        add(roles.instrument);
        add(roles.moderator);
        add(roles.mediator);
        if (vars.empty()) {
            throw ConfigError("no role variables configured; set [roles] outcome/treatment/covariates");
        }
        return vars;
    }

    const CohortMap& cohorts() {
        if (!cohorts_) {
            if (cfg_.has_cohort_map) {
                cohorts_ = derive_cohorts(*ds_, cfg_.cohort_map);
            } else if (!cfg_.timing_column.empty()) {
                cohorts_ = derive_cohorts(*ds_, cfg_.timing_column);
            } else if (simulated_ && ds_->has_column("cohort")) {
                cohorts_ = derive_cohorts(*ds_, "cohort");
            } else if (!ds_->roles.treatment.empty()) {
                cohorts_ = derive_cohorts_from_treatment(*ds_, ds_->roles.treatment);
            } else {
                throw ConfigError("no cohort source: set [cohorts] timing_column or map, or a treatment role");
            }
        }
        return *cohorts_;
    }

    DmlPipeline pipeline(bool with_instrument = false) const {
        DmlPipeline p;
        p.learner_y = cfg_.learner_y;
        p.learner_d = cfg_.learner_d;
        if (with_instrument) p.learner_z = cfg_.learner_z ? *cfg_.learner_z : cfg_.learner_d;
        p.folds = cfg_.folds;
        p.seed = cfg_.seed;
        p.observation_folds = opts_.observation_folds;
        p.threads = opts_.threads;
        return p;
    }

    std::string truth_json() const {
        JsonValue o = JsonValue::object();
        o.set("theta0", JsonValue::real(truth_->theta0));
        o.set("n_units", JsonValue::integer(static_cast<long long>(ds_->n_units())));
        o.set("n_periods", JsonValue::integer(static_cast<long long>(ds_->n_periods())));
        JsonValue cohorts = JsonValue::object();
        for (std::size_t u = 0; u < ds_->n_units(); ++u) {
            const auto& g = truth_->cohort_of_unit[u];
            cohorts.set(ds_->unit_levels()[u], g ? JsonValue::integer(*g) : JsonValue::null());
        }
        o.set("cohorts", std::move(cohorts));
        JsonValue pi = JsonValue::object();
        for (std::size_t u = 0; u < ds_->n_units(); ++u) {
            pi.set(ds_->unit_levels()[u], JsonValue::real(truth_->pi_unit[u]));
        }
        o.set("assignment_probability", std::move(pi));
        return o.dump();
    }

    std::string dims_detail() const {
        return std::to_string(ds_->n_rows()) + " rows, " + std::to_string(ds_->n_units()) +
               " units, " + std::to_string(ds_->n_periods()) + " periods";
    }

    std::string step_validate() {
        JsonValue o = JsonValue::object();
        o.set("n_rows", JsonValue::integer(static_cast<long long>(vreport_.n_rows)));
        o.set("n_units", JsonValue::integer(static_cast<long long>(vreport_.n_units)));
        o.set("n_periods", JsonValue::integer(static_cast<long long>(vreport_.n_periods)));
        o.set("balanced", JsonValue::boolean(vreport_.balanced));
        o.set("dropped_rows", JsonValue::integer(static_cast<long long>(vreport_.dropped_rows)));
        JsonValue reasons = JsonValue::object();
        for (const auto& [why, n] : vreport_.drop_reasons) {
            reasons.set(why, JsonValue::integer(static_cast<long long>(n)));
        }
        o.set("drop_reasons", std::move(reasons));
        JsonValue zv = JsonValue::array();
        for (const auto& c : vreport_.zero_variance_columns) zv.push_back(JsonValue::string(c));
        o.set("zero_variance_columns", std::move(zv));
        JsonValue roles = JsonValue::object();
        for (const auto& [role, col] : ds_->roles.named_roles()) roles.set(role, JsonValue::string(col));
        o.set("roles", std::move(roles));
        JsonValue coh = JsonValue::null();
        try {
            const CohortMap& cm = cohorts();
            coh = JsonValue::object();
            coh.set("treated", JsonValue::integer(static_cast<long long>(cm.size() - cm.never_count())));
            coh.set("never_treated", JsonValue::integer(static_cast<long long>(cm.never_count())));
        } catch (const Error&) {
            // no cohort source configured; validation still reports the panel shape
        }
        o.set("cohorts", std::move(coh));
        JsonValue warn = JsonValue::array();
        for (const auto& w : vreport_.warnings) warn.push_back(JsonValue::string(w));
        o.set("warnings", std::move(warn));
        out_.emit("validate.json", o.dump());
        out_.section("validate");
        out_.line(dims_detail() + (vreport_.balanced ? ", balanced" : ", unbalanced"));
        return dims_detail();
    }

    std::string step_describe() {
        DescribeTable t = describe(*ds_, role_vars());
        CsvTable csv;
        csv.header = {"variable", "n", "mean", "sd", "min", "max"};
        for (const auto& r : t.rows) {
            csv.rows.push_back({r.name, std::to_string(r.n), csv_cell(r.mean), csv_cell(r.sd),
                                csv_cell(r.min), csv_cell(r.max)});
        }
        out_.emit("describe.csv", write_csv(csv));
        out_.section("describe");
        out_.line(std::to_string(t.rows.size()) + " variables summarized (describe.csv)");
        return std::to_string(t.rows.size()) + " variables";
    }

    std::string step_corr() {
        CorrelationResult c = correlation_matrix(*ds_, role_vars());
        CsvTable csv;
        csv.header.push_back("variable");
        for (const auto& v : c.vars) csv.header.push_back(v);
        for (std::size_t i = 0; i < c.vars.size(); ++i) {
            std::vector<std::string> row{c.vars[i]};
            for (std::size_t j = 0; j < c.vars.size(); ++j) {
                const double r = c.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                row.push_back(is_missing(r) ? std::string() : format_double(r) + c.stars[i][j]);
            }
            csv.rows.push_back(std::move(row));
        }
        out_.emit("corr.csv", write_csv(csv));
        out_.section("correlation");
        out_.line(std::to_string(c.vars.size()) + "x" + std::to_string(c.vars.size()) +
                  " Pearson matrix with significance stars (corr.csv)");
        return std::to_string(c.vars.size()) + " variables";
    }

    std::string step_vif() {
        if (ds_->roles.covariates.empty()) {
            throw ConfigError("vif needs covariates; set roles.covariates");
        }
        VifTable t = vif(*ds_, ds_->roles.covariates);
        CsvTable csv;
        csv.header = {"variable", "vif", "reciprocal"};
        for (const auto& r : t.rows) {
            csv.rows.push_back({r.name, csv_cell(r.vif), csv_cell(r.reciprocal)});
        }
        csv.rows.push_back({"(mean)", csv_cell(t.mean_vif), ""});
        out_.emit("vif.csv", write_csv(csv));
        out_.section("vif");
        out_.line("mean VIF " + JsonValue::format_real(t.mean_vif) + " over " +
                  std::to_string(t.rows.size()) + " regressors (vif.csv)");
        return "mean VIF " + JsonValue::format_real(t.mean_vif);
    }

    std::string step_pca() {
        if (ds_->roles.covariates.empty()) {
            throw ConfigError("pca needs covariates; set roles.covariates");
        }
        PcaResult p = pca(*ds_, ds_->roles.covariates);
        const Eigen::Index np = static_cast<Eigen::Index>(p.vars.size());
        CsvTable loadings;
        loadings.header.push_back("variable");
        for (Eigen::Index j = 0; j < np; ++j) loadings.header.push_back("pc" + std::to_string(j + 1));
        for (Eigen::Index i = 0; i < np; ++i) {
            std::vector<std::string> row{p.vars[static_cast<std::size_t>(i)]};
            for (Eigen::Index j = 0; j < np; ++j) row.push_back(csv_cell(p.loadings(i, j)));
            loadings.rows.push_back(std::move(row));
        }
        std::vector<std::string> eig{"(eigenvalue)"};
        for (Eigen::Index j = 0; j < np; ++j) eig.push_back(csv_cell(p.eigenvalues(j)));
        loadings.rows.push_back(std::move(eig));
        out_.emit("pca_loadings.csv", write_csv(loadings));

        CsvTable scores;
        scores.header.push_back("row");
        for (int j = 0; j < p.retained; ++j) scores.header.push_back("pc" + std::to_string(j + 1));
        for (std::size_t i = 0; i < p.score_rows.size(); ++i) {
            std::vector<std::string> row{std::to_string(p.score_rows[i] + 1)};
            for (int j = 0; j < p.retained; ++j) {
                row.push_back(csv_cell(p.scores(static_cast<Eigen::Index>(i), j)));
            }
            scores.rows.push_back(std::move(row));
        }
        out_.emit("pca_scores.csv", write_csv(scores));

        JsonValue k = JsonValue::object();
        k.set("overall", JsonValue::real(p.kmo_overall));
        JsonValue per = JsonValue::object();
        for (std::size_t i = 0; i < p.vars.size(); ++i) {
            per.set(p.vars[i], JsonValue::real(p.kmo_per_variable(static_cast<Eigen::Index>(i))));
        }
        k.set("per_variable", std::move(per));
        k.set("retained", JsonValue::integer(p.retained));
        JsonValue ev = JsonValue::array();
        for (Eigen::Index j = 0; j < np; ++j) ev.push_back(JsonValue::real(p.eigenvalues(j)));
        k.set("eigenvalues", std::move(ev));
        JsonValue warn = JsonValue::array();
        for (const auto& w : p.warnings) warn.push_back(JsonValue::string(w));
        k.set("warnings", std::move(warn));
        out_.emit("kmo.json", k.dump());

        out_.section("pca");
        out_.line(std::to_string(p.retained) + " of " + std::to_string(p.vars.size()) +
                  " components retained; KMO " + JsonValue::format_real(p.kmo_overall) +
                  " (pca_loadings.csv, pca_scores.csv, kmo.json)");
        return std::to_string(p.retained) + " components retained, KMO " +
               JsonValue::format_real(p.kmo_overall);
    }

    std::vector<std::string> twfe_regressors() const {
        if (ds_->roles.treatment.empty()) {
            throw ConfigError("twfe needs a treatment role; set roles.treatment");
        }
        std::vector<std::string> regs{ds_->roles.treatment};
        for (const auto& c : ds_->roles.covariates) regs.push_back(c);
        return regs;
    }

    std::string step_twfe() {
        if (ds_->roles.outcome.empty()) {
            throw ConfigError("twfe needs an outcome role; set roles.outcome");
        }
        TwfeResult t = estimate_twfe(*ds_, ds_->roles.outcome, twfe_regressors(), ds_->roles.cluster);
        JsonValue o = JsonValue::object();
        JsonValue rows = JsonValue::array();
        for (const auto& r : t.rows) rows.push_back(twfe_row_json(r));
        o.set("rows", std::move(rows));
        o.set("n_obs", JsonValue::integer(static_cast<long long>(t.n_obs)));
        o.set("n_clusters", JsonValue::integer(static_cast<long long>(t.n_clusters)));
        o.set("df", df_json(t.df));
        o.set("demean_iterations", JsonValue::integer(t.demean_iterations));
        o.set("absorbed_units", JsonValue::integer(static_cast<long long>(t.absorbed_units)));
        o.set("absorbed_periods", JsonValue::integer(static_cast<long long>(t.absorbed_periods)));
        out_.emit("twfe.json", o.dump());
        const TwfeRow& d = t.rows.front();
        out_.section("twfe");
        out_.line(inference_line(d.coef, d.se, d.t, d.p, d.ci_low, d.ci_high, t.df) + " (twfe.json)");
        return "theta=" + JsonValue::format_real(d.coef) + ", se=" + JsonValue::format_real(d.se);
    }

    std::string step_dml() {
        DmlPipeline pipe = pipeline();
        ResidualizedPanel res = residualize_pipeline(*ds_, pipe);
        EstimateResult e = estimate_plr(res);
        out_.emit("estimates.json", estimate_to_json(e).dump());
        out_.emit("residuals.csv", write_csv(residuals_to_csv(*ds_, res)));
        out_.section("dml");
        out_.line(inference_line(e.theta, e.se, e.statistic, e.p_value, e.ci_low, e.ci_high, e.df) +
                  " (estimates.json)");
        for (const auto& w : e.warnings) out_.line("warning: " + w);
        return "theta=" + JsonValue::format_real(e.theta) + ", se=" + JsonValue::format_real(e.se);
    }

    std::string step_iv_dml() {
        if (ds_->roles.instrument.empty()) {
            throw ConfigError("iv-dml needs an instrument role; set roles.instrument");
        }
        DmlPipeline pipe = pipeline(true);
        EstimateResult e = run_dml(*ds_, pipe);
        out_.emit("estimates_iv.json", estimate_to_json(e, true).dump());
        out_.section("iv-dml");
        out_.line(inference_line(e.theta, e.se, e.statistic, e.p_value, e.ci_low, e.ci_high, e.df) +
                  " (estimates_iv.json)");
        out_.line("first-stage t " + JsonValue::format_real(e.first_stage_t) +
                  (e.weak_instrument ? " (weak instrument)" : ""));
        for (const auto& w : e.warnings) out_.line("warning: " + w);
        return "theta=" + JsonValue::format_real(e.theta) + ", first-stage t=" +
               JsonValue::format_real(e.first_stage_t);
    }

    std::string step_event_study() {
        EventStudyResult es = event_study(*ds_, cohorts(), ds_->roles.covariates, cfg_.event_floor,
                                          cfg_.event_reference, ds_->roles.cluster);
        CsvTable csv;
        csv.header = {"relative_time", "coef", "se", "ci_low", "ci_high"};
        for (const auto& r : es.rows) {
            csv.rows.push_back({std::to_string(r.relative_time), csv_cell(r.coef), csv_cell(r.se),
                                csv_cell(r.ci_low), csv_cell(r.ci_high)});
        }
        out_.emit("event_study.csv", write_csv(csv));
        out_.section("event study");
        out_.line(std::to_string(es.rows.size()) + " relative-time coefficients, reference " +
                  std::to_string(es.reference) + ", floor " + std::to_string(es.floor_bin) +
                  " (event_study.csv)");
        return std::to_string(es.rows.size()) + " coefficients";
    }

    std::string step_placebo() {
        PlaceboResult p = placebo_permutation(*ds_, cohorts(), pipeline(), cfg_.placebo_reps,
                                              cfg_.placebo_seed, opts_.observation_placebo,
                                              opts_.threads);
        CsvTable csv;
        csv.header = {"rep", "theta"};
        for (std::size_t i = 0; i < p.thetas.size(); ++i) {
            csv.rows.push_back({std::to_string(i + 1), csv_cell(p.thetas[i])});
        }
        out_.emit("placebo.csv", write_csv(csv));
        KdeResult kde = gaussian_kde(p.thetas);
        CsvTable dens;
        dens.header = {"grid", "density"};
        for (std::size_t i = 0; i < kde.grid.size(); ++i) {
            dens.rows.push_back({csv_cell(kde.grid[i]), csv_cell(kde.density[i])});
        }
        out_.emit("placebo_density.csv", write_csv(dens));
        JsonValue o = JsonValue::object();
        o.set("observed_theta", JsonValue::real(p.observed_theta));
        o.set("p_value", JsonValue::real(p.p_value));
        o.set("reps", JsonValue::integer(p.reps));
        o.set("failures", JsonValue::integer(p.failures));
        o.set("seed", JsonValue::integer(static_cast<long long>(p.seed)));
        o.set("scheme", JsonValue::string(p.scheme));
        out_.emit("placebo.json", o.dump());
        out_.section("placebo");
        out_.line("permutation p=" + JsonValue::format_real(p.p_value) + " over " +
                  std::to_string(p.reps) + " reps, observed theta " +
                  JsonValue::format_real(p.observed_theta) +
                  " (placebo.csv, placebo_density.csv, placebo.json)");
        return "p=" + JsonValue::format_real(p.p_value) + " (" + std::to_string(p.reps) + " reps)";
    }

    std::string step_counterfactual() {
        CounterfactualResult c = counterfactual_timing(*ds_, cohorts(), pipeline(),
                                                       cfg_.placebo_reps, cfg_.placebo_seed,
                                                       opts_.threads);
        CsvTable csv;
        csv.header = {"rep", "theta"};
        for (std::size_t i = 0; i < c.thetas.size(); ++i) {
            csv.rows.push_back({std::to_string(i + 1), csv_cell(c.thetas[i])});
        }
        out_.emit("counterfactual.csv", write_csv(csv));
        CsvTable dens;
        dens.header = {"grid", "density"};
        for (std::size_t i = 0; i < c.grid.size(); ++i) {
            dens.rows.push_back({csv_cell(c.grid[i]), csv_cell(c.density[i])});
        }
        out_.emit("counterfactual_density.csv", write_csv(dens));
        JsonValue o = JsonValue::object();
        o.set("observed_theta", JsonValue::real(c.observed_theta));
        o.set("mean", JsonValue::real(c.mean));
        o.set("sd", JsonValue::real(c.sd));
        o.set("bandwidth", JsonValue::real(c.bandwidth));
        o.set("observed_percentile", JsonValue::real(c.observed_percentile));
        o.set("p_two_sided", JsonValue::real(c.p_two_sided));
        o.set("reps", JsonValue::integer(c.reps));
        o.set("failures", JsonValue::integer(c.failures));
        o.set("seed", JsonValue::integer(static_cast<long long>(c.seed)));
        out_.emit("counterfactual.json", o.dump());
        out_.section("counterfactual timing");
        out_.line("observed theta at percentile " + JsonValue::format_real(c.observed_percentile) +
                  ", two-sided p=" + JsonValue::format_real(c.p_two_sided) +
                  " (counterfactual.csv, counterfactual_density.csv, counterfactual.json)");
        return "percentile " + JsonValue::format_real(c.observed_percentile);
    }

    std::string step_sensitivity() {
        SensitivityTable t = sensitivity_scan(*ds_, pipeline(), cfg_.sensitivity_folds,
                                              cfg_.sensitivity_learners);
        CsvTable csv;
        csv.header = {"descriptor", "ok", "theta", "se", "p_value", "error"};
        std::size_t ok = 0;
        for (const auto& r : t.rows) {
            if (r.ok) ++ok;
            csv.rows.push_back({r.descriptor, r.ok ? "true" : "false",
                                r.ok ? csv_cell(r.estimate.theta) : "",
                                r.ok ? csv_cell(r.estimate.se) : "",
                                r.ok ? csv_cell(r.estimate.p_value) : "", r.error});
        }
        out_.emit("sensitivity.csv", write_csv(csv));
        out_.section("sensitivity");
        out_.line(std::to_string(ok) + " of " + std::to_string(t.rows.size()) +
                  " variants estimated (sensitivity.csv)");
        return std::to_string(ok) + "/" + std::to_string(t.rows.size()) + " variants ok";
    }

    std::string step_moderate() {
        if (ds_->roles.moderator.empty()) {
            throw ConfigError("moderate needs a moderator role; set roles.moderator");
        }
        ModerationResult m = moderation(*ds_, ds_->roles.covariates, ds_->roles.cluster);
        JsonValue o = JsonValue::object();
        o.set("interaction", twfe_row_json(m.interaction));
        o.set("main", twfe_row_json(m.main));
        o.set("moderator", m.moderator ? twfe_row_json(*m.moderator) : JsonValue::null());
        o.set("moderator_absorbed", JsonValue::boolean(m.moderator_absorbed));
        o.set("n_obs", JsonValue::integer(static_cast<long long>(m.underlying.n_obs)));
        o.set("n_clusters", JsonValue::integer(static_cast<long long>(m.underlying.n_clusters)));
        o.set("df", df_json(m.underlying.df));
        out_.emit("moderation.json", o.dump());
        out_.section("moderation");
        out_.line("interaction " + inference_line(m.interaction.coef, m.interaction.se,
                                                  m.interaction.t, m.interaction.p,
                                                  m.interaction.ci_low, m.interaction.ci_high,
                                                  m.underlying.df) +
                  " (moderation.json)");
        return "interaction coef=" + JsonValue::format_real(m.interaction.coef);
    }

    std::string step_mediate() {
        if (ds_->roles.mediator.empty()) {
            throw ConfigError("mediate needs a mediator role; set roles.mediator");
        }
        MediationResult m = mediation(*ds_, ds_->roles.covariates, true, ds_->roles.cluster, 0,
                                      cfg_.seed);
        JsonValue o = JsonValue::object();
        o.set("total", path_estimate_json(m.total));
        o.set("a", path_estimate_json(m.a));
        o.set("b", path_estimate_json(m.b));
        o.set("direct", path_estimate_json(m.direct));
        o.set("indirect", JsonValue::real(m.indirect));
        o.set("sobel_se", JsonValue::real(m.sobel_se));
        o.set("statistic", JsonValue::real(m.statistic));
        o.set("p_value", JsonValue::real(m.p_value));
        o.set("ci_low", JsonValue::real(m.ci_low));
        o.set("ci_high", JsonValue::real(m.ci_high));
        o.set("fixed_effects", JsonValue::boolean(m.fixed_effects));
        o.set("bootstrap_se", m.bootstrap_se ? JsonValue::real(*m.bootstrap_se) : JsonValue::null());
        o.set("bootstrap_reps", JsonValue::integer(m.bootstrap_reps));
        o.set("seed", JsonValue::integer(static_cast<long long>(m.seed)));
        o.set("n_obs", JsonValue::integer(static_cast<long long>(m.n_obs)));
        o.set("n_clusters", JsonValue::integer(static_cast<long long>(m.n_clusters)));
        out_.emit("mediation.json", o.dump());
        out_.section("mediation");
        out_.line("indirect effect " + JsonValue::format_real(m.indirect) + ", Sobel p=" +
                  JsonValue::format_real(m.p_value) + " (mediation.json)");
        return "indirect=" + JsonValue::format_real(m.indirect) + ", p=" +
               JsonValue::format_real(m.p_value);
    }

    std::string step_subgroup() {
        if (cfg_.group_col.empty()) {
            throw ConfigError("subgroup needs a group column; set roles.group");
        }
        SubgroupComparison s = subgroup_compare(*ds_, cfg_.group_col, pipeline());
        JsonValue o = JsonValue::object();
        JsonValue groups = JsonValue::array();
        for (const auto& g : s.groups) {
            JsonValue gj = JsonValue::object();
            gj.set("label", JsonValue::string(g.label));
            gj.set("group_value", JsonValue::real(g.group_value));
            gj.set("n_units", JsonValue::integer(static_cast<long long>(g.n_units)));
            gj.set("estimate", estimate_to_json(g.estimate));
            groups.push_back(std::move(gj));
        }
        o.set("groups", std::move(groups));
        JsonValue pairs = JsonValue::array();
        for (const auto& p : s.pairs) {
            JsonValue pj = JsonValue::object();
            pj.set("a", JsonValue::string(p.label_a));
            pj.set("b", JsonValue::string(p.label_b));
            pj.set("delta", JsonValue::real(p.delta));
            pj.set("se", JsonValue::real(p.se));
            pj.set("statistic", JsonValue::real(p.z));
            pj.set("p_value", JsonValue::real(p.p));
            pairs.push_back(std::move(pj));
        }
        o.set("pairs", std::move(pairs));
        o.set("note", JsonValue::string(s.note));
        out_.emit("subgroups.json", o.dump());
        out_.section("subgroups");
        for (const auto& g : s.groups) {
            out_.line(g.label + ": " + inference_line(g.estimate.theta, g.estimate.se,
                                                      g.estimate.statistic, g.estimate.p_value,
                                                      g.estimate.ci_low, g.estimate.ci_high,
                                                      g.estimate.df));
        }
        out_.line("details in subgroups.json");
        return std::to_string(s.groups.size()) + " groups, " + std::to_string(s.pairs.size()) +
               " pairwise contrasts";
    }

    std::string step_simulate() {
        if (!simulated_) {
            throw ConfigError("simulate subcommand requires a [simulate] section");
        }
        out_.section("simulate");
        out_.line(dims_detail() + ", theta0 " + JsonValue::format_real(truth_->theta0) +
                  " (data.csv, truth.json)");
        return dims_detail();
    }

    RunConfig cfg_;
    RunOptions opts_;
    ReportBuilder& out_;
    std::optional<PanelDataset> ds_;
    std::optional<SimulatedTruth> truth_;
    bool simulated_ = false;
    ValidationReport vreport_;
    std::optional<CohortMap> cohorts_;
};

inline std::vector<std::string> steps_for(const std::string& subcommand) {
    if (subcommand == "all") {
        return {"validate", "describe", "corr",          "vif",     "pca",
                "twfe",     "dml",      "event-study",   "placebo", "counterfactual",
                "sensitivity", "iv-dml", "moderate",     "mediate", "subgroup"};
    }
    if (subcommand == "simulate") return {"simulate"};
    return {subcommand};
}

} // namespace detail

// Parses the config, resolves the output directory, runs the requested
// subcommand (or the full stage pipeline for `all`), and finalizes the
// bundle. `all` skips steps whose optional roles are absent and halts on the
// first hard error; standalone subcommands treat every error as hard.
inline RunResult run_command(const RunOptions& opts, std::ostream& log) {
    RunConfig cfg = load_config(opts.config_path);
    if (opts.seed_override) cfg.seed = *opts.seed_override;
    RunResult result;
    result.out_dir = resolve_out_dir(cfg, opts);
    ReportBuilder bundle{std::filesystem::path(result.out_dir)};
    detail::RunContext ctx(cfg, opts, bundle);

    const std::vector<std::string> steps = detail::steps_for(opts.subcommand);
    const bool run_all = opts.subcommand == "all";
    try {
        ctx.acquire_data();
    } catch (const Error& e) {
        result.exit_code = 1;
        result.first_error = std::string("load: ") + e.what();
        log << "failed   load: " << e.what() << "\n";
        return result;
    }

    for (const std::string& step : steps) {
        if (run_all) {
            const std::string reason = ctx.skip_reason(step);
            if (!reason.empty()) {
                bundle.step(step, "skipped", reason);
                log << "skipped  " << step << ": " << reason << "\n";
                continue;
            }
        }
        try {
            const std::string detail = ctx.run_step(step);
            bundle.step(step, "ok", detail);
            log << "ok       " << step << ": " << detail << "\n";
        } catch (const Error& e) {
            bundle.step(step, "failed", e.what());
            log << "failed   " << step << ": " << e.what() << "\n";
            result.exit_code = 1;
            result.first_error = step + ": " + e.what();
            break;
        }
    }
    if (result.exit_code == 0) {
        bundle.finalize(opts.subcommand, serialize_config(cfg));
        log << "wrote    " << (std::filesystem::path(result.out_dir) / "summary.md").string() << "\n";
    }
    result.steps = bundle.steps();
    result.files = bundle.names();
    return result;
}

} // namespace sdidml
