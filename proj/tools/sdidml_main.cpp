#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdidml/report.hpp"

namespace {

const std::vector<std::pair<std::string, std::string>> kSubcommands = {
    {"validate", "Load the panel, validate roles, and report its shape"},
    {"describe", "Per-variable summary statistics"},
    {"corr", "Pearson correlation matrix with significance stars"},
    {"vif", "Variance inflation factors for the covariates"},
    {"pca", "Principal components of the covariates with KMO adequacy"},
    {"twfe", "Two-way fixed effects benchmark regression"},
    {"dml", "Cross-fitted partially linear estimate of the treatment effect"},
    {"iv-dml", "Instrumented cross-fitted estimate"},
    {"event-study", "Dynamic effects by relative adoption time"},
    {"placebo", "Permutation placebo distribution and p-value"},
    {"counterfactual", "Randomized-adoption-timing distribution"},
    {"sensitivity", "Estimate stability across fold counts and learners"},
    {"moderate", "Treatment-by-moderator interaction"},
    {"mediate", "Three-equation mediation decomposition"},
    {"subgroup", "Per-group estimates and pairwise contrasts"},
    {"simulate", "Generate a synthetic panel and its ground truth"},
    {"all", "Full pipeline: diagnostics, estimates, robustness, mechanisms"},
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sdidml: structural difference-in-differences with machine-learned nuisances"};
    app.set_version_flag("--version", std::string(sdidml::kToolVersion));
    app.require_subcommand(1);

    sdidml::RunOptions opts;
    std::int64_t seed_val = 0;
    std::vector<std::string> flags;
    app.add_option("--config", opts.config_path, "Run configuration file")->required();
    app.add_option("--out", opts.out_override,
                   "Output directory (beats SDIDML_OUT and the config [output] dir)");
    CLI::Option* seed_opt = app.add_option("--seed", seed_val, "Override the [dml] seed");
    app.add_option("--threads", opts.threads, "Worker count; never changes results")
        ->check(CLI::PositiveNumber);
    app.add_option("--flag", flags,
                   "Replication mode: observation-folds or observation-placebo (repeatable)");

    for (const auto& [name, help] : kSubcommands) {
        // lets --config etc. appear after the subcommand name
        app.add_subcommand(name, help)->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);

    for (const std::string& f : flags) {
        if (f == "observation-folds") {
            opts.observation_folds = true;
        } else if (f == "observation-placebo") {
            opts.observation_placebo = true;
        } else {
            std::cerr << "error: unknown --flag '" << f
                      << "' (expected observation-folds or observation-placebo)\n";
            return 2;
        }
    }
    if (seed_opt->count() > 0) {
        if (seed_val < 0) {
            std::cerr << "error: --seed must be non-negative\n";
            return 2;
        }
        opts.seed_override = static_cast<std::uint64_t>(seed_val);
    }
    opts.subcommand = app.get_subcommands().front()->get_name();

    try {
        sdidml::RunResult result = sdidml::run_command(opts, std::cout);
        if (result.exit_code != 0) {
            std::cerr << "error: " << result.first_error << "\n";
        }
        return result.exit_code;
    } catch (const sdidml::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
