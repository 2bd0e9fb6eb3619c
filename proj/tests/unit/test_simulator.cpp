#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "sdidml/estimators.hpp"
#include "sdidml/simulator.hpp"

using namespace sdidml;

TEST_CASE("a fixed config regenerates byte-identical data") {
    DgpConfig cfg;
    cfg.n_units = 25;
    cfg.n_periods = 5;
    cfg.p_covariates = 4;
    cfg.cohort_periods = {3, 4};
    cfg.seed = 77;
    auto [a, ta] = generate_panel(cfg);
    auto [b, tb] = generate_panel(cfg);
    REQUIRE(panel_to_csv(a) == panel_to_csv(b));
    REQUIRE(ta.cohort_of_unit == tb.cohort_of_unit);
    REQUIRE(ta.pi_unit == tb.pi_unit);
    REQUIRE(ta.g_obs == tb.g_obs);
}

TEST_CASE("feature switches do not disturb unrelated draws") {
    DgpConfig cfg;
    cfg.n_units = 30;
    cfg.n_periods = 4;
    cfg.p_covariates = 3;
    cfg.cohort_periods = {2, 3};
    cfg.seed = 5;
    auto [plain, tp] = generate_panel(cfg);

    DgpConfig with_z = cfg;
    with_z.with_instrument = true;
    with_z.instrument_strength = 2.0;
    auto [ivp, ti] = generate_panel(with_z);

    // The instrument switch feeds the assignment index (so cohorts and y may
    // move), but the underlying covariate draws are shared.
    REQUIRE(plain.col("x1") == ivp.col("x1"));
    REQUIRE(plain.col("x3") == ivp.col("x3"));
    REQUIRE(ivp.has_column("z"));
    REQUIRE_FALSE(plain.has_column("z"));
    REQUIRE(ivp.roles.instrument == "z");

    // Emitting the column at zero strength activates the same index term as a
    // strong instrument: everything except the z column itself coincides.
    DgpConfig weak = with_z;
    weak.instrument_strength = 4.0;
    auto [strong, ts] = generate_panel(weak);
    REQUIRE(ti.cohort_of_unit == ts.cohort_of_unit);
    REQUIRE(ivp.col("y") == strong.col("y"));
    REQUIRE(ivp.col("d") == strong.col("d"));
    REQUIRE(ivp.col("z") != strong.col("z"));
}

TEST_CASE("zero-effect noiseless linear outcome is exactly the nuisance") {
    DgpConfig cfg;
    cfg.n_units = 60;
    cfg.n_periods = 4;
    cfg.p_covariates = 5;
    cfg.cohort_periods = {2, 3};
    cfg.theta0 = 0.0;
    cfg.noise_sd = 0.0;
    cfg.fe_sd = 0.0;
    cfg.seed = 12;
    auto [ds, truth] = generate_panel(cfg);
    const std::vector<double>& y = ds.col("y");
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        REQUIRE(y[i] == truth.g_obs[i]);
    }

    DmlPipeline pipe;
    pipe.learner_y = LearnerSpec::of(LearnerKind::ols);
    pipe.learner_d = LearnerSpec::of(LearnerKind::ols);
    pipe.folds = 4;
    pipe.seed = 3;
    EstimateResult est = run_dml(ds, pipe);
    REQUIRE(std::fabs(est.theta) < 1e-10);
}

TEST_CASE("treatment column follows the drawn cohorts") {
    DgpConfig cfg;
    cfg.n_units = 40;
    cfg.n_periods = 6;
    cfg.p_covariates = 2;
    cfg.cohort_periods = {3, 5};
    cfg.seed = 9;
    auto [ds, truth] = generate_panel(cfg);
    const std::vector<double>& d = ds.col("d");
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        const auto g = truth.cohort_of_unit[static_cast<std::size_t>(ds.unit_idx(i))];
        const bool on = g.has_value() && ds.period(i) >= *g;
        REQUIRE(d[i] == (on ? 1.0 : 0.0));
        if (g) REQUIRE((*g == 3 || *g == 5));
    }
}

TEST_CASE("assignment probabilities respect the overlap floor and ceiling") {
    DgpConfig cfg;
    cfg.n_units = 300;
    cfg.n_periods = 4;
    cfg.p_covariates = 6;
    cfg.cohort_periods = {2, 3};
    cfg.confounded_assignment = true;
    cfg.endogeneity = 0.5;
    cfg.seed = 31;
    auto [ds, truth] = generate_panel(cfg);
    double lo = 1.0, hi = 0.0;
    for (double pi : truth.pi_unit) {
        REQUIRE(pi >= 0.05);
        REQUIRE(pi <= 0.95);
        lo = std::min(lo, pi);
        hi = std::max(hi, pi);
    }
    REQUIRE(hi > lo);  // the index actually moves the probabilities

    DgpConfig flat = cfg;
    flat.confounded_assignment = false;
    flat.endogeneity = 0.0;
    auto [ds2, t2] = generate_panel(flat);
    for (double pi : t2.pi_unit) REQUIRE(pi == 1.0 - flat.never_share);
}

TEST_CASE("an all-never panel cannot be residualized") {
    DgpConfig cfg;
    cfg.n_units = 20;
    cfg.n_periods = 4;
    cfg.p_covariates = 2;
    cfg.cohort_periods = {2, 3};
    cfg.never_share = 0.999;
    cfg.seed = 4;
    auto [ds, truth] = generate_panel(cfg);
    for (const auto& g : truth.cohort_of_unit) REQUIRE_FALSE(g.has_value());

    DmlPipeline pipe;
    pipe.learner_y = LearnerSpec::of(LearnerKind::mean);
    pipe.learner_d = LearnerSpec::of(LearnerKind::mean);
    pipe.folds = 2;
    REQUIRE_THROWS_AS(run_dml(ds, pipe), NoResidualTreatmentVariation);
}

TEST_CASE("invalid configurations are rejected up front") {
    DgpConfig ok;
    ok.n_units = 10;
    ok.n_periods = 4;
    ok.p_covariates = 4;
    ok.cohort_periods = {2};

    DgpConfig c = ok;
    c.n_units = 1;
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.never_share = 1.0;
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.cohort_periods = {1};
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.cohort_periods = {5};
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.cohort_periods = {};
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.endogeneity = 1.0;
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.noise_sd = -0.5;
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
    c = ok;
    c.nonlinearity = DgpForm::nonlinear;
    c.p_covariates = 3;
    REQUIRE_THROWS_AS(generate_panel(c), ConfigInvalid);
}

TEST_CASE("period dummies one-hot the non-base periods") {
    DgpConfig cfg;
    cfg.n_units = 8;
    cfg.n_periods = 3;
    cfg.p_covariates = 2;
    cfg.cohort_periods = {2};
    cfg.seed = 2;
    auto [ds, truth] = generate_panel(cfg);
    const std::size_t before = ds.roles.covariates.size();
    add_period_dummies(ds);
    REQUIRE(ds.roles.covariates.size() == before + 2);
    REQUIRE(ds.has_column("pd_2"));
    REQUIRE(ds.has_column("pd_3"));
    REQUIRE_FALSE(ds.has_column("pd_1"));
    double sum2 = 0.0, sum3 = 0.0;
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        sum2 += ds.col("pd_2")[i];
        sum3 += ds.col("pd_3")[i];
        if (ds.period(i) == 2) REQUIRE(ds.col("pd_2")[i] == 1.0);
        if (ds.period(i) == 1) {
            REQUIRE(ds.col("pd_2")[i] == 0.0);
            REQUIRE(ds.col("pd_3")[i] == 0.0);
        }
    }
    REQUIRE(sum2 == 8.0);
    REQUIRE(sum3 == 8.0);
}

TEST_CASE("monte carlo accounting identities hold") {
    DgpConfig cfg;
    cfg.n_units = 40;
    cfg.n_periods = 4;
    cfg.p_covariates = 3;
    cfg.cohort_periods = {2, 3};
    cfg.seed = 21;

    McEstimatorSpec plr;
    plr.method = McMethod::plr;
    plr.learner = LearnerSpec::of(LearnerKind::ols);
    plr.folds = 3;
    McEstimatorSpec naive;
    naive.method = McMethod::naive;
    McEstimatorSpec twfe;
    twfe.method = McMethod::twfe;

    MonteCarloReport rep = run_monte_carlo(cfg, {plr, naive, twfe}, 20);
    REQUIRE(rep.reps == 20);
    REQUIRE(rep.arms.size() == 3);
    REQUIRE(rep.arms[0].name == "plr_ols_k3");
    REQUIRE(rep.arms[1].name == "naive_ols");
    REQUIRE(rep.arms[2].name == "twfe");
    for (const McArmReport& arm : rep.arms) {
        REQUIRE(arm.reps_ok + arm.failures == 20);
        REQUIRE(arm.coverage >= 0.0);
        REQUIRE(arm.coverage <= 1.0);
        const double identity = arm.mean_bias * arm.mean_bias + arm.sd * arm.sd;
        REQUIRE(arm.rmse * arm.rmse == Catch::Approx(identity).epsilon(0).margin(1e-10));
    }

    // bit-identical across repeat runs and worker counts
    MonteCarloReport again = run_monte_carlo(cfg, {plr, naive, twfe}, 20, 4);
    for (std::size_t s = 0; s < rep.arms.size(); ++s) {
        REQUIRE(rep.arms[s].mean_bias == again.arms[s].mean_bias);
        REQUIRE(rep.arms[s].rmse == again.arms[s].rmse);
        REQUIRE(rep.arms[s].coverage == again.arms[s].coverage);
    }
}

TEST_CASE("a single rep collapses the error decomposition") {
    DgpConfig cfg;
    cfg.n_units = 30;
    cfg.n_periods = 4;
    cfg.p_covariates = 3;
    cfg.cohort_periods = {2, 3};
    cfg.seed = 6;
    McEstimatorSpec plr;
    plr.learner = LearnerSpec::of(LearnerKind::ols);
    plr.folds = 3;
    MonteCarloReport rep = run_monte_carlo(cfg, {plr}, 1);
    REQUIRE(rep.arms[0].reps_ok == 1);
    REQUIRE(rep.arms[0].sd == 0.0);
    REQUIRE(rep.arms[0].rmse == Catch::Approx(std::fabs(rep.arms[0].mean_bias)).epsilon(0).margin(1e-15));
}

TEST_CASE("persistent failures abort the report") {
    DgpConfig cfg;
    cfg.n_units = 15;
    cfg.n_periods = 4;
    cfg.p_covariates = 2;
    cfg.cohort_periods = {2, 3};
    cfg.never_share = 0.999;  // essentially no treated units in any rep
    cfg.seed = 13;
    McEstimatorSpec plr;
    plr.learner = LearnerSpec::of(LearnerKind::mean);
    plr.folds = 2;
    REQUIRE_THROWS_AS(run_monte_carlo(cfg, {plr}, 10), TooManyFailedReps);
    REQUIRE_THROWS_AS(run_monte_carlo(cfg, {}, 10), ConfigInvalid);
    REQUIRE_THROWS_AS(run_monte_carlo(cfg, {plr}, 0), ConfigInvalid);
}
