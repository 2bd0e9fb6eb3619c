#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sdidml/estimators.hpp"
#include "sdidml/rng.hpp"
#include "sdidml/simulator.hpp"

using namespace sdidml;

namespace {

ResidualizedPanel make_res(std::vector<double> y, std::vector<double> d,
                           std::vector<int> clusters,
                           std::optional<std::vector<double>> z = std::nullopt) {
    ResidualizedPanel res;
    const std::size_t n = y.size();
    res.y_res = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
    res.d_res = Eigen::Map<Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(n));
    if (z) {
        res.z_res = Eigen::Map<Eigen::VectorXd>(z->data(), static_cast<Eigen::Index>(n));
        res.z_learner = "mean";
    }
    res.cluster_of_row = std::move(clusters);
    res.fold_of_row.assign(n, 0);
    res.row_index.resize(n);
    res.y_learner = "mean";
    res.d_learner = "mean";
    res.folds = 2;
    res.seed = 7;
    return res;
}

std::vector<int> singletons(std::size_t n) {
    std::vector<int> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<int>(i);
    return c;
}

// Independent Student-t upper tail by Simpson integration of the density.
double t_two_sided_p_numeric(double t, double df) {
    const double a = 0.0, b = std::fabs(t);
    const int steps = 40000;  // even
    const double h = (b - a) / steps;
    auto pdf = [df](double x) {
        const double c = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                         0.5 * std::log(df * M_PI);
        return std::exp(c - (df + 1.0) / 2.0 * std::log1p(x * x / df));
    };
    double sum = pdf(a) + pdf(b);
    for (int i = 1; i < steps; ++i) sum += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
    const double integral = sum * h / 3.0;
    return 1.0 - 2.0 * integral;
}

PanelDataset grid_panel(int n_units, int n_periods,
                        const std::vector<std::string>& names,
                        const std::vector<std::vector<double>>& cols) {
    std::vector<std::string> units;
    std::vector<int> periods;
    for (int u = 0; u < n_units; ++u) {
        for (int t = 1; t <= n_periods; ++t) {
            units.push_back("u" + std::to_string(u));
            periods.push_back(t);
        }
    }
    return PanelDataset::create(units, periods, names, cols);
}

} // namespace

TEST_CASE("inference summary reproduces the reference triplets") {
    // moderate z
    Inference a = summarize_inference(-0.0085482, 0.0521965, kNormalDf);
    REQUIRE(a.statistic == Catch::Approx(-0.1637696).epsilon(0).margin(5e-8));
    REQUIRE(a.p_value == Catch::Approx(0.8699125).epsilon(0).margin(5e-8));
    REQUIRE(a.ci_low == Catch::Approx(-0.1108515).epsilon(0).margin(5e-8));
    REQUIRE(a.ci_high == Catch::Approx(0.0937551).epsilon(0).margin(5e-8));

    // large z, tiny p
    Inference b = summarize_inference(0.1507175, 0.0269503, kNormalDf);
    REQUIRE(b.statistic == Catch::Approx(5.5924238).epsilon(0).margin(5e-7));
    REQUIRE(b.p_value == Catch::Approx(2.239214e-08).epsilon(1e-6));
    REQUIRE(b.ci_low == Catch::Approx(0.0978959).epsilon(0).margin(5e-8));
    REQUIRE(b.ci_high == Catch::Approx(0.2035391).epsilon(0).margin(5e-8));

    // Student t with 281 degrees of freedom
    Inference c = summarize_inference(-0.0477265, 0.0927761, 281);
    REQUIRE(c.statistic == Catch::Approx(-0.5144267).epsilon(0).margin(5e-8));
    REQUIRE(c.p_value == Catch::Approx(0.6073581).epsilon(0).margin(5e-8));
    REQUIRE(c.ci_low == Catch::Approx(-0.2303509).epsilon(0).margin(5e-8));
    REQUIRE(c.ci_high == Catch::Approx(0.1348979).epsilon(0).margin(5e-8));
}

TEST_CASE("p-values agree with independent density computations") {
    Inference n1 = summarize_inference(0.37, 0.21, kNormalDf);
    const double z = 0.37 / 0.21;
    REQUIRE(n1.p_value == Catch::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(0).margin(1e-6));

    for (int df : {3, 12, 281}) {
        Inference t = summarize_inference(-0.9, 0.65, df);
        REQUIRE(t.p_value ==
                Catch::Approx(t_two_sided_p_numeric(t.statistic, df)).epsilon(0).margin(1e-6));
    }
}

TEST_CASE("proportional residuals give an exact slope and zero variance") {
    ResidualizedPanel res = make_res({2, -2, 4}, {1, -1, 2}, singletons(3));
    EstimateResult est = estimate_plr(res);
    REQUIRE(est.theta == 2.0);
    REQUIRE(est.se == 0.0);
    REQUIRE(est.n_obs == 3);
    REQUIRE(est.n_clusters == 3);
    REQUIRE(est.method == "dml_plr");
    REQUIRE(est.learners == "mean/mean");
    REQUIRE(est.df == kNormalDf);
}

TEST_CASE("orthogonal residuals give a zero slope") {
    ResidualizedPanel res = make_res({1, 1}, {1, -1}, singletons(2));
    REQUIRE(estimate_plr(res).theta == 0.0);
}

TEST_CASE("plr equals the no-intercept least-squares slope") {
    Rng rng(15);
    const int n = 50;
    std::vector<double> y(n), d(n);
    for (int i = 0; i < n; ++i) {
        d[i] = rng.normal();
        y[i] = 1.3 * d[i] + rng.normal();
    }
    ResidualizedPanel res = make_res(y, d, singletons(n));
    EstimateResult est = estimate_plr(res);
    Eigen::MatrixXd D(n, 1);
    D.col(0) = res.d_res;
    const double lstsq = D.colPivHouseholderQr().solve(res.y_res)(0);
    REQUIRE(est.theta == Catch::Approx(lstsq).epsilon(0).margin(1e-12));
}

TEST_CASE("scaling residuals rescales the estimate but not the test") {
    Rng rng(29);
    const int n = 60;
    std::vector<double> y(n), d(n);
    std::vector<int> cl(n);
    for (int i = 0; i < n; ++i) {
        d[i] = rng.normal();
        y[i] = 0.8 * d[i] + rng.normal();
        cl[i] = i % 12;
    }
    EstimateResult base = estimate_plr(make_res(y, d, cl));

    const double a = 3.7;
    std::vector<double> ys = y;
    for (double& v : ys) v *= a;
    EstimateResult sy = estimate_plr(make_res(ys, d, cl));
    REQUIRE(sy.theta == Catch::Approx(a * base.theta).epsilon(1e-12));
    REQUIRE(sy.se == Catch::Approx(a * base.se).epsilon(1e-12));
    REQUIRE(sy.statistic == Catch::Approx(base.statistic).epsilon(1e-12));
    REQUIRE(sy.p_value == Catch::Approx(base.p_value).epsilon(1e-10));

    std::vector<double> dsc = d;
    for (double& v : dsc) v *= a;
    EstimateResult sd = estimate_plr(make_res(y, dsc, cl));
    REQUIRE(sd.theta == Catch::Approx(base.theta / a).epsilon(1e-12));
    REQUIRE(sd.se == Catch::Approx(base.se / a).epsilon(1e-12));
    REQUIRE(sd.statistic == Catch::Approx(base.statistic).epsilon(1e-12));
}

TEST_CASE("singleton clusters reduce to the heteroskedasticity-robust form") {
    Rng rng(41);
    const int n = 25;
    std::vector<double> y(n), d(n);
    for (int i = 0; i < n; ++i) {
        d[i] = rng.normal();
        y[i] = 0.5 * d[i] + rng.normal();
    }
    ResidualizedPanel res = make_res(y, d, singletons(n));
    EstimateResult est = estimate_plr(res);

    const double denom = res.d_res.squaredNorm();
    const double theta = res.d_res.dot(res.y_res) / denom;
    const Eigen::VectorXd psi = (res.y_res - theta * res.d_res).cwiseProduct(res.d_res);
    const double hc = std::sqrt(static_cast<double>(n) / (n - 1.0) * psi.squaredNorm()) / denom;
    REQUIRE(est.se == Catch::Approx(hc).epsilon(0).margin(1e-12));
}

TEST_CASE("degenerate inputs are rejected") {
    ResidualizedPanel one_cluster = make_res({1, 2, 3}, {1, -1, 2}, {0, 0, 0});
    REQUIRE_THROWS_AS(estimate_plr(one_cluster), DegenerateClusters);

    ResidualizedPanel flat_d = make_res({1, 2, 3}, {0.5, 0.5, 0.5}, singletons(3));
    REQUIRE_THROWS_AS(estimate_plr(flat_d), NoResidualTreatmentVariation);

    ResidualizedPanel no_z = make_res({1, 2}, {1, -1}, singletons(2));
    REQUIRE_THROWS_AS(estimate_iv_plr(no_z), ConfigInvalid);
}

TEST_CASE("iv slope is the ratio of instrument moments") {
    ResidualizedPanel res = make_res({4, 4}, {2, 2}, singletons(2), std::vector<double>{1, 1});
    EstimateResult est = estimate_iv_plr(res);
    REQUIRE(est.theta == 2.0);
    REQUIRE(est.method == "dml_iv_plr");
    REQUIRE(est.learners == "mean/mean/mean");
    REQUIRE_FALSE(est.weak_instrument);
}

TEST_CASE("an irrelevant instrument is rejected") {
    ResidualizedPanel res = make_res({1, 2}, {1, 1}, singletons(2), std::vector<double>{1, -1});
    REQUIRE_THROWS_AS(estimate_iv_plr(res), WeakDenominator);
}

TEST_CASE("a weak first stage raises the warning flag") {
    Rng rng(3);
    const int n = 40;
    std::vector<double> z(n), d(n), y(n);
    for (int i = 0; i < n; ++i) {
        z[i] = rng.normal();
        d[i] = 0.02 * z[i] + rng.normal();
        y[i] = d[i] + rng.normal();
    }
    ResidualizedPanel res = make_res(y, d, singletons(n), z);
    EstimateResult est = estimate_iv_plr(res);
    REQUIRE(est.first_stage_t * est.first_stage_t < 10.0);
    REQUIRE(est.weak_instrument);
    REQUIRE_FALSE(est.warnings.empty());
    REQUIRE_THAT(est.warnings.front(), Catch::Matchers::ContainsSubstring("weak instrument"));
}

TEST_CASE("pure fixed-effect outcomes leave nothing to the regressor") {
    // y = alpha_i + lambda_t exactly; x survives demeaning.
    std::vector<double> y = {0, 5, 10, 15};
    std::vector<double> x = {0, 1, 1, 0};
    PanelDataset ds = grid_panel(2, 2, {"y", "x"}, {y, x});
    TwfeResult res = estimate_twfe(ds, "y", {"x"});
    REQUIRE(res.rows.size() == 1);
    REQUIRE(std::fabs(res.row("x").coef) < 1e-14);
    REQUIRE(res.row("x").se < 1e-14);
    REQUIRE(res.n_obs == 4);
    REQUIRE(res.n_clusters == 2);
    REQUIRE(res.df == 1);
    REQUIRE(res.absorbed_units == 2);
    REQUIRE(res.absorbed_periods == 2);
}

TEST_CASE("time-invariant regressors are reported as absorbed") {
    std::vector<double> y = {1, 2, 3, 4, 5, 6};
    std::vector<double> xconst = {3, 3, 7, 7, 9, 9};  // constant within unit
    PanelDataset ds = grid_panel(3, 2, {"y", "xc"}, {y, xconst});
    REQUIRE_THROWS_AS(estimate_twfe(ds, "y", {"xc"}), CollinearAfterDemeaning);
    REQUIRE_THROWS_WITH(estimate_twfe(ds, "y", {"xc"}),
                        Catch::Matchers::ContainsSubstring("'xc'"));
}

TEST_CASE("collinear demeaned regressors name the offender") {
    Rng rng(8);
    const int n = 12;
    std::vector<double> y(n), x1(n), x2(n);
    for (int i = 0; i < n; ++i) {
        x1[i] = rng.normal();
        x2[i] = 2.0 * x1[i];
        y[i] = x1[i] + rng.normal();
    }
    PanelDataset ds = grid_panel(4, 3, {"y", "x1", "x2"}, {y, x1, x2});
    REQUIRE_THROWS_WITH(estimate_twfe(ds, "y", {"x1", "x2"}),
                        Catch::Matchers::ContainsSubstring("'x2'"));
}

TEST_CASE("within estimates match the explicit dummy regression") {
    const int U = 10, T = 5, n = U * T;
    Rng rng(77);
    std::vector<double> y(n), x1(n), x2(n), x3(n);
    std::vector<double> alpha(U), lambda(T);
    for (auto& a : alpha) a = 2.0 * rng.normal();
    for (auto& l : lambda) l = rng.normal();
    for (int u = 0; u < U; ++u) {
        for (int t = 0; t < T; ++t) {
            const int r = u * T + t;
            x1[r] = rng.normal();
            x2[r] = rng.normal();
            x3[r] = rng.normal();
            y[r] = alpha[u] + lambda[t] + 0.7 * x1[r] - 1.2 * x2[r] + 0.3 * x3[r] + rng.normal();
        }
    }
    PanelDataset ds = grid_panel(U, T, {"y", "x1", "x2", "x3"}, {y, x1, x2, x3});
    TwfeResult res = estimate_twfe(ds, "y", {"x1", "x2", "x3"});

    // Brute-force dummy design: intercept, x's, U-1 unit and T-1 period dummies.
    const int k = 1 + 3 + (U - 1) + (T - 1);
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, k);
    Eigen::VectorXd yv(n);
    for (int r = 0; r < n; ++r) {
        const int u = r / T, t = r % T;
        yv(r) = y[static_cast<std::size_t>(r)];
        X(r, 0) = 1.0;
        X(r, 1) = x1[static_cast<std::size_t>(r)];
        X(r, 2) = x2[static_cast<std::size_t>(r)];
        X(r, 3) = x3[static_cast<std::size_t>(r)];
        if (u > 0) X(r, 3 + u) = 1.0;
        if (t > 0) X(r, 3 + (U - 1) + t) = 1.0;
    }
    Eigen::VectorXd beta = X.colPivHouseholderQr().solve(yv);
    REQUIRE(res.row("x1").coef == Catch::Approx(beta(1)).epsilon(0).margin(1e-8));
    REQUIRE(res.row("x2").coef == Catch::Approx(beta(2)).epsilon(0).margin(1e-8));
    REQUIRE(res.row("x3").coef == Catch::Approx(beta(3)).epsilon(0).margin(1e-8));
    REQUIRE(res.demean_max_change < 1e-10);
}

TEST_CASE("demeaning an already-demeaned panel is a no-op") {
    const int U = 6, T = 4, n = U * T;
    Rng rng(5);
    Eigen::MatrixXd M(n, 2);
    std::vector<int> unit(n), period(n);
    for (int r = 0; r < n; ++r) {
        unit[static_cast<std::size_t>(r)] = r / T;
        period[static_cast<std::size_t>(r)] = r % T;
        M(r, 0) = rng.normal() + 3.0 * (r / T);
        M(r, 1) = rng.normal() - 2.0 * (r % T);
    }
    detail::demean_two_way(M, unit, period, U, T, 1e-10, 1000);
    Eigen::MatrixXd before = M;
    double change = 0.0;
    detail::demean_two_way(M, unit, period, U, T, 1e-10, 1000, &change);
    REQUIRE(change < 1e-14);
    REQUIRE((M - before).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pipeline dispatch follows the instrument learner") {
    DgpConfig cfg;
    cfg.n_units = 40;
    cfg.n_periods = 4;
    cfg.p_covariates = 3;
    cfg.cohort_periods = {2, 3};
    cfg.seed = 10;
    auto [plain, t1] = generate_panel(cfg);
    DmlPipeline pipe;
    pipe.learner_y = LearnerSpec::of(LearnerKind::ols);
    pipe.learner_d = LearnerSpec::of(LearnerKind::ols);
    pipe.folds = 4;
    pipe.seed = 31;
    EstimateResult plr = run_dml(plain, pipe);
    REQUIRE(plr.method == "dml_plr");
    REQUIRE(plr.folds == 4);
    REQUIRE(plr.seed == 31);
    REQUIRE(plr.n_obs == plain.n_rows());
    REQUIRE(plr.learners == "ols/ols");

    cfg.with_instrument = true;
    cfg.instrument_strength = 3.0;
    auto [ivds, t2] = generate_panel(cfg);
    pipe.learner_z = LearnerSpec::of(LearnerKind::ols);
    EstimateResult iv = run_dml(ivds, pipe);
    REQUIRE(iv.method == "dml_iv_plr");
    REQUIRE(iv.learners == "ols/ols/ols");
    REQUIRE(std::isfinite(iv.first_stage_t));
}
