#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "sdidml/learners.hpp"
#include "sdidml/rng.hpp"

using namespace sdidml;

namespace {

Eigen::MatrixXd random_design(int n, int p, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd X(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
    }
    return X;
}

// Columns with exact zero mean and exact unit n-1 sd, mutually orthogonal.
Eigen::MatrixXd standardized_orthogonal(int n, int p, std::uint64_t seed) {
    Eigen::MatrixXd X = random_design(n, p, seed);
    for (int j = 0; j < p; ++j) {
        X.col(j).array() -= X.col(j).mean();
        for (int k = 0; k < j; ++k) {
            X.col(j) -= X.col(k) * (X.col(k).dot(X.col(j)) / X.col(k).squaredNorm());
        }
        X.col(j) /= std::sqrt(X.col(j).squaredNorm() / (n - 1));
    }
    return X;
}

} // namespace

TEST_CASE("mean learner returns the training mean") {
    Eigen::MatrixXd X(3, 1);
    X << 10, 20, 30;
    Eigen::VectorXd y(3);
    y << 1, 2, 3;
    FittedModel m = fit(LearnerSpec::of(LearnerKind::mean), X, y);
    Eigen::VectorXd pred = m.predict(X);
    for (int i = 0; i < 3; ++i) REQUIRE(pred(i) == 2.0);
}

TEST_CASE("ols interpolates an exact line") {
    Eigen::MatrixXd X(3, 1);
    X << 1, 2, 3;
    Eigen::VectorXd y(3);
    y << 2, 4, 6;
    FittedModel m = fit(LearnerSpec::of(LearnerKind::ols), X, y);
    Eigen::MatrixXd X5(1, 1);
    X5 << 5;
    REQUIRE(m.predict(X5)(0) == Catch::Approx(10.0).epsilon(0).margin(1e-10));
}

TEST_CASE("ols names the offending collinear column") {
    Eigen::MatrixXd X = random_design(30, 3, 11);
    X.col(2) = 2.0 * X.col(0) - X.col(1);
    Eigen::VectorXd y = X.col(0);
    REQUIRE_THROWS_AS(fit(LearnerSpec::of(LearnerKind::ols), X, y), SingularDesign);
    REQUIRE_THROWS_WITH(fit(LearnerSpec::of(LearnerKind::ols), X, y),
                        Catch::Matchers::ContainsSubstring("column 2"));
}

TEST_CASE("ridge at lambda 0 equals the OLS normal-equation solution") {
    Eigen::MatrixXd X = random_design(20, 3, 5);
    Eigen::VectorXd y = X.col(0) - 0.5 * X.col(2);
    for (int i = 0; i < 20; ++i) y(i) += 0.01 * std::sin(i);

    Eigen::MatrixXd Xi(20, 4);
    Xi.col(0).setOnes();
    Xi.rightCols(3) = X;
    Eigen::VectorXd beta = (Xi.transpose() * Xi).ldlt().solve(Xi.transpose() * y);

    LearnerSpec spec = LearnerSpec::of(LearnerKind::ridge);
    spec.lambda = 0.0;
    FittedModel m = fit(spec, X, y);
    REQUIRE(m.intercept == Catch::Approx(beta(0)).epsilon(0).margin(1e-8));
    for (int j = 0; j < 3; ++j) {
        REQUIRE(m.coef(j) == Catch::Approx(beta(j + 1)).epsilon(0).margin(1e-8));
    }
}

TEST_CASE("ridge solution zeroes the penalized gradient") {
    // Objective: (1/n)||y - b0 - X b||^2 + lambda * ||bs||^2 on the
    // standardized scale; finite differences around the solution must vanish.
    const int n = 40, p = 4;
    Eigen::MatrixXd X = random_design(n, p, 17);
    Eigen::VectorXd y = 2.0 * X.col(0) - X.col(3);
    for (int i = 0; i < n; ++i) y(i) += 0.3 * std::cos(3.7 * i);
    LearnerSpec spec = LearnerSpec::of(LearnerKind::ridge);
    spec.lambda = 0.7;
    FittedModel m = fit(spec, X, y);

    Eigen::VectorXd mu = X.colwise().mean();
    Eigen::VectorXd sd(p);
    for (int j = 0; j < p; ++j) {
        sd(j) = std::sqrt((X.col(j).array() - mu(j)).square().sum() / (n - 1));
    }
    Eigen::MatrixXd Xs = (X.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
    Eigen::VectorXd ys = y.array() - y.mean();
    Eigen::VectorXd bs = m.coef.cwiseProduct(sd);  // back to the standardized scale

    auto objective = [&](const Eigen::VectorXd& b) {
        const Eigen::VectorXd r = ys - Xs * b;
        return r.squaredNorm() / n + spec.lambda * b.squaredNorm();
    };
    const double h = 1e-6;
    for (int j = 0; j < p; ++j) {
        Eigen::VectorXd up = bs, dn = bs;
        up(j) += h;
        dn(j) -= h;
        const double grad = (objective(up) - objective(dn)) / (2 * h);
        REQUIRE(std::fabs(grad) <= 1e-5);
    }
}

TEST_CASE("lambda path endpoints and monotonicity") {
    Eigen::MatrixXd X = standardized_orthogonal(24, 3, 7);
    Eigen::VectorXd y = X.col(0);
    const double lambda_max = std::fabs(X.col(0).dot(y)) / 24.0;  // = (n-1)/n here

    std::vector<double> two = lasso_lambda_path(X, y, 2, 0.01);
    REQUIRE(two.size() == 2);
    REQUIRE(two[0] == Catch::Approx(lambda_max).epsilon(1e-12));
    REQUIRE(two[1] == Catch::Approx(0.01 * lambda_max).epsilon(1e-12));

    std::vector<double> path = lasso_lambda_path(X, y, 100, 1e-4);
    REQUIRE(path.size() == 100);
    for (std::size_t i = 1; i < path.size(); ++i) REQUIRE(path[i] < path[i - 1]);

    // At lambda_max the soft threshold kills every coefficient.
    LearnerSpec spec = LearnerSpec::of(LearnerKind::lasso_cv);
    spec.forced_lambda = lambda_max;
    FittedModel m = fit(spec, X, y);
    REQUIRE(m.coef.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(m.intercept == Catch::Approx(y.mean()).epsilon(0).margin(1e-12));
}

TEST_CASE("forced lambda above lambda_max zeroes all slopes") {
    Eigen::MatrixXd X = random_design(50, 6, 3);
    Eigen::VectorXd y = X.col(1) + 0.2 * X.col(4);
    LearnerSpec spec = LearnerSpec::of(LearnerKind::lasso_cv);
    spec.forced_lambda = 1e6;
    FittedModel m = fit(spec, X, y);
    REQUIRE(m.coef.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(m.intercept == Catch::Approx(y.mean()).epsilon(0).margin(1e-12));
}

TEST_CASE("lasso KKT conditions hold at the selected solution") {
    const int n = 60, p = 8;
    Eigen::MatrixXd X = random_design(n, p, 23);
    Eigen::VectorXd y = 1.5 * X.col(0) - 0.8 * X.col(3);
    Rng noise(99);
    for (int i = 0; i < n; ++i) y(i) += 0.5 * noise.normal();

    LearnerSpec spec = LearnerSpec::of(LearnerKind::lasso_cv).with_seed(4);
    FittedModel m = fit(spec, X, y);
    const double lambda = m.selected_lambda;
    REQUIRE(std::isfinite(lambda));

    Eigen::VectorXd mu = X.colwise().mean();
    Eigen::VectorXd sd(p);
    for (int j = 0; j < p; ++j) {
        sd(j) = std::sqrt((X.col(j).array() - mu(j)).square().sum() / (n - 1));
    }
    Eigen::MatrixXd Xs = (X.rowwise() - mu.transpose()).array().rowwise() / sd.transpose().array();
    const Eigen::VectorXd r = y - m.predict(X);  // equals standardized-scale residual
    for (int j = 0; j < p; ++j) {
        const double g = std::fabs(Xs.col(j).dot(r)) / n;
        if (m.coef(j) == 0.0) {
            REQUIRE(g <= lambda + 1e-6);
        } else {
            REQUIRE(g == Catch::Approx(lambda).epsilon(0).margin(1e-4));
        }
    }
}

TEST_CASE("cv table shape and noise vs signal selection") {
    const int n = 80, p = 5;

    // Pure noise: heavy shrinkage, lambda_star in the upper half of the path.
    int upper = 0;
    const int trials = 50;
    for (int s = 0; s < trials; ++s) {
        Eigen::MatrixXd X = random_design(n, p, 100 + static_cast<std::uint64_t>(s));
        Rng yr(200 + static_cast<std::uint64_t>(s));
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y(i) = yr.normal();
        LearnerSpec spec = LearnerSpec::of(LearnerKind::lasso_cv).with_seed(7);
        auto [lambda_star, table] = select_lambda_cv(X, y, spec);
        REQUIRE(table.size() == 100);
        for (const auto& e : table) REQUIRE(e.mse >= 0.0);
        const double median = table[49].lambda;  // path is descending
        if (lambda_star >= median) ++upper;
    }
    REQUIRE(upper >= 45);

    // Strong signal: the refit recovers the coefficient.
    Eigen::MatrixXd X = random_design(n, p, 31);
    Eigen::VectorXd y = 3.0 * X.col(0);
    Rng tiny(5);
    for (int i = 0; i < n; ++i) y(i) += 0.01 * tiny.normal();
    FittedModel m = fit(LearnerSpec::of(LearnerKind::lasso_cv).with_seed(9), X, y);
    REQUIRE(m.coef(0) == Catch::Approx(3.0).epsilon(0).margin(0.2));
}

TEST_CASE("constant target predicts the constant for every kind") {
    Eigen::MatrixXd X = random_design(20, 3, 77);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(20, 4.25);
    for (LearnerKind k : {LearnerKind::mean, LearnerKind::ols, LearnerKind::ridge,
                          LearnerKind::lasso_cv, LearnerKind::forest, LearnerKind::boosting}) {
        LearnerSpec spec = LearnerSpec::of(k).with_seed(3);
        if (k == LearnerKind::forest) spec.n_trees = 20;
        FittedModel m = fit(spec, X, y);
        Eigen::VectorXd pred = m.predict(X);
        for (int i = 0; i < 20; ++i) {
            REQUIRE(pred(i) == Catch::Approx(4.25).epsilon(0).margin(1e-12));
        }
    }
}

TEST_CASE("determinism: identical spec and data give identical fits") {
    Eigen::MatrixXd X = random_design(40, 4, 13);
    Eigen::VectorXd y = X.col(0) + 0.5 * X.col(2);
    Rng noise(3);
    for (int i = 0; i < 40; ++i) y(i) += 0.2 * noise.normal();
    for (LearnerKind k : {LearnerKind::ridge, LearnerKind::lasso_cv, LearnerKind::forest,
                          LearnerKind::boosting}) {
        LearnerSpec spec = LearnerSpec::of(k).with_seed(21);
        if (k == LearnerKind::forest) spec.n_trees = 30;
        FittedModel a = fit(spec, X, y);
        FittedModel b = fit(spec, X, y);
        Eigen::VectorXd pa = a.predict(X), pb = b.predict(X);
        for (int i = 0; i < 40; ++i) REQUIRE(pa(i) == pb(i));
    }
}

TEST_CASE("predict rejects a feature-count mismatch") {
    Eigen::MatrixXd X = random_design(10, 3, 1);
    Eigen::VectorXd y = X.col(0);
    FittedModel m = fit(LearnerSpec::of(LearnerKind::ols), X, y);
    Eigen::MatrixXd bad = random_design(4, 2, 2);
    REQUIRE_THROWS_AS(m.predict(bad), ShapeMismatch);
}

TEST_CASE("insufficient data errors") {
    Eigen::MatrixXd X = random_design(4, 2, 1);
    Eigen::VectorXd y = X.col(0);
    LearnerSpec lasso = LearnerSpec::of(LearnerKind::lasso_cv);  // cv_folds = 5 > n = 4
    REQUIRE_THROWS_AS(fit(lasso, X, y), InsufficientData);

    LearnerSpec forest = LearnerSpec::of(LearnerKind::forest);  // needs n >= 2*min_leaf = 10
    forest.n_trees = 2;
    REQUIRE_THROWS_AS(fit(forest, X, y), InsufficientData);
}

TEST_CASE("constant target yields the degenerate single-zero path") {
    Eigen::MatrixXd X = random_design(12, 2, 9);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(12, 1.0);
    std::vector<double> path = lasso_lambda_path(X, y, 100, 1e-4);
    REQUIRE(path == std::vector<double>{0.0});
}

TEST_CASE("spec parsing round-trips and rejects unknowns") {
    LearnerSpec s = LearnerSpec::parse("ridge(lambda=0.25)");
    REQUIRE(s.kind == LearnerKind::ridge);
    REQUIRE(s.lambda == 0.25);
    REQUIRE(s.name() == "ridge(lambda=0.25)");
    REQUIRE(LearnerSpec::parse("forest(n_trees=50,min_leaf=2)").n_trees == 50);
    REQUIRE(LearnerSpec::parse("ols").name() == "ols");
    REQUIRE(LearnerSpec::parse("lasso_cv").name() == "lasso_cv");
    REQUIRE_THROWS_AS(LearnerSpec::parse("svm"), ConfigError);
    REQUIRE_THROWS_AS(LearnerSpec::parse("ridge(alpha=1)"), ConfigError);
    REQUIRE_THROWS_AS(LearnerSpec::parse("ridge(lambda=abc)"), ConfigError);
}
