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

LearnerSpec single_tree(int max_depth) {
    LearnerSpec spec = LearnerSpec::of(LearnerKind::forest);
    spec.n_trees = 1;
    spec.bootstrap = false;
    spec.max_depth = max_depth;
    spec.min_leaf = 1;
    spec.mtry = 0;  // resolved to all features when p is small enough
    return spec;
}

} // namespace

TEST_CASE("depth-zero unbootstrapped single tree is the training mean") {
    Eigen::MatrixXd X = random_design(15, 3, 2);
    Eigen::VectorXd y(15);
    for (int i = 0; i < 15; ++i) y(i) = 0.5 * i - 3.0;
    FittedModel m = fit(single_tree(0), X, y);
    Eigen::VectorXd pred = m.predict(X);
    for (int i = 0; i < 15; ++i) {
        REQUIRE(pred(i) == Catch::Approx(y.mean()).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("single split lands at the midpoint of the separating gap") {
    Eigen::MatrixXd X(4, 1);
    X << 1, 2, 3, 4;
    Eigen::VectorXd y(4);
    y << 0, 0, 10, 10;
    FittedModel m = fit(single_tree(1), X, y);
    REQUIRE(m.trees.size() == 1);
    const auto& root = m.trees[0].nodes[0];
    REQUIRE(root.feature == 0);
    REQUIRE(root.threshold == 2.5);
    Eigen::MatrixXd q(2, 1);
    q << 2.4, 2.6;
    Eigen::VectorXd pred = m.predict(q);
    REQUIRE(pred(0) == 0.0);
    REQUIRE(pred(1) == 10.0);
}

TEST_CASE("duplicate feature values only admit thresholds between distinct values") {
    Eigen::MatrixXd X(4, 1);
    X << 1, 1, 2, 2;
    Eigen::VectorXd y(4);
    y << 0, 0, 5, 5;
    FittedModel m = fit(single_tree(1), X, y);
    REQUIRE(m.trees[0].nodes[0].threshold == 1.5);
}

TEST_CASE("equal-score splits break toward the lowest feature index") {
    Eigen::MatrixXd X(4, 2);
    X << 0, 1,
         0, 1,
         1, 0,
         1, 0;
    Eigen::VectorXd y(4);
    y << 0, 0, 1, 1;
    LearnerSpec spec = single_tree(1);
    spec.mtry = 2;  // both features are candidates at the root
    FittedModel m = fit(spec, X, y);
    REQUIRE(m.trees[0].nodes[0].feature == 0);
    REQUIRE(m.trees[0].nodes[0].threshold == 0.5);
}

TEST_CASE("min_leaf vetoes splits that would strand a small child") {
    Eigen::MatrixXd X(4, 1);
    X << 1, 2, 3, 4;
    Eigen::VectorXd y(4);
    y << 0, 0, 0, 100;  // best unconstrained split isolates the last row
    LearnerSpec spec = single_tree(1);
    spec.min_leaf = 2;
    FittedModel m = fit(spec, X, y);
    const auto& root = m.trees[0].nodes[0];
    REQUIRE(root.feature == 0);
    REQUIRE(root.threshold == 2.5);  // only the 2-2 split survives the constraint
}

TEST_CASE("single-tree training error is monotone in depth") {
    const int n = 200;
    Eigen::MatrixXd X = random_design(n, 2, 44);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = std::sin(2.0 * X(i, 0)) + 0.5 * X(i, 1) * X(i, 1);
    double prev = std::numeric_limits<double>::infinity();
    for (int depth = 0; depth <= 6; ++depth) {
        LearnerSpec spec = single_tree(depth);
        spec.mtry = 2;
        FittedModel m = fit(spec, X, y);
        REQUIRE(m.train_mse <= prev + 1e-12);
        prev = m.train_mse;
    }
    REQUIRE(prev < 0.1);  // deep tree fits the smooth surface well
}

TEST_CASE("forest seed controls the bootstrap draw") {
    Eigen::MatrixXd X = random_design(30, 3, 8);
    Eigen::VectorXd y = X.col(0);
    Rng noise(12);
    for (int i = 0; i < 30; ++i) y(i) += 0.5 * noise.normal();
    LearnerSpec spec = LearnerSpec::of(LearnerKind::forest).with_seed(1);
    spec.n_trees = 10;
    Eigen::VectorXd a = fit(spec, X, y).predict(X);
    Eigen::VectorXd b = fit(spec, X, y).predict(X);
    Eigen::VectorXd c = fit(spec.with_seed(2), X, y).predict(X);
    REQUIRE(a == b);
    REQUIRE(a != c);
}

TEST_CASE("forest predictions are averaged over trees") {
    // With bootstrap off, every tree sees the same rows; identical specs make
    // identical trees, so the average equals a single tree.
    Eigen::MatrixXd X = random_design(40, 2, 3);
    Eigen::VectorXd y = X.col(0).array().square();
    LearnerSpec one = single_tree(3);
    one.mtry = 2;
    LearnerSpec many = one;
    many.n_trees = 7;
    Eigen::VectorXd p1 = fit(one, X, y).predict(X);
    Eigen::VectorXd p7 = fit(many, X, y).predict(X);
    for (int i = 0; i < 40; ++i) {
        REQUIRE(p7(i) == Catch::Approx(p1(i)).epsilon(0).margin(1e-12));
    }
}

TEST_CASE("boosting learns a strong nonlinear signal") {
    const int n = 300;
    Eigen::MatrixXd X = random_design(n, 2, 55);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = (X(i, 0) > 0 ? 2.0 : -2.0) + 0.3 * X(i, 1);
    LearnerSpec spec = LearnerSpec::of(LearnerKind::boosting).with_seed(6);
    spec.learning_rate = 0.1;
    spec.max_rounds = 400;
    FittedModel m = fit(spec, X, y);
    const double var_y = (y.array() - y.mean()).square().sum() / n;
    REQUIRE(m.train_mse < 0.2 * var_y);
}

TEST_CASE("boosting stops a fixed patience after the best holdout round") {
    const int n = 120;
    Eigen::MatrixXd X = random_design(n, 2, 66);
    Eigen::VectorXd y = X.col(0);
    Rng noise(7);
    for (int i = 0; i < n; ++i) y(i) += 0.8 * noise.normal();

    LearnerSpec spec = LearnerSpec::of(LearnerKind::boosting).with_seed(10);
    spec.learning_rate = 0.1;
    spec.max_rounds = 1000;
    FittedModel full = fit(spec, X, y);
    const int kept = static_cast<int>(full.trees.size());
    REQUIRE(kept >= 1);
    REQUIRE(kept < spec.max_rounds);  // early stopping fired

    // Rounds past kept + patience were never needed: capping there changes nothing.
    LearnerSpec capped = spec;
    capped.max_rounds = kept + spec.early_stop_rounds;
    FittedModel again = fit(capped, X, y);
    REQUIRE(again.trees.size() == full.trees.size());
    Eigen::VectorXd pa = full.predict(X), pb = again.predict(X);
    for (int i = 0; i < n; ++i) REQUIRE(pa(i) == pb(i));

    // A cap below the best round truncates the ensemble.
    if (kept >= 2) {
        LearnerSpec tight = spec;
        tight.max_rounds = kept - 1;
        REQUIRE(fit(tight, X, y).trees.size() <= static_cast<std::size_t>(kept - 1));
    }
}

TEST_CASE("boosting holdout split is too small to fit on tiny data") {
    Eigen::MatrixXd X = random_design(8, 1, 1);
    Eigen::VectorXd y = X.col(0);
    LearnerSpec spec = LearnerSpec::of(LearnerKind::boosting);  // min_leaf 5 needs 11+ rows
    REQUIRE_THROWS_AS(fit(spec, X, y), InsufficientData);
}
