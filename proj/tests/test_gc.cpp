#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <random>

#include "btdvar/gc.hpp"

using namespace btdvar;

namespace {

// Minimum of c * FP + FN over every 0/1 decision vector.
double brute_force_loss(const std::vector<double>& v, double c) {
    const std::size_t n = v.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        double fp = 0.0, fn = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if ((mask >> i) & 1U) {
                fp += 1.0 - v[i];
            } else {
                fn += v[i];
            }
        }
        best = std::min(best, c * fp + fn);
    }
    return best;
}

InclusionTensor tensor_of(const std::vector<double>& v, Index lags, Index k) {
    InclusionTensor t(lags, k);
    std::copy(v.begin(), v.end(), t.flat().begin());
    return t;
}

std::vector<char> decisions(const EdgeSet& e) {
    std::vector<char> d(e.cell_count());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = e.flat(i) ? 1 : 0;
    }
    return d;
}

}  // namespace

TEST_CASE("inclusion probability counts practical zeros") {
    std::vector<Matrix> draws;
    for (double a : {0.0, 0.001, 0.5}) {
        draws.push_back(Matrix::Constant(1, 1, a));
    }
    const auto v = inclusion_probabilities(draws, 1, 0.01);
    CHECK(v(0, 0, 0) == doctest::Approx(1.0 / 3.0));

    CHECK(inclusion_probabilities({Matrix::Zero(2, 4), Matrix::Zero(2, 4)}, 2, 0.01)(1, 0, 1) == 0.0);
    const auto one = inclusion_probabilities({Matrix::Ones(2, 4)}, 2, 0.01);
    for (double x : one.flat()) {
        CHECK(x == 1.0);
    }
    // column source + K * lag, row target
    Matrix b = Matrix::Zero(2, 4);
    b(1, 2) = 3.0;
    const auto pos = inclusion_probabilities({b}, 2, 0.01);
    CHECK(pos(1, 1, 0) == 1.0);
    CHECK(pos(0, 1, 0) == 0.0);

    CHECK_THROWS(inclusion_probabilities({}, 1, 0.01));
    CHECK_THROWS(inclusion_probabilities({Matrix::Zero(2, 3)}, 2, 0.01));
}

TEST_CASE("optimal threshold") {
    CHECK(DecisionConfig{0.01, 1.0}.t_star() == 0.5);
    CHECK(DecisionConfig{0.01, 3.0}.t_star() == 0.75);
    CHECK_THROWS(DecisionConfig{0.01, -1.0}.validate());
    CHECK_THROWS(DecisionConfig{0.0, 1.0}.validate());
}

TEST_CASE("tie at the threshold is an edge") {
    const auto net = decide_network(tensor_of({0.5, 0.4999, 0.0, 1.0}, 1, 2), DecisionConfig{});
    CHECK(net.edges.flat(0));
    CHECK_FALSE(net.edges.flat(1));
    CHECK_FALSE(net.edges.flat(2));
    CHECK(net.edges.flat(3));
    CHECK(net.t_star == 0.5);
}

TEST_CASE("expected loss") {
    const std::vector<double> v1{1.0, 0.0};
    const std::vector<char> d1{1, 0};
    const auto l1 = expected_loss(v1, d1, 1.0);
    CHECK(l1.false_positives == 0.0);
    CHECK(l1.false_negatives == 0.0);
    CHECK(l1.loss == 0.0);

    const std::vector<double> v2{0.6, 0.4};
    const std::vector<char> d2{1, 0};
    CHECK(expected_loss(v2, d2, 1.0).loss == doctest::Approx(0.8));
    CHECK(brute_force_loss(v2, 1.0) == doctest::Approx(0.8));
}

TEST_CASE("threshold rule attains the exhaustive minimum") {
    std::mt19937_64 g(9);
    std::uniform_real_distribution<double> u;
    for (double c : {0.5, 1.0, 3.0}) {
        for (int rep = 0; rep < 200; ++rep) {
            // 1 lag, K = 3 -> 9 cells; every fourth instance snaps to a grid
            // so ties at t* occur
            std::vector<double> v(9);
            for (double& x : v) {
                x = rep % 4 == 0 ? std::round(u(g) * 4.0) / 4.0 : u(g);
            }
            const auto net = decide_network(tensor_of(v, 1, 3), DecisionConfig{0.01, c});
            const auto d = decisions(net.edges);
            CHECK(expected_loss(v, d, c).loss == doctest::Approx(brute_force_loss(v, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("network scores") {
    EdgeSet truth(1, 2);
    truth.set(0, 0, 0, true);
    truth.set(0, 1, 0, true);
    const auto same = score_network(truth, truth);
    CHECK(*same.tpr == 100.0);
    CHECK(*same.tnr == 100.0);
    CHECK(*same.fpr == 0.0);
    CHECK(*same.fnr == 0.0);

    EdgeSet all(1, 2);
    for (std::size_t i = 0; i < all.cell_count(); ++i) {
        all.set_flat(i, true);
    }
    const auto full = score_network(all, truth);
    CHECK(*full.tpr == 100.0);
    CHECK(*full.tnr == 0.0);

    // one TP, one FN, one FP, one TN
    EdgeSet est(1, 2);
    est.set(0, 0, 0, true);
    est.set(0, 0, 1, true);
    const auto mixed = score_network(est, truth);
    CHECK(*mixed.tpr == 50.0);
    CHECK(*mixed.tnr == 50.0);
    CHECK(*mixed.fpr == 50.0);
    CHECK(*mixed.fnr == 50.0);

    const auto no_negatives = score_network(all, all);
    CHECK_FALSE(no_negatives.tnr.has_value());
    CHECK_FALSE(no_negatives.fpr.has_value());
    CHECK_THROWS(score_network(EdgeSet(2, 2), truth));
}

TEST_CASE("pooled R squared") {
    Matrix y(4, 2);
    y << 1, 2, 3, 5, 2, 1, 6, 0;
    CHECK(*r_squared(y, y) == 1.0);
    const Matrix mean = y.colwise().mean().replicate(4, 1);
    CHECK(*r_squared(mean, y) == doctest::Approx(0.0));
    CHECK(*r_squared(-y, y) < 0.0);
    // pooled oracle
    const Matrix f = y.array() + 0.5;
    double sse = (f - y).squaredNorm();
    double sst = (y - mean).squaredNorm();
    CHECK(*r_squared(f, y) == doctest::Approx(1.0 - sse / sst));
    CHECK_FALSE(r_squared(Matrix::Ones(3, 1), Matrix::Ones(3, 1)).has_value());
    const Vector m = Vector::Zero(2);
    CHECK(*r_squared(f, y, m) == doctest::Approx(1.0 - sse / y.squaredNorm()));
}

TEST_CASE("ROC sweep") {
    const auto grid = default_roc_grid();
    REQUIRE(grid.size() == 11);
    CHECK(grid.front() == 0.0);
    CHECK(grid.back() == 1.0);
    CHECK(grid[3] == doctest::Approx(0.3));

    std::mt19937_64 g(12);
    std::uniform_real_distribution<double> u;
    std::bernoulli_distribution coin(0.4);
    for (int rep = 0; rep < 50; ++rep) {
        InclusionTensor v(2, 4);
        EdgeSet truth(2, 4);
        for (std::size_t i = 0; i < truth.cell_count(); ++i) {
            v.flat()[i] = u(g);
            truth.set_flat(i, coin(g));
        }
        v.flat()[0] = 1.0;
        truth.set_flat(0, true);
        truth.set_flat(1, false);
        const auto roc = roc_sweep(v, truth, grid);
        REQUIRE(roc.size() == grid.size());
        CHECK(roc.front().tpr == 100.0);
        CHECK(roc.front().fpr == 100.0);
        for (std::size_t i = 1; i < roc.size(); ++i) {
            CHECK(roc[i].tpr <= roc[i - 1].tpr);
            CHECK(roc[i].fpr <= roc[i - 1].fpr);
        }
    }
    // no certain edges: nothing survives t* = 1
    InclusionTensor half(1, 2);
    for (double& x : half.flat()) {
        x = 0.9;
    }
    EdgeSet truth(1, 2);
    truth.set_flat(0, true);
    truth.set_flat(1, true);
    CHECK(roc_sweep(half, truth, {1.0}).front().tpr == 0.0);
    CHECK_THROWS(roc_sweep(half, truth, {1.5}));
}
