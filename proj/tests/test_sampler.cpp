#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <numbers>

#include "btdvar/sampler.hpp"
#include "support/joint.hpp"

using namespace btdvar;
using namespace btdvar::check;

namespace {

// Prior-shaped state with tame N(0, 1) values in the mean parameters.
PanelState random_state(Index k, Index lags, std::array<Index, 3> r, std::size_t dev, std::uint64_t seed) {
    Rng rng(seed);
    PanelState s = sample_prior_state(k, lags, r, dev, HyperParameters{}, rng);
    auto fill = [&](Matrix& m) {
        for (Index i = 0; i < m.size(); ++i) {
            m(i) = rng.normal();
        }
    };
    fill(s.beta1_fixed);
    fill(s.beta2);
    fill(s.beta3);
    for (auto& d : s.beta1_dev) {
        fill(d);
    }
    for (double& g : s.core.values()) {
        g = rng.normal();
    }
    for (Index e = 0; e < k; ++e) {
        s.nu(e) = rng.normal();
    }
    for (auto& a : s.alpha) {
        for (Index e = 0; e < k; ++e) {
            a(e) = rng.normal();
        }
    }
    return s;
}

Matrix& factor_of(PanelState& s, int j) { return j == 1 ? s.beta1_fixed : (j == 2 ? s.beta2 : s.beta3); }

}  // namespace

TEST_CASE("H matrix matches finite differences of the model mean") {
    const Index k = 3, lags = 2;
    const PanelState s = random_state(k, lags, {2, 3, 2}, 2, 1);
    Rng rng(2);
    Vector x(k * lags);
    for (Index i = 0; i < x.size(); ++i) {
        x(i) = rng.normal();
    }
    const double eps = 1e-6;
    for (std::size_t subject = 0; subject < 2; ++subject) {
        for (int j = 1; j <= 3; ++j) {
            PanelState probe = s;
            for (Index r = 0; r < factor_of(probe, j).cols(); ++r) {
                const Matrix h = build_h_matrix(s, x, j, r, subject);
                REQUIRE(h.rows() == k);
                REQUIRE(h.cols() == factor_of(probe, j).rows());
                for (Index p = 0; p < h.cols(); ++p) {
                    PanelState moved = s;
                    factor_of(moved, j)(p, r) += eps;
                    const Vector fd = (model_mean(moved, x, subject) - model_mean(s, x, subject)) / eps;
                    CHECK((fd - h.col(p)).norm() <= 1e-4 * std::max(1.0, h.col(p).norm()));
                }
            }
        }
    }
}

TEST_CASE("H matrix at rank one") {
    PanelState s = random_state(3, 2, {1, 1, 1}, 0, 3);
    s.beta2 = Vector::Unit(3, 0);
    s.beta3 = Vector::Unit(2, 0);
    s.core = Tensor3(1, 1, 1, 1.0);
    Vector x(6);
    x << 0.7, -1.0, 2.0, 5.0, 6.0, 7.0;
    // B = beta1 e1^T at lag 1 only, so the mean is linear in beta1 with
    // slope (y_{t-1})_1 I
    CHECK((build_h_matrix(s, x, 1, 0, 0) - 0.7 * Matrix::Identity(3, 3)).norm() < 1e-14);
    s.core = Tensor3(1, 1, 1, 0.0);
    for (int j = 1; j <= 3; ++j) {
        CHECK(build_h_matrix(s, x, j, 0, 0).isZero(0.0));
    }
}

TEST_CASE("column systems equal brute-force sums over H") {
    const PanelData data = small_panel(2, 4, 2, 30, 5);
    SamplerConfig cfg = small_config(2, {3, 3, 2});
    const PanelState s = random_state(4, 2, {3, 3, 2}, 2, 6);
    GibbsSampler g(data, cfg, s);
    auto check = [&](int j, Index r, std::optional<std::size_t> only) {
        const Index rows = factor_of(const_cast<PanelState&>(s), j).rows();
        Matrix gram = Matrix::Zero(rows, rows);
        Vector rhs = Vector::Zero(rows);
        for (std::size_t i = 0; i < 2; ++i) {
            if (only && *only != i) {
                continue;
            }
            const Matrix x = lagged_design(data.y[i].topRows(data.train_t()), 2);
            Vector own = factor_of(const_cast<PanelState&>(s), j).col(r);
            if (j == 1 && only) {
                own = s.beta1_dev[i].col(r);
            }
            for (Index t = 0; t < x.cols(); ++t) {
                const Matrix h = build_h_matrix(s, x.col(t), j, r, i);
                const Vector e = data.y[i].row(2 + t).transpose() - model_mean(s, x.col(t), i);
                gram += h.transpose() * h;
                rhs += h.transpose() * (e + h * own);
            }
        }
        const ColumnSystem sys = g.column_system(j, r, only);
        CHECK((sys.gram - gram).norm() <= 1e-9 * gram.norm());
        CHECK((sys.rhs - rhs).norm() <= 1e-9 * std::max(1.0, rhs.norm()));
    };
    for (Index r = 0; r < 3; ++r) {
        check(1, r, std::nullopt);
        check(1, r, 0);
        check(1, r, 1);
        check(2, r, std::nullopt);
    }
    for (Index r = 0; r < 2; ++r) {
        check(3, r, std::nullopt);
    }
}

TEST_CASE("cached residuals stay consistent with the state") {
    const PanelData data = small_panel(3, 4, 2, 40, 7);
    SamplerConfig cfg = small_config(3, {3, 3, 2});
    Rng rng(8);
    GibbsSampler g(data, cfg, initial_state(data, cfg, rng));
    auto check = [&] {
        for (std::size_t i = 0; i < 3; ++i) {
            const Matrix x = lagged_design(data.y[i].topRows(data.train_t()), 3);
            Matrix e(4, x.cols());
            for (Index t = 0; t < x.cols(); ++t) {
                e.col(t) = data.y[i].row(3 + t).transpose() - model_mean(g.state(), x.col(t), i);
            }
            CHECK((g.residuals(i) - e).norm() <= 1e-9 * std::max(1.0, e.norm()));
        }
    };
    for (int it = 0; it < 5; ++it) {
        g.update_sigma2(rng);
        g.update_local_scales(rng);
        g.update_global_scales(rng);
        g.update_mgps(rng);
        g.update_factors(rng);
        check();
        g.update_core(rng);
        check();
        g.update_intercept(rng);
        check();
        g.update_random_intercepts(rng);
        check();
        g.update_auxiliaries(rng);
        g.update_xi(rng);
    }
}

TEST_CASE("zero residuals leave only prior terms in the noise conditional") {
    PanelData data = small_panel(1, 2, 1, 12, 9);
    SamplerConfig cfg = small_config(1, {2, 2, 1});
    cfg.random_effects = false;
    Rng rng(10);
    const PanelState s = initial_state(data, cfg, rng);
    // responses replaced by the model mean, row by row
    const Index n_obs = data.y[0].rows() - 1;
    for (Index t = 1; t < data.y[0].rows(); ++t) {
        const Vector prev = data.y[0].row(t - 1).transpose();
        data.y[0].row(t) = model_mean(s, prev, 0).transpose();
    }
    GibbsSampler g(data, cfg, s);
    CHECK(g.residuals(0).norm() < 1e-10);
    // Inv-Ga(a*, b*) with b* = b_sigma + prior quadratics: check the mean
    const auto& h = s.hyper;
    double shape = h.params.a_sigma, rate = h.params.b_sigma;
    const Matrix* b[3] = {&s.beta1_fixed, &s.beta2, &s.beta3};
    for (std::size_t j = 0; j < 3; ++j) {
        for (Index c = 0; c < b[j]->cols(); ++c) {
            for (Index r = 0; r < b[j]->rows(); ++r) {
                shape += 0.5;
                rate += 0.5 * (*b[j])(r, c) * (*b[j])(r, c) * h.factor[j].psi(c) / (h.factor[j].tau2(r, c) * h.factor[j].lambda2);
            }
        }
    }
    for (Index e = 0; e < s.core.size(); ++e) {
        shape += 0.5;
        const double v = s.core.values()[static_cast<std::size_t>(e)];
        rate += 0.5 * v * v / (h.core.tau2(e) * h.core.lambda2);
    }
    for (Index e = 0; e < 2; ++e) {
        shape += 0.5;
        rate += 0.5 * s.nu(e) * s.nu(e) / (h.nu.tau2(e) * h.nu.lambda2);
    }
    shape += 0.5 * 2.0 * static_cast<double>(n_obs);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        g.set_state(s);
        g.update_sigma2(rng);
        sum += g.state().hyper.sigma2;
    }
    CHECK(sum / n == doctest::Approx(rate / (shape - 1.0)).epsilon(0.02));
}

TEST_CASE("isolated conditionals agree with the joint density") {
    const PanelData data = small_panel(2, 2, 1, 10, 11);
    SamplerConfig cfg = small_config(1, {2, 2, 1});
    cfg.prune_enabled = false;
    // a typical posterior state as the conditioning point
    FitRunner warm(data, cfg);
    warm.run_until(60);
    const PanelState base = warm.state();
    const int draws = 4000;

    std::uint64_t seed = 100;
    for (const auto& t : scalar_targets()) {
        CAPTURE(t.name);
        const auto r = conditional_ks(data, cfg, base, t, draws, seed++);
        CHECK(r.grid_covers);
        CHECK(r.distance < 0.05);
    }
}

TEST_CASE("vector conditionals have the moments of the joint density") {
    // Two-dimensional blocks: compare the Gaussian moments implied by the
    // joint density (by finite differences of its log) with the draws.
    const PanelData data = small_panel(2, 2, 1, 10, 12);
    SamplerConfig cfg = small_config(1, {2, 2, 1});
    cfg.prune_enabled = false;
    FitRunner warm(data, cfg);
    warm.run_until(60);
    const PanelState base = warm.state();

    struct Block {
        const char* name;
        std::function<void(GibbsSampler&, Rng&)> update;
        std::function<void(PanelState&, const Vector&)> set;
        std::function<Vector(const PanelState&)> read;
    };
    // Each block is the first one drawn inside its update call.
    std::vector<Block> blocks{
        {"alpha", [](GibbsSampler& g, Rng& r) { g.update_random_intercepts(r); },
         [](PanelState& s, const Vector& v) { s.alpha[0] = v; }, [](const PanelState& s) { return s.alpha[0]; }},
        {"beta1 column", [](GibbsSampler& g, Rng& r) { g.update_factor_column(1, 1, r); },
         [](PanelState& s, const Vector& v) { s.beta1_fixed.col(1) = v; },
         [](const PanelState& s) { return Vector(s.beta1_fixed.col(1)); }},
        {"beta2 column", [](GibbsSampler& g, Rng& r) { g.update_factor_column(2, 0, r); },
         [](PanelState& s, const Vector& v) { s.beta2.col(0) = v; },
         [](const PanelState& s) { return Vector(s.beta2.col(0)); }},
    };
    for (const auto& b : blocks) {
        CAPTURE(b.name);
        // The log joint is quadratic in the block: recover precision and mean.
        PanelState p = base;
        const Vector v0 = b.read(base);
        const Index n = v0.size();
        const double hstep = 1e-3;
        auto f = [&](const Vector& at) {
            b.set(p, at);
            return log_joint(p, data);
        };
        Matrix prec(n, n);
        Vector grad(n);
        for (Index a = 0; a < n; ++a) {
            const Vector ea = Vector::Unit(n, a) * hstep;
            grad(a) = (f(v0 + ea) - f(v0 - ea)) / (2 * hstep);
            for (Index c = 0; c < n; ++c) {
                const Vector ec = Vector::Unit(n, c) * hstep;
                prec(a, c) = -(f(v0 + ea + ec) - f(v0 + ea - ec) - f(v0 - ea + ec) + f(v0 - ea - ec)) / (4 * hstep * hstep);
            }
        }
        const Matrix cov = prec.inverse();
        const Vector mean = v0 + cov * grad;

        GibbsSampler g(data, cfg, base);
        Rng rng(77);
        const int draws = 20000;
        Vector m = Vector::Zero(n);
        Matrix m2 = Matrix::Zero(n, n);
        for (int d = 0; d < draws; ++d) {
            g.set_state(base);
            b.update(g, rng);
            const Vector x = b.read(g.state());
            m += x;
            m2 += x * x.transpose();
        }
        m /= draws;
        const Matrix c = m2 / draws - m * m.transpose();
        for (Index a = 0; a < n; ++a) {
            const double se = std::sqrt(cov(a, a) / draws);
            CHECK(std::abs(m(a) - mean(a)) < 4.0 * se);
            CHECK(c(a, a) == doctest::Approx(cov(a, a)).epsilon(0.05));
        }
    }
}

TEST_CASE("Geweke joint distribution test") {
    const auto r = geweke(20000, 2024);
    for (std::size_t i = 0; i < r.moments.size(); ++i) {
        const auto& mo = r.moments[i];
        CAPTURE(i);
        CAPTURE(mo.mc_mean);
        CAPTURE(mo.sc_mean);
        CHECK(std::abs(mo.z) < r.zcrit);
    }
    MESSAGE("Geweke moments monitored: " << r.moments.size() << ", critical |z| " << r.zcrit << ", failures "
                                          << r.failures);
}

TEST_CASE("pruning examples") {
    PanelState s = random_state(4, 2, {2, 2, 2}, 0, 13);
    ColumnNormWindow w = ColumnNormWindow::zeros(s);
    w.samples = 1;
    w.fixed[0] << 1.0, 1e-9;
    w.fixed[1] << 1.0, 1.0;
    w.fixed[2] << 0.0, 0.0;
    const Matrix b1 = s.beta1_fixed;
    const RankReport r = prune_ranks(s, w, 1e-6);
    CHECK(r.before == std::array<Index, 3>{2, 2, 2});
    CHECK(r.after == std::array<Index, 3>{1, 2, 1});
    CHECK(r.dropped[0] == std::vector<Index>{1});
    CHECK(r.refused_empty);
    CHECK(s.beta1_fixed == b1.col(0));
    CHECK(s.core.dims() == Tensor3::Dims{1, 2, 1});
    CHECK(s.hyper.factor[0].delta.size() == 1);
    CHECK(s.hyper.core.tau2.size() == 2);
    CHECK_NOTHROW(s.validate());

    // panel: a fixed column at zero but a live deviation survives
    PanelState p = random_state(4, 2, {2, 2, 2}, 2, 14);
    ColumnNormWindow pw = ColumnNormWindow::zeros(p);
    pw.samples = 2;
    pw.fixed[0] << 2.0, 0.0;
    pw.fixed[1] << 2.0, 2.0;
    pw.fixed[2] << 2.0, 2.0;
    pw.deviation[0] << 0.0, 0.0;
    pw.deviation[1] << 0.0, 1.0;
    const RankReport pr = prune_ranks(p, pw, 1e-3);
    CHECK(pr.after == std::array<Index, 3>{2, 2, 2});

    pw.deviation[1] << 0.0, 0.0;
    const RankReport gone = prune_ranks(p, pw, 1e-3);
    CHECK(gone.after == std::array<Index, 3>{1, 2, 2});
    CHECK(p.beta1_dev[1].cols() == 1);
    CHECK(p.hyper.deviation[1].tau2.cols() == 1);

    // remaining core entries keep their values
    PanelState q = random_state(3, 2, {2, 2, 2}, 0, 15);
    const Tensor3 core = q.core;
    ColumnNormWindow qw = ColumnNormWindow::zeros(q);
    qw.samples = 1;
    qw.fixed[0] << 1.0, 1.0;
    qw.fixed[1] << 0.0, 1.0;
    qw.fixed[2] << 1.0, 1.0;
    prune_ranks(q, qw, 1e-3);
    for (Index a = 0; a < 2; ++a) {
        for (Index c = 0; c < 2; ++c) {
            CHECK(q.core(a, 0, c) == core(a, 1, c));
        }
    }
}

TEST_CASE("pruning removes an unused column during burn-in") {
    const PanelData data = small_panel(1, 4, 1, 80, 16);
    SamplerConfig cfg = small_config(2, {3, 3, 2});
    cfg.iterations = 400;
    cfg.burn_in = 300;
    cfg.prune_threshold = 0.5;
    cfg.random_effects = false;
    FitRunner run(data, cfg);
    run.run();
    // a true lag order of one leaves the second beta3 row and some columns
    // weak; with a high relative cut the ranks must shrink and stay fixed
    // after burn-in
    const auto& trace = run.draws().rank_trace;
    REQUIRE(trace.size() == 400);
    CHECK_FALSE(run.rank_events().empty());
    for (std::size_t i = 300; i < trace.size(); ++i) {
        CHECK(trace[i] == trace.back());
    }
    CHECK(trace.back() != std::array<Index, 3>{3, 3, 2});
    for (std::size_t i = 0; i < 150; ++i) {
        CHECK(trace[i] == std::array<Index, 3>{3, 3, 2});
    }
}

TEST_CASE("fits are deterministic and resume bit-exactly") {
    const PanelData data = small_panel(3, 4, 2, 40, 17);
    SamplerConfig cfg = small_config(3, {3, 3, 2});
    cfg.prune_threshold = 0.3;
    const PosteriorDraws a = fit(data, cfg);
    const PosteriorDraws b = fit(data, cfg);
    REQUIRE(a.size() == 50);
    REQUIRE(b.size() == 50);

    FitRunner first(data, cfg);
    first.run_until(77);
    ChainState saved = first.chain();
    FitRunner second(data, cfg, saved);
    second.run();
    const PosteriorDraws& c = second.draws();
    REQUIRE(c.size() == a.size());
    CHECK(c.rank_trace == a.rank_trace);
    for (std::size_t d = 0; d < a.size(); ++d) {
        CHECK(a.b_fixed(d) == b.b_fixed(d));
        CHECK(a.b_fixed(d) == c.b_fixed(d));
        CHECK(a.b_subject(d, 2) == c.b_subject(d, 2));
        CHECK(a.draws[d].sigma2 == c.draws[d].sigma2);
        CHECK(a.draws[d].alpha[1] == c.draws[d].alpha[1]);
    }
    cfg.seed = 2;
    CHECK(fit(data, cfg).b_fixed(0) != a.b_fixed(0));
}

TEST_CASE("single-subject posterior agrees with least squares") {
    VarParams p;
    p.b = Matrix(3, 3);
    p.b << 0.5, 0.2, 0.0, -0.3, 0.4, 0.1, 0.0, 0.25, 0.6;
    p.nu = Vector::Constant(3, 0.2);
    PanelData data;
    data.y = {simulate(p, Vector::Zero(3), 500, 100, 18)};
    const auto ols = std::get<VarParams>(fit_ols(data.y[0], 1));

    SamplerConfig cfg = small_config(1, {3, 3, 1});
    cfg.iterations = 3000;
    cfg.burn_in = 1000;
    cfg.thin = 2;
    cfg.prune_enabled = false;
    const PosteriorDraws d = fit(data, cfg);
    const Matrix mean = d.mean_b_fixed();
    Matrix sd = Matrix::Zero(3, 3);
    for (const auto& b : d.b_fixed_samples()) {
        sd.array() += (b - mean).array().square();
    }
    sd = (sd / static_cast<double>(d.size() - 1)).cwiseSqrt();
    for (Index e = 0; e < 9; ++e) {
        CAPTURE(e);
        CHECK(std::abs(mean(e) - ols.b(e)) < 3.0 * sd(e));
    }
    CHECK((d.mean_nu() - ols.nu).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("lag selection from stored draws") {
    PosteriorDraws d;
    d.k = 2;
    d.lags = 3;
    d.subjects = 1;
    PanelState s = random_state(2, 3, {2, 2, 2}, 0, 19);
    s.beta3.row(2).setZero();
    for (int i = 0; i < 10; ++i) {
        d.draws.push_back(snapshot(s));
    }
    const LagSummary l = select_lags(d, DecisionConfig{});
    CHECK(l.active == std::vector<bool>{true, true, false});
    CHECK(l.edges[2] == 0);
    CHECK(l.mean_row_norm[2] == 0.0);
    CHECK(l.median_row_norm[0] == doctest::Approx(s.beta3.row(0).norm()));
}

TEST_CASE("configuration errors") {
    SamplerConfig c = small_config(2, {3, 3, 3});
    CHECK_THROWS_AS(c.validate(4), std::invalid_argument);
    c.ranks = {5, 3, 2};
    CHECK_THROWS_AS(c.validate(4), std::invalid_argument);
    c.ranks = {3, 3, 2};
    c.burn_in = 300;
    CHECK_THROWS_AS(c.validate(4), std::invalid_argument);
    const PanelData tiny = small_panel(1, 2, 1, 3, 20);
    SamplerConfig t = small_config(3, {2, 2, 2});
    CHECK_THROWS_AS(FitRunner(tiny, t), DimensionError);
}
