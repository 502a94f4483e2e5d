#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "btdvar/priors.hpp"

using namespace btdvar;

namespace {

double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// kappa for column r of a full prior hierarchy with unit noise variance.
std::vector<std::vector<double>> hierarchy_kappas(int draws, Index columns, std::uint64_t seed) {
    Rng rng(seed);
    HyperParameters hp;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(columns));
    for (int d = 0; d < draws; ++d) {
        const HyperState h = sample_hyper_prior(1, 1, {columns, 1, 1}, 0, hp, rng);
        for (Index r = 0; r < columns; ++r) {
            out[static_cast<std::size_t>(r)].push_back(kappa(prior_beta_variance(h.factor[0], 1.0, 0, r)));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("half-Cauchy mixture has the standard median") {
    Rng rng(1);
    std::vector<double> x;
    for (int i = 0; i < 100000; ++i) {
        x.push_back(std::sqrt(sample_half_cauchy_sq(1.0, rng).value));
    }
    // CDF of C+(0,1) is (2/pi) atan(x); the median is tan(pi/4) = 1
    CHECK(std::abs(median(x) - std::tan(std::numbers::pi / 4)) < 0.03);

    // scale 2: quartiles at 2 tan(pi/8) and 2 tan(3 pi/8)
    std::vector<double> y;
    for (int i = 0; i < 100000; ++i) {
        y.push_back(std::sqrt(sample_half_cauchy_sq(2.0, rng).value));
    }
    std::sort(y.begin(), y.end());
    CHECK(y[25000] == doctest::Approx(2.0 * std::tan(std::numbers::pi / 8)).epsilon(0.05));
    CHECK(y[75000] == doctest::Approx(2.0 * std::tan(3 * std::numbers::pi / 8)).epsilon(0.05));
}

TEST_CASE("conditional of x^2 given the auxiliary is inverse gamma") {
    // x^2 | a ~ Inv-Ga(1/2, 1/a): 1/x^2 ~ Ga(1/2, rate 1/a), mean a/2, var a^2/2
    Rng rng(2);
    const double a = 3.0;
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = 1.0 / rng.inv_gamma(0.5, 1.0 / a);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(mean == doctest::Approx(a / 2).epsilon(0.02));
    CHECK(var == doctest::Approx(a * a / 2).epsilon(0.05));

    // inverse-gamma moments: shape 4, scale 3 -> mean 1, var 1/2
    double m = 0.0, q = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.inv_gamma(4.0, 3.0);
        m += v;
        q += v * v;
    }
    m /= n;
    CHECK(m == doctest::Approx(1.0).epsilon(0.01));
    CHECK(q / n - m * m == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("equal seeds give equal streams") {
    Rng a(77), b(77);
    for (int i = 0; i < 100; ++i) {
        CHECK(sample_half_cauchy_sq(1.0, a).value == sample_half_cauchy_sq(1.0, b).value);
    }
    Rng c(5);
    c.normal();
    Rng d(1);
    d.restore(c.state());
    CHECK(c == d);
    CHECK(c.normal() == d.normal());
}

TEST_CASE("MGPS running products") {
    CHECK(mgps_psi(Vector::Constant(3, 1.0)) == Vector::Constant(3, 1.0));
    Vector d(2);
    d << 2, 3;
    const Vector psi = mgps_psi(d);
    CHECK(psi(0) == 2.0);
    CHECK(psi(1) == 6.0);
    d(1) = 0.0;
    CHECK_THROWS_AS(mgps_psi(d), std::domain_error);
}

TEST_CASE("MGPS column shrinkage increases with the column index") {
    Rng rng(3);
    std::vector<std::vector<double>> psi(4);
    for (int i = 0; i < 100000; ++i) {
        const Vector p = mgps_psi(sample_mgps_delta(4, 2.1, 3.1, rng));
        for (Index r = 0; r < 4; ++r) {
            psi[static_cast<std::size_t>(r)].push_back(p(r));
        }
    }
    double prev = 0.0;
    for (const auto& col : psi) {
        const double m = median(col);
        CHECK(m > prev);
        prev = m;
    }
}

TEST_CASE("prior entry draws") {
    HyperState h;
    h.sigma2 = 1.0;
    h.factor[0] = FactorShrinkage::ones(2, 2);
    Rng rng(4);
    const int n = 100000;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = draw_prior_beta_entry(1, 0, 1, h, rng);
        s2 += v * v;
    }
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));

    FactorShrinkage s = FactorShrinkage::ones(1, 1);
    s.delta(0) = 4.0;
    s.recompute_psi();
    CHECK(prior_beta_variance(s, 1.0, 0, 0) == 0.25);
    CHECK_THROWS(draw_prior_beta_entry(4, 0, 0, h, rng));
}

TEST_CASE("shrinkage coefficient") {
    CHECK(kappa(0.0) == 1.0);
    CHECK(kappa(1.0) == 0.5);
    CHECK_THROWS(kappa(-1.0));
}

TEST_CASE("vanilla horseshoe kappa is Beta(1/2, 1/2)") {
    Rng rng(5);
    const int n = 100000;
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double k = kappa(sample_half_cauchy_sq(1.0, rng).value);
        m1 += k;
        m2 += k * k;
    }
    m1 /= n;
    m2 /= n;
    // Beta(a, b): mean a/(a+b), E[k^2] = a(a+1)/((a+b)(a+b+1))
    const double a = 0.5, b = 0.5;
    CHECK(std::abs(m1 - a / (a + b)) < 0.01);
    CHECK(std::abs(m2 - a * (a + 1) / ((a + b) * (a + b + 1))) < 0.01);
}

TEST_CASE("hierarchy shrinkage shifts right with the column index") {
    const auto k = hierarchy_kappas(100000, 4, 6);
    double prev = -1.0;
    for (const auto& col : k) {
        const double m = median(col);
        CHECK(m > prev);
        prev = m;
    }
}

TEST_CASE("sampled hierarchy has consistent shapes") {
    Rng rng(7);
    const HyperState h = sample_hyper_prior(5, 3, {3, 2, 2}, 2, HyperParameters{}, rng);
    CHECK(h.factor[0].tau2.rows() == 5);
    CHECK(h.factor[0].tau2.cols() == 3);
    CHECK(h.factor[2].tau2.rows() == 3);
    CHECK(h.core.tau2.size() == 12);
    CHECK(h.nu.tau2.size() == 5);
    CHECK(h.deviation.size() == 2);
    for (const auto& f : h.factor) {
        CHECK((f.psi - mgps_psi(f.delta)).norm() == 0.0);
        CHECK((f.tau2.array() > 0.0).all());
    }
}
