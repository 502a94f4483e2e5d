#include "btdvar/priors.hpp"

#include <cmath>
#include <stdexcept>

namespace btdvar {

FactorShrinkage FactorShrinkage::ones(Index rows, Index cols) {
    FactorShrinkage s;
    s.tau2 = Matrix::Ones(rows, cols);
    s.phi = Matrix::Ones(rows, cols);
    s.lambda2 = 1.0;
    s.delta = Vector::Ones(cols);
    s.psi = Vector::Ones(cols);
    return s;
}

void FactorShrinkage::recompute_psi() { psi = mgps_psi(delta); }

HorseshoeScales HorseshoeScales::ones(Index n) {
    HorseshoeScales s;
    s.tau2 = Vector::Ones(n);
    s.phi = Vector::Ones(n);
    s.lambda2 = 1.0;
    return s;
}

HalfCauchyDraw sample_half_cauchy_sq(double scale, Rng& rng) {
    const double a = floor_scale(rng.inv_gamma(0.5, 1.0 / (scale * scale)));
    const double x2 = floor_scale(rng.inv_gamma(0.5, 1.0 / a));
    return {x2, a};
}

Vector mgps_psi(const Vector& delta) {
    Vector psi(delta.size());
    double running = 1.0;
    for (Index r = 0; r < delta.size(); ++r) {
        if (!(delta(r) > 0.0)) {
            throw std::domain_error("MGPS increments must be positive");
        }
        running *= delta(r);
        psi(r) = running;
    }
    return psi;
}

Vector sample_mgps_delta(Index columns, double a1, double a2, Rng& rng) {
    Vector delta(columns);
    for (Index r = 0; r < columns; ++r) {
        delta(r) = floor_scale(rng.gamma(r == 0 ? a1 : a2, 1.0));
    }
    return delta;
}

double prior_beta_variance(const FactorShrinkage& s, double sigma2, Index k, Index r) {
    return s.tau2(k, r) * s.lambda2 * sigma2 / s.psi(r);
}

double draw_prior_beta_entry(int j, Index k, Index r, const HyperState& hyper, Rng& rng) {
    if (j < 1 || j > 3) {
        throw std::out_of_range("factor index must be 1, 2 or 3");
    }
    const auto& s = hyper.factor[static_cast<std::size_t>(j - 1)];
    return std::sqrt(prior_beta_variance(s, hyper.sigma2, k, r)) * rng.normal();
}

double kappa(double sigma2_beta) {
    if (sigma2_beta < 0.0) {
        throw std::domain_error("variance must be non-negative");
    }
    return 1.0 / (1.0 + sigma2_beta);
}

namespace {

FactorShrinkage sample_factor(Index rows, Index cols, double lambda2, const HyperParameters& hp, Rng& rng) {
    FactorShrinkage s;
    s.tau2.resize(rows, cols);
    s.phi.resize(rows, cols);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) {
            const auto d = sample_half_cauchy_sq(1.0, rng);
            s.tau2(r, c) = d.value;
            s.phi(r, c) = d.auxiliary;
        }
    }
    s.lambda2 = lambda2;
    s.delta = sample_mgps_delta(cols, hp.a1, hp.a2, rng);
    s.recompute_psi();
    return s;
}

HorseshoeScales sample_elementwise(Index n, double lambda2, Rng& rng) {
    HorseshoeScales s;
    s.tau2.resize(n);
    s.phi.resize(n);
    for (Index i = 0; i < n; ++i) {
        const auto d = sample_half_cauchy_sq(1.0, rng);
        s.tau2(i) = d.value;
        s.phi(i) = d.auxiliary;
    }
    s.lambda2 = lambda2;
    return s;
}

}  // namespace

HyperState sample_hyper_prior(Index k, Index lags, std::array<Index, 3> ranks, std::size_t deviations,
                              const HyperParameters& params, Rng& rng) {
    HyperState h;
    h.params = params;
    h.sigma2 = floor_scale(rng.inv_gamma(params.a_sigma, params.b_sigma));
    h.xi = floor_scale(rng.inv_gamma(0.5, 1.0));
    auto global = [&] { return floor_scale(rng.inv_gamma(0.5, 1.0 / h.xi)); };
    const Index rows[3] = {k, k, lags};
    for (std::size_t j = 0; j < 3; ++j) {
        h.factor[j] = sample_factor(rows[j], ranks[j], global(), params, rng);
    }
    for (std::size_t i = 0; i < deviations; ++i) {
        LocalScales d{Matrix(k, ranks[0]), Matrix(k, ranks[0])};
        for (Index c = 0; c < ranks[0]; ++c) {
            for (Index r = 0; r < k; ++r) {
                const auto draw = sample_half_cauchy_sq(1.0, rng);
                d.tau2(r, c) = draw.value;
                d.phi(r, c) = draw.auxiliary;
            }
        }
        h.deviation.push_back(std::move(d));
    }
    h.core = sample_elementwise(ranks[0] * ranks[1] * ranks[2], global(), rng);
    h.nu = sample_elementwise(k, global(), rng);
    if (deviations > 0) {
        const auto d = sample_half_cauchy_sq(1.0, rng);
        h.alpha_lambda2 = d.value;
        h.alpha_phi = d.auxiliary;
    }
    return h;
}

}  // namespace btdvar
