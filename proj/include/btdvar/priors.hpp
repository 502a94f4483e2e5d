#pragma once

#include <array>
#include <vector>

#include "btdvar/rng.hpp"
#include "btdvar/tensor.hpp"

namespace btdvar {

/// Lower bound applied to every sampled scale parameter.
constexpr double kScaleFloor = 1e-12;

inline double floor_scale(double v) noexcept { return v < kScaleFloor ? kScaleFloor : v; }

struct HyperParameters {
    double a1 = 2.1;
    double a2 = 3.1;
    double a_sigma = 1.0;
    double b_sigma = 1.0;
};

/// Horseshoe-MGPS shrinkage for one factor matrix.
///
/// Entry (k, r) has prior variance tau2(k, r) * lambda2 * sigma2 / psi(r),
/// with tau2 | phi ~ Inv-Ga(1/2, 1/phi), phi ~ Inv-Ga(1/2, 1) and
/// psi(r) = delta(0) * ... * delta(r).
struct FactorShrinkage {
    Matrix tau2;
    Matrix phi;
    double lambda2 = 1.0;
    Vector delta;
    Vector psi;

    static FactorShrinkage ones(Index rows, Index cols);
    void recompute_psi();
};

/// Local scales of a subject's beta1 deviation; lambda2 and psi are shared
/// with the fixed beta1.
struct LocalScales {
    Matrix tau2;
    Matrix phi;
};

/// Elementwise horseshoe scales (core tensor or intercept), flattened.
struct HorseshoeScales {
    Vector tau2;
    Vector phi;
    double lambda2 = 1.0;

    static HorseshoeScales ones(Index n);
};

/**
 * Every shrinkage parameter of one chain.
 *
 * `factor[0..2]` hold beta1 (fixed part), beta2 and beta3; `deviation[i]`
 * holds the separate local scales of subject i's beta1 deviation, which
 * shares lambda2 and psi with factor[0]. `xi` is the auxiliary behind all
 * global scales of the factors, core and intercept. The random intercepts
 * use their own global scale `alpha_lambda2` with auxiliary `alpha_phi`.
 */
struct HyperState {
    std::array<FactorShrinkage, 3> factor;
    std::vector<LocalScales> deviation;
    HorseshoeScales core;
    HorseshoeScales nu;
    double xi = 1.0;
    double alpha_lambda2 = 1.0;
    double alpha_phi = 1.0;
    double sigma2 = 1.0;
    HyperParameters params;
};

struct HalfCauchyDraw {
    double value;      ///< x^2 where x ~ C+(0, scale)
    double auxiliary;  ///< the mixing variable a
};

/// x^2 | a ~ Inv-Ga(1/2, 1/a), a ~ Inv-Ga(1/2, 1/scale^2).
HalfCauchyDraw sample_half_cauchy_sq(double scale, Rng& rng);

/// Running products of MGPS increments. Throws std::domain_error on a
/// non-positive increment.
Vector mgps_psi(const Vector& delta);

/// One MGPS increment vector of length `columns` from its prior:
/// delta(0) ~ Ga(a1, 1), delta(r >= 1) ~ Ga(a2, 1).
Vector sample_mgps_delta(Index columns, double a1, double a2, Rng& rng);

/// Normal(0, tau2(k,r) lambda2 sigma2 / psi(r)) draw for factor j.
double draw_prior_beta_entry(int j, Index k, Index r, const HyperState& hyper, Rng& rng);

/// Prior variance of one factor entry under the full hierarchy.
double prior_beta_variance(const FactorShrinkage& s, double sigma2, Index k, Index r);

/// Shrinkage coefficient 1 / (1 + sigma2_beta).
double kappa(double sigma2_beta);

/// Draws a complete HyperState from the prior for the given ranks.
HyperState sample_hyper_prior(Index k, Index lags, std::array<Index, 3> ranks, std::size_t deviations,
                              const HyperParameters& params, Rng& rng);

}  // namespace btdvar
