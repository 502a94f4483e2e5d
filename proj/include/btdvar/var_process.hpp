#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "btdvar/network.hpp"
#include "btdvar/tensor.hpp"

namespace btdvar {

/// y_t = nu + B x_t + eps_t with B = [A_1 ... A_L] (K x KL), eps ~ N(0, sigma2 I).
struct VarParams {
    Matrix b;
    Vector nu;
    double sigma2 = 1.0;

    [[nodiscard]] Index k() const noexcept { return b.rows(); }
    [[nodiscard]] Index lags() const noexcept { return b.rows() == 0 ? 0 : b.cols() / b.rows(); }
    [[nodiscard]] Matrix lag_matrix(Index lag) const { return b.middleCols(lag * k(), k()); }

    /// Throws DimensionError on shape problems or sigma2 <= 0. Simulation
    /// also accepts sigma2 == 0 (noiseless paths).
    void validate(bool allow_noiseless = false) const;
};

/// Subject i follows y = nu + alpha_i + (B_fixed + B_random_i)(x - alpha_i~) + eps.
struct PanelParams {
    VarParams shared;
    std::vector<Matrix> b_random;
    std::vector<Vector> alpha;

    [[nodiscard]] std::size_t subjects() const noexcept { return alpha.size(); }
    [[nodiscard]] Matrix subject_b(std::size_t i) const { return shared.b + b_random[i]; }
    void validate() const;
};

/// N subjects, each a T x K series. The trailing `holdout` rows of every
/// subject are reserved for one-step-ahead evaluation.
struct PanelData {
    std::vector<Matrix> y;
    std::vector<std::string> names;
    Index holdout = 0;

    [[nodiscard]] std::size_t subjects() const noexcept { return y.size(); }
    [[nodiscard]] Index t() const noexcept { return y.empty() ? 0 : y.front().rows(); }
    [[nodiscard]] Index k() const noexcept { return y.empty() ? 0 : y.front().cols(); }
    [[nodiscard]] Index train_t() const noexcept { return t() - holdout; }

    /// Consistent shapes, finite values, holdout < T.
    void validate() const;
    /// validate() plus train_t() > lags.
    void validate_for_lags(Index lags) const;
};

struct GcTruth {
    EdgeSet fixed;
    std::vector<EdgeSet> subjects;
};

Matrix companion_matrix(const VarParams& p);

struct StabilityReport {
    bool stable = false;
    double spectral_radius = 0.0;
};

/// Eigenvalue criterion on the companion matrix. Throws std::runtime_error if
/// the eigen solver does not converge.
StabilityReport is_stable(const VarParams& p);

class UnstableError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Limit mean (I - sum_l A_l)^{-1} nu + alpha of the random-effects recursion.
Vector stationary_mean(const VarParams& p, const Vector& alpha);

constexpr Index kDefaultBurnIn = 200;

/// T x K path of y_t = nu + alpha + sum_l A_l (y_{t-l} - alpha) + eps_t,
/// started at nu + alpha with `burn_in` leading steps discarded.
Matrix simulate(const VarParams& p, const Vector& alpha, Index t, Index burn_in, std::uint64_t seed);

/// Same recursion with caller-supplied innovations (rows of `noise`, which
/// must have burn_in + T rows). Used by simulate() and by tests.
Matrix simulate_with_noise(const VarParams& p, const Vector& alpha, const Matrix& noise, Index burn_in);

struct PanelSimOptions {
    std::size_t subjects = 1;
    Index t = 150;
    Index holdout = 0;
    Index burn_in = kDefaultBurnIn;
    double random_scale = 0.0;
    double alpha_scale = 0.0;
    int max_retries = 100;
};

struct PanelSimulation {
    PanelData data;
    PanelParams params;
    GcTruth truth;
};

/// Panel data around shared dynamics. Random effects are Gaussian with sd
/// random_scale * RMS(nonzero B_fixed entries) on the support of B_fixed;
/// each subject's B_i is redrawn until stable. Throws UnstableError when the
/// retry budget runs out. Every subject path is `t + holdout` rows long.
PanelSimulation simulate_panel(const VarParams& shared, const PanelSimOptions& opts, std::uint64_t seed);

struct TruthScenario {
    VarParams params;
    EdgeSet truth;
};

/// Stable VAR(L_true) whose A_l have an exactly zero lower-right K/2 x K/2
/// quadrant. The first K/2 series carry persistent own-lag dynamics (a
/// double root at 0.7 over lags 1 and 2) and weak inputs; the second half is
/// driven strongly by the first. Off-diagonal cells keep one random sign
/// across lags. Rescaled by 0.9 / rho if the companion radius reaches one.
TruthScenario make_block_diagonal_truth(Index k, Index lags_true, std::uint64_t seed);

/// Sparse community-structured network: series fall into communities of
/// about ten, each community couples through a sparse rank-2 block, plus a
/// few between-community hub edges at lag 1. Stabilised like the
/// block-diagonal truth.
TruthScenario make_community_truth(Index k, Index lags_true, std::uint64_t seed);

struct NotComputable {
    std::string reason;
};

using OlsResult = std::variant<VarParams, NotComputable>;

/// Equation-by-equation least squares of y_t on (1, x_t). Rank-deficient
/// designs (including T - L < 1 + K L) return NotComputable.
OlsResult fit_ols(const Matrix& series, Index lags);

/// Stacked lag vectors: column t holds (y_{t-1}; ...; y_{t-L}) for
/// t = L .. rows-1, so the result is KL x (rows - L).
Matrix lagged_design(const Matrix& series, Index lags);

/// One-step predictions nu + alpha + B (x_t - alpha~) for rows t in
/// [begin, end) of `series`, built from the observed lags; begin >= L.
Matrix predict_one_step(const Matrix& series, const Matrix& b, const Vector& nu, const Vector& alpha, Index begin,
                        Index end);

}  // namespace btdvar
