#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "btdvar/gc.hpp"
#include "btdvar/priors.hpp"
#include "btdvar/rng.hpp"
#include "btdvar/tensor.hpp"
#include "btdvar/var_process.hpp"

namespace btdvar {

struct SamplerConfig {
    Index lags = 6;
    std::array<Index, 3> ranks{10, 10, 6};
    int iterations = 5000;
    int burn_in = 2500;
    int thin = 5;
    std::uint64_t seed = 1;
    bool prune_enabled = true;
    double prune_threshold = 1e-3;  ///< relative to the largest column norm
    int prune_window = 50;
    HyperParameters hyper;
    /// Panel random effects (beta1 deviations and random intercepts). Only
    /// used when the data have more than one subject.
    bool random_effects = true;

    /// Rank bounds against K and L plus iteration bookkeeping.
    void validate(Index k) const;
    [[nodiscard]] int expected_draws() const noexcept { return (iterations - burn_in) / thin; }
};

/**
 * Full state of one chain.
 *
 * Subject i uses row loadings beta1_fixed + beta1_dev[i]; all subjects share
 * beta2, beta3, the core and nu. With random effects off, beta1_dev and
 * alpha are empty and the model is the single-subject one.
 */
struct PanelState {
    Matrix beta1_fixed;
    std::vector<Matrix> beta1_dev;
    Matrix beta2;
    Matrix beta3;
    Tensor3 core;
    Vector nu;
    std::vector<Vector> alpha;
    HyperState hyper;

    [[nodiscard]] Index k() const noexcept { return beta1_fixed.rows(); }
    [[nodiscard]] Index lags() const noexcept { return beta3.rows(); }
    [[nodiscard]] std::array<Index, 3> ranks() const noexcept {
        return {beta1_fixed.cols(), beta2.cols(), beta3.cols()};
    }
    [[nodiscard]] bool random_effects() const noexcept { return !beta1_dev.empty(); }

    /// beta1 used by subject i.
    [[nodiscard]] Matrix subject_beta1(std::size_t i) const;
    [[nodiscard]] Vector subject_alpha(std::size_t i) const;

    /// G_(1) (beta3 kron beta2)^T, R1 x KL.
    [[nodiscard]] Matrix loading_basis() const;
    [[nodiscard]] Matrix b_fixed() const;
    [[nodiscard]] Matrix b_subject(std::size_t i) const;
    [[nodiscard]] TuckerFactors fixed_factors() const;

    /// Dimension consistency across all blocks and hyperparameters.
    void validate() const;
};

/// Draw from the prior hierarchy (used by initialisation tests and the
/// marginal-conditional simulator of the joint-distribution check).
PanelState sample_prior_state(Index k, Index lags, std::array<Index, 3> ranks, std::size_t deviations,
                              const HyperParameters& hp, Rng& rng);

/// Starting state for a fit: factors and core i.i.d. N(0, 0.1^2), all scales
/// one, nu the pooled mean of first differences, alpha_i the subject mean
/// minus the pooled mean.
PanelState initial_state(const PanelData& data, const SamplerConfig& cfg, Rng& rng);

class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// H_t such that the conditional mean of y_{i,t} is affine in column r of
/// factor j (1..3) with slope H_t. `lags_vector` is the raw stacked
/// (y_{t-1}; ...; y_{t-L}); subject i's intercept is removed here. For j = 1
/// the matrix is shared by the fixed loadings and the subject deviation.
Matrix build_h_matrix(const PanelState& state, const Vector& lags_vector, int j, Index r, std::size_t subject);

/// Sufficient statistics of one column's Gaussian conditional: the sum of
/// H^T H and of H^T y~, where y~ excludes that column's own contribution.
struct ColumnSystem {
    Matrix gram;
    Vector rhs;
};

/**
 * Gibbs sampler for the Tucker-decomposed panel VAR.
 *
 * Holds the chain state and per-subject caches of the training data. Each
 * conditional update is exposed so it can be tested in isolation; sweep()
 * runs them in the standard order.
 */
class GibbsSampler {
public:
    GibbsSampler(const PanelData& data, const SamplerConfig& cfg, PanelState state);

    [[nodiscard]] const PanelState& state() const noexcept { return state_; }
    void set_state(PanelState state);
    /// Swap in new responses with the same shape (joint-distribution tests).
    void set_data(const PanelData& data);

    [[nodiscard]] std::size_t subjects() const noexcept { return subjects_.size(); }
    [[nodiscard]] Index observations_per_subject() const noexcept { return n_; }

    void sweep(Rng& rng);

    void update_sigma2(Rng& rng);
    void update_local_scales(Rng& rng);
    void update_global_scales(Rng& rng);
    void update_mgps(Rng& rng);
    /// Column r of factor j (1..3). For j = 1 this updates the fixed loadings
    /// and then every subject deviation.
    void update_factor_column(int j, Index r, Rng& rng);
    void update_factors(Rng& rng);
    void update_core(Rng& rng);
    void update_intercept(Rng& rng);
    void update_random_intercepts(Rng& rng);
    void update_auxiliaries(Rng& rng);
    void update_xi(Rng& rng);

    /// Column system for factor j, column r. For j = 1, `subject` selects a
    /// single subject's contribution (deviation update); std::nullopt sums
    /// over all subjects (fixed update and factors 2, 3).
    [[nodiscard]] ColumnSystem column_system(int j, Index r, std::optional<std::size_t> subject = std::nullopt) const;

    /// Residuals y - nu - alpha_i - B_i (x - alpha_i~) of subject i, K x n,
    /// from the incrementally maintained cache.
    [[nodiscard]] const Matrix& residuals(std::size_t i) const { return subjects_[i].e; }
    /// Responses (K x n) and raw stacked lags (KL x n) of subject i.
    [[nodiscard]] const Matrix& responses(std::size_t i) const { return subjects_[i].y; }
    [[nodiscard]] const Matrix& lag_design(std::size_t i) const { return subjects_[i].x; }

private:
    struct SubjectCache {
        Matrix y;     // K x n
        Matrix x;     // KL x n raw lags
        Matrix xxt;   // KL x KL
        Vector xsum;  // KL
        Matrix z;     // KL x n centred lags
        Matrix s;     // KL x KL centred second moments
        Matrix e;     // K x n residuals
        Matrix u;     // R1 x n, loading basis applied to z
    };

    void load_data(const PanelData& data);
    void refresh_all();
    void refresh_centering(std::size_t i);
    void refresh_basis();
    void refresh_residuals();
    void check_finite(const Matrix& m, const std::string& step) const;
    void check_finite(double v, const std::string& step) const;

    void update_beta1_column(Index r, Rng& rng);
    void update_beta2_column(Index r, Rng& rng);
    void update_beta3_column(Index r, Rng& rng);

    [[nodiscard]] double factor_quadratic(int j, Index r) const;
    [[nodiscard]] Index factor_entry_count(int j) const;

    SamplerConfig cfg_;
    PanelState state_;
    std::vector<SubjectCache> subjects_;
    Index n_ = 0;
    Matrix basis_;  // R1 x KL
};

/// Mean column norms of the factors over a window of iterations.
struct ColumnNormWindow {
    std::array<Vector, 3> fixed;
    std::vector<Vector> deviation;  ///< per subject, beta1 columns
    int samples = 0;

    static ColumnNormWindow zeros(const PanelState& s);
    void accumulate(const PanelState& s);
    [[nodiscard]] ColumnNormWindow averaged() const;

private:
    static void w_add(Vector& acc, const Matrix& m);
};

struct RankReport {
    std::array<Index, 3> before{};
    std::array<Index, 3> after{};
    std::array<std::vector<Index>, 3> dropped;  ///< zero-based columns removed
    bool refused_empty = false;                  ///< a factor kept its last column
};

/// Removes columns whose window-average norm falls below threshold times
/// the largest average norm of the same factor. A beta1 column is removed
/// only if the fixed loadings and every subject deviation fall below the
/// cut. A factor never loses its last column.
RankReport prune_ranks(PanelState& state, const ColumnNormWindow& window, double threshold);

/// One stored posterior draw in factored form.
struct PosteriorDraw {
    Matrix beta1_fixed;
    std::vector<Matrix> beta1_dev;
    Matrix beta2;
    Matrix beta3;
    Tensor3 core;
    Vector nu;
    std::vector<Vector> alpha;
    double sigma2 = 1.0;
    double spectral_radius = 0.0;  ///< of B_fixed; >= 1 flags an unstable draw
};

struct PosteriorDraws {
    Index k = 0;
    Index lags = 0;
    std::size_t subjects = 0;
    bool random_effects = false;
    std::vector<std::string> names;  ///< series labels, may be empty
    std::vector<PosteriorDraw> draws;
    std::vector<std::array<Index, 3>> rank_trace;  ///< active ranks per iteration

    [[nodiscard]] std::size_t size() const noexcept { return draws.size(); }
    [[nodiscard]] Matrix b_fixed(std::size_t d) const;
    /// B_i of subject i; equals b_fixed when there are no random effects.
    [[nodiscard]] Matrix b_subject(std::size_t d, std::size_t i) const;
    [[nodiscard]] Vector alpha(std::size_t d, std::size_t i) const;
    [[nodiscard]] std::vector<Matrix> b_fixed_samples() const;
    [[nodiscard]] std::vector<Matrix> b_subject_samples(std::size_t i) const;
    /// Euclidean norms of the rows of beta3 in draw d.
    [[nodiscard]] Vector beta3_row_norms(std::size_t d) const;

    [[nodiscard]] Matrix mean_b_fixed() const;
    [[nodiscard]] Matrix mean_b_subject(std::size_t i) const;
    [[nodiscard]] Vector mean_nu() const;
    [[nodiscard]] Vector mean_alpha(std::size_t i) const;
};

PosteriorDraw snapshot(const PanelState& s);

/**
 * Resumable chain: state, stream, iteration counter, stored draws and the
 * pruning window. Serialising this struct and constructing a FitRunner from
 * it continues the chain bit-exactly.
 */
struct ChainState {
    PanelState state;
    std::string rng_state;
    int iteration = 0;
    PosteriorDraws draws;
    ColumnNormWindow window;
    std::vector<RankReport> rank_events;
};

class FitRunner {
public:
    /// Fresh chain seeded from cfg.seed.
    FitRunner(const PanelData& data, const SamplerConfig& cfg);
    /// Continue a saved chain.
    FitRunner(const PanelData& data, const SamplerConfig& cfg, ChainState chain);

    [[nodiscard]] bool done() const noexcept { return chain_.iteration >= cfg_.iterations; }
    [[nodiscard]] int iteration() const noexcept { return chain_.iteration; }
    void step();
    void run_until(int iteration);
    void run() { run_until(cfg_.iterations); }

    /// Snapshot including the current stream state.
    [[nodiscard]] ChainState chain() const;
    [[nodiscard]] const PosteriorDraws& draws() const noexcept { return chain_.draws; }
    [[nodiscard]] const std::vector<RankReport>& rank_events() const noexcept { return chain_.rank_events; }
    [[nodiscard]] const PanelState& state() const noexcept { return sampler_.state(); }

private:
    SamplerConfig cfg_;
    Rng rng_;
    ChainState chain_;
    GibbsSampler sampler_;
};

/// Runs a full chain on the training rows of `data`.
PosteriorDraws fit(const PanelData& data, const SamplerConfig& cfg);

struct LagSummary {
    std::vector<bool> active;           ///< per lag
    std::vector<double> mean_row_norm;  ///< posterior mean of ||beta3 row||
    std::vector<double> median_row_norm;
    std::vector<std::size_t> edges;     ///< included coefficients per lag
};

/// A lag is inactive when no coefficient of B_fixed at that lag is included
/// by the loss-minimising decision rule.
LagSummary select_lags(const PosteriorDraws& draws, const DecisionConfig& decision);

}  // namespace btdvar
