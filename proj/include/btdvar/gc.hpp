#pragma once

#include <optional>
#include <span>
#include <vector>

#include "btdvar/network.hpp"
#include "btdvar/tensor.hpp"

namespace btdvar {

/// Loss c * FP + FN with practical-zero window |a| < delta / 2.
struct DecisionConfig {
    double delta = 0.01;
    double c = 1.0;

    [[nodiscard]] double t_star() const noexcept { return c / (c + 1.0); }
    void validate() const;
};

/// Per-cell probabilities laid out like EdgeSet (lag, target, source).
class InclusionTensor {
public:
    InclusionTensor() = default;
    InclusionTensor(Index lags, Index k) : lags_(lags), k_(k), v_(static_cast<std::size_t>(lags * k * k), 0.0) {}

    [[nodiscard]] Index lags() const noexcept { return lags_; }
    [[nodiscard]] Index k() const noexcept { return k_; }
    [[nodiscard]] double operator()(Index lag, Index target, Index source) const noexcept {
        return v_[offset(lag, target, source)];
    }
    double& operator()(Index lag, Index target, Index source) noexcept { return v_[offset(lag, target, source)]; }
    [[nodiscard]] std::span<const double> flat() const noexcept { return v_; }
    [[nodiscard]] std::span<double> flat() noexcept { return v_; }

private:
    [[nodiscard]] std::size_t offset(Index lag, Index target, Index source) const noexcept {
        return static_cast<std::size_t>(lag * k_ * k_ + source * k_ + target);
    }

    Index lags_ = 0;
    Index k_ = 0;
    std::vector<double> v_;
};

/// v = 1 - fraction of draws with |a| < delta / 2, for every cell of the
/// K x KL coefficient draws.
InclusionTensor inclusion_probabilities(const std::vector<Matrix>& b_draws, Index lags, double delta);

struct GcNetwork {
    InclusionTensor probability;
    EdgeSet edges;
    double t_star = 0.5;

    [[nodiscard]] Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> composite() const { return edges.composite(); }
};

/// Edge where v >= t* (ties included).
GcNetwork decide_network(const InclusionTensor& v, const DecisionConfig& cfg);

struct ExpectedLoss {
    double false_positives = 0.0;
    double false_negatives = 0.0;
    double loss = 0.0;
};

ExpectedLoss expected_loss(std::span<const double> v, std::span<const char> d, double c);

/// Rates in percent; a rate is empty when its denominator is zero.
struct MetricsReport {
    std::optional<double> tpr;
    std::optional<double> tnr;
    std::optional<double> fpr;
    std::optional<double> fnr;
    std::optional<double> r2_in;
    std::optional<double> r2_out;
};

/// Counts over all (lag, target, source) cells; shapes must match.
MetricsReport score_network(const EdgeSet& estimate, const EdgeSet& truth);

/// 1 - SSE / SST pooled over variables, with SST around `means` (one per
/// column). Empty when SST is zero.
std::optional<double> r_squared(const Matrix& fitted, const Matrix& actual, const Vector& means);
/// Same, centring on the column means of `actual`.
std::optional<double> r_squared(const Matrix& fitted, const Matrix& actual);

struct RocPoint {
    double t_star;
    double fpr;
    double tpr;
};

/// Thresholds 0, 0.1, ..., 1.
std::vector<double> default_roc_grid();

std::vector<RocPoint> roc_sweep(const InclusionTensor& v, const EdgeSet& truth, const std::vector<double>& grid);

}  // namespace btdvar
