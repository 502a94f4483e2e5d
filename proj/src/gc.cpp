#include "btdvar/gc.hpp"

#include <cmath>
#include <stdexcept>

namespace btdvar {

void DecisionConfig::validate() const {
    if (!(delta > 0.0)) {
        throw std::invalid_argument("decision window delta must be positive");
    }
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw std::invalid_argument("false-positive weight c must be positive");
    }
}

InclusionTensor inclusion_probabilities(const std::vector<Matrix>& b_draws, Index lags, double delta) {
    if (b_draws.empty()) {
        throw std::invalid_argument("inclusion probabilities need at least one draw");
    }
    const Index k = b_draws.front().rows();
    if (lags <= 0 || b_draws.front().cols() != k * lags) {
        throw DimensionError("coefficient draws must be K x K*L");
    }
    const double half = delta / 2.0;
    InclusionTensor v(lags, k);
    for (const auto& b : b_draws) {
        if (b.rows() != k || b.cols() != k * lags) {
            throw DimensionError("coefficient draws have inconsistent shapes");
        }
        for (Index l = 0; l < lags; ++l) {
            for (Index s = 0; s < k; ++s) {
                for (Index t = 0; t < k; ++t) {
                    if (std::abs(b(t, l * k + s)) < half) {
                        v(l, t, s) += 1.0;
                    }
                }
            }
        }
    }
    const double n = static_cast<double>(b_draws.size());
    for (double& x : v.flat()) {
        x = 1.0 - x / n;
    }
    return v;
}

GcNetwork decide_network(const InclusionTensor& v, const DecisionConfig& cfg) {
    cfg.validate();
    GcNetwork net;
    net.probability = v;
    net.t_star = cfg.t_star();
    net.edges = EdgeSet(v.lags(), v.k());
    const auto p = v.flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
        net.edges.set_flat(i, p[i] >= net.t_star);
    }
    return net;
}

ExpectedLoss expected_loss(std::span<const double> v, std::span<const char> d, double c) {
    if (v.size() != d.size()) {
        throw DimensionError("probabilities and decisions differ in length");
    }
    ExpectedLoss out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (d[i] != 0) {
            out.false_positives += 1.0 - v[i];
        } else {
            out.false_negatives += v[i];
        }
    }
    out.loss = c * out.false_positives + out.false_negatives;
    return out;
}

MetricsReport score_network(const EdgeSet& estimate, const EdgeSet& truth) {
    if (estimate.lags() != truth.lags() || estimate.k() != truth.k()) {
        throw DimensionError("estimated and true networks differ in shape");
    }
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < truth.cell_count(); ++i) {
        const bool t = truth.flat(i);
        const bool e = estimate.flat(i);
        if (t) {
            (e ? tp : fn) += 1.0;
        } else {
            (e ? fp : tn) += 1.0;
        }
    }
    MetricsReport m;
    if (tp + fn > 0) {
        m.tpr = 100.0 * tp / (tp + fn);
        m.fnr = 100.0 - *m.tpr;
    }
    if (tn + fp > 0) {
        m.tnr = 100.0 * tn / (tn + fp);
        m.fpr = 100.0 - *m.tnr;
    }
    return m;
}

std::optional<double> r_squared(const Matrix& fitted, const Matrix& actual, const Vector& means) {
    if (fitted.rows() != actual.rows() || fitted.cols() != actual.cols() || means.size() != actual.cols()) {
        throw DimensionError("fitted values, actuals and means must match");
    }
    const double sse = (actual - fitted).squaredNorm();
    const double sst = (actual.rowwise() - means.transpose()).squaredNorm();
    if (!(sst > 0.0)) {
        return std::nullopt;
    }
    return 1.0 - sse / sst;
}

std::optional<double> r_squared(const Matrix& fitted, const Matrix& actual) {
    if (actual.rows() == 0) {
        return std::nullopt;
    }
    return r_squared(fitted, actual, actual.colwise().mean().transpose());
}

std::vector<double> default_roc_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) {
        grid.push_back(i / 10.0);
    }
    return grid;
}

std::vector<RocPoint> roc_sweep(const InclusionTensor& v, const EdgeSet& truth, const std::vector<double>& grid) {
    if (v.lags() != truth.lags() || v.k() != truth.k()) {
        throw DimensionError("probabilities and truth differ in shape");
    }
    std::vector<RocPoint> out;
    const auto p = v.flat();
    for (double t : grid) {
        if (t < 0.0 || t > 1.0) {
            throw std::invalid_argument("ROC thresholds must lie in [0, 1]");
        }
        EdgeSet est(v.lags(), v.k());
        for (std::size_t i = 0; i < p.size(); ++i) {
            est.set_flat(i, p[i] >= t);
        }
        const auto m = score_network(est, truth);
        out.push_back({t, m.fpr.value_or(0.0), m.tpr.value_or(0.0)});
    }
    return out;
}

}  // namespace btdvar
