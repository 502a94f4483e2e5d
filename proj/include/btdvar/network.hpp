#pragma once

#include <cstddef>
#include <vector>

#include "btdvar/tensor.hpp"

namespace btdvar {

/// Boolean L x K x K edge indicators; cell (lag, target, source) mirrors
/// entry (target, source) of A_lag, i.e. an edge source -> target.
class EdgeSet {
public:
    EdgeSet() = default;
    EdgeSet(Index lags, Index k) : lags_(lags), k_(k), cells_(static_cast<std::size_t>(lags * k * k), 0) {}

    [[nodiscard]] Index lags() const noexcept { return lags_; }
    [[nodiscard]] Index k() const noexcept { return k_; }
    [[nodiscard]] std::size_t cell_count() const noexcept { return cells_.size(); }

    [[nodiscard]] bool operator()(Index lag, Index target, Index source) const noexcept {
        return cells_[offset(lag, target, source)] != 0;
    }
    void set(Index lag, Index target, Index source, bool on) noexcept {
        cells_[offset(lag, target, source)] = on ? 1 : 0;
    }

    [[nodiscard]] bool flat(std::size_t i) const noexcept { return cells_[i] != 0; }
    void set_flat(std::size_t i, bool on) noexcept { cells_[i] = on ? 1 : 0; }

    /// Same edges with the lag dimension padded with empty slices (or cut).
    [[nodiscard]] EdgeSet resized_lags(Index lags) const;

    /// OR across lags, K x K.
    [[nodiscard]] Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> composite() const;

    [[nodiscard]] std::size_t edge_count() const noexcept;

    friend bool operator==(const EdgeSet&, const EdgeSet&) = default;

private:
    [[nodiscard]] std::size_t offset(Index lag, Index target, Index source) const noexcept {
        return static_cast<std::size_t>(lag * k_ * k_ + source * k_ + target);
    }

    Index lags_ = 0;
    Index k_ = 0;
    std::vector<char> cells_;
};

/// Support of [A_1 ... A_L] (K x KL) as an edge set: nonzero means edge.
EdgeSet support_of(const Matrix& b, Index lags);

}  // namespace btdvar
