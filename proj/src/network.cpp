#include "btdvar/network.hpp"

#include <algorithm>

namespace btdvar {

EdgeSet EdgeSet::resized_lags(Index lags) const {
    EdgeSet out(lags, k_);
    const Index common = std::min(lags, lags_);
    for (Index l = 0; l < common; ++l) {
        for (Index s = 0; s < k_; ++s) {
            for (Index t = 0; t < k_; ++t) {
                out.set(l, t, s, (*this)(l, t, s));
            }
        }
    }
    return out;
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> EdgeSet::composite() const {
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> out =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(k_, k_, false);
    for (Index l = 0; l < lags_; ++l) {
        for (Index s = 0; s < k_; ++s) {
            for (Index t = 0; t < k_; ++t) {
                out(t, s) = out(t, s) || (*this)(l, t, s);
            }
        }
    }
    return out;
}

std::size_t EdgeSet::edge_count() const noexcept {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

EdgeSet support_of(const Matrix& b, Index lags) {
    const Index k = b.rows();
    if (lags <= 0 || b.cols() != k * lags) {
        throw DimensionError("coefficient matrix must be K x K*L");
    }
    EdgeSet e(lags, k);
    for (Index l = 0; l < lags; ++l) {
        for (Index s = 0; s < k; ++s) {
            for (Index t = 0; t < k; ++t) {
                e.set(l, t, s, b(t, l * k + s) != 0.0);
            }
        }
    }
    return e;
}

}  // namespace btdvar
