#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace btdvar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/**
 * Dense 3-way tensor with dims (I1, I2, I3).
 *
 * Storage is column-major over the modes: entry (i1, i2, i3) lives at
 * i1 + I1 * (i2 + I2 * i3), so the first index varies fastest. Every
 * matricization in this library follows the same ordering, which is what
 * makes B_(1) = beta1 * G_(1) * (beta3 kron beta2)^T hold.
 */
class Tensor3 {
public:
    using Dims = std::array<Index, 3>;

    Tensor3() = default;
    Tensor3(Index d1, Index d2, Index d3, double fill = 0.0);

    static Tensor3 from_values(Dims dims, std::vector<double> values);

    [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
    [[nodiscard]] Index dim(int mode) const;
    [[nodiscard]] Index size() const noexcept { return static_cast<Index>(values_.size()); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

    // Unchecked access; indices are zero-based.
    double& operator()(Index i1, Index i2, Index i3) noexcept {
        return values_[static_cast<std::size_t>(i1 + dims_[0] * (i2 + dims_[1] * i3))];
    }
    double operator()(Index i1, Index i2, Index i3) const noexcept {
        return values_[static_cast<std::size_t>(i1 + dims_[0] * (i2 + dims_[1] * i3))];
    }

    // Bounds-checked access; throws std::out_of_range.
    [[nodiscard]] double at(Index i1, Index i2, Index i3) const;
    double& at(Index i1, Index i2, Index i3);

    [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }

    /// Frontal slice (:, :, i3) as an I1 x I2 matrix.
    [[nodiscard]] Matrix frontal_slice(Index i3) const;

    [[nodiscard]] double frobenius_norm() const;

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    Dims dims_{0, 0, 0};
    std::vector<double> values_;
};

/// Mode-n unfolding; `mode` is 1, 2 or 3. Columns are mode-n fibers with the
/// remaining indices ordered lower mode fastest.
Matrix matricize(const Tensor3& t, int mode);

/// Inverse of matricize for a known target shape.
Tensor3 fold(const Matrix& m, int mode, const Tensor3::Dims& dims);

/// t x_n m, where m is J x I_n.
Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode);

Matrix kronecker(const Matrix& a, const Matrix& b);

Tensor3 outer3(const Vector& u, const Vector& v, const Vector& w);

/// Core tensor G (R1 x R2 x R3) with factors beta1 (K x R1), beta2 (K x R2),
/// beta3 (L x R3).
struct TuckerFactors {
    Tensor3 core;
    Matrix beta1;
    Matrix beta2;
    Matrix beta3;

    [[nodiscard]] Index k() const noexcept { return beta1.rows(); }
    [[nodiscard]] Index lags() const noexcept { return beta3.rows(); }
    [[nodiscard]] std::array<Index, 3> ranks() const noexcept {
        return {beta1.cols(), beta2.cols(), beta3.cols()};
    }

    /// Throws DimensionError when the factors do not fit the core or the
    /// rank bounds R1, R2 <= K and R3 <= L are violated.
    void validate() const;
};

/// B = G x1 beta1 x2 beta2 x3 beta3, a K x K x L tensor.
Tensor3 tucker_reconstruct(const TuckerFactors& f);

/// G_(1) (beta3 kron beta2)^T, the R1 x (K L) matrix shared by every row
/// loading in the panel model.
Matrix tucker_loading_basis(const Tensor3& core, const Matrix& beta2, const Matrix& beta3);

/// B_(1) = beta1 G_(1) (beta3 kron beta2)^T, i.e. [A_1 ... A_L].
Matrix tucker_matricized(const TuckerFactors& f);

}  // namespace btdvar
