#include "btdvar/tensor.hpp"

#include <cmath>
#include <string>

namespace btdvar {

namespace {

void check_mode(int mode) {
    if (mode < 1 || mode > 3) {
        throw DimensionError("mode index must be 1, 2 or 3, got " + std::to_string(mode));
    }
}

// Position of (i1,i2,i3) in the mode-n unfolding: row i_n, column built from
// the two remaining indices with the lower mode fastest.
inline std::pair<Index, Index> unfold_position(const Tensor3::Dims& d, int mode, Index i1,
                                               Index i2, Index i3) {
    switch (mode) {
    case 1:
        return {i1, i2 + d[1] * i3};
    case 2:
        return {i2, i1 + d[0] * i3};
    default:
        return {i3, i1 + d[0] * i2};
    }
}

}  // namespace

Tensor3::Tensor3(Index d1, Index d2, Index d3, double fill) : dims_{d1, d2, d3} {
    if (d1 <= 0 || d2 <= 0 || d3 <= 0) {
        throw DimensionError("tensor dimensions must be positive");
    }
    values_.assign(static_cast<std::size_t>(d1 * d2 * d3), fill);
}

Tensor3 Tensor3::from_values(Dims dims, std::vector<double> values) {
    Tensor3 t(dims[0], dims[1], dims[2]);
    if (static_cast<Index>(values.size()) != t.size()) {
        throw DimensionError("value count does not match tensor dimensions");
    }
    t.values_ = std::move(values);
    return t;
}

Index Tensor3::dim(int mode) const {
    check_mode(mode);
    return dims_[static_cast<std::size_t>(mode - 1)];
}

double Tensor3::at(Index i1, Index i2, Index i3) const {
    if (i1 < 0 || i2 < 0 || i3 < 0 || i1 >= dims_[0] || i2 >= dims_[1] || i3 >= dims_[2]) {
        throw std::out_of_range("tensor index out of range");
    }
    return (*this)(i1, i2, i3);
}

double& Tensor3::at(Index i1, Index i2, Index i3) {
    if (i1 < 0 || i2 < 0 || i3 < 0 || i1 >= dims_[0] || i2 >= dims_[1] || i3 >= dims_[2]) {
        throw std::out_of_range("tensor index out of range");
    }
    return (*this)(i1, i2, i3);
}

Matrix Tensor3::frontal_slice(Index i3) const {
    if (i3 < 0 || i3 >= dims_[2]) {
        throw std::out_of_range("frontal slice index out of range");
    }
    Matrix m(dims_[0], dims_[1]);
    for (Index j = 0; j < dims_[1]; ++j) {
        for (Index i = 0; i < dims_[0]; ++i) {
            m(i, j) = (*this)(i, j, i3);
        }
    }
    return m;
}

double Tensor3::frobenius_norm() const {
    double s = 0.0;
    for (double v : values_) {
        s += v * v;
    }
    return std::sqrt(s);
}

Matrix matricize(const Tensor3& t, int mode) {
    check_mode(mode);
    const auto& d = t.dims();
    const Index rows = d[static_cast<std::size_t>(mode - 1)];
    Matrix m(rows, t.size() / rows);
    for (Index i3 = 0; i3 < d[2]; ++i3) {
        for (Index i2 = 0; i2 < d[1]; ++i2) {
            for (Index i1 = 0; i1 < d[0]; ++i1) {
                const auto [r, c] = unfold_position(d, mode, i1, i2, i3);
                m(r, c) = t(i1, i2, i3);
            }
        }
    }
    return m;
}

Tensor3 fold(const Matrix& m, int mode, const Tensor3::Dims& dims) {
    check_mode(mode);
    Tensor3 t(dims[0], dims[1], dims[2]);
    const Index rows = dims[static_cast<std::size_t>(mode - 1)];
    if (m.rows() != rows || m.cols() * rows != t.size()) {
        throw DimensionError("matrix shape does not match the requested fold");
    }
    for (Index i3 = 0; i3 < dims[2]; ++i3) {
        for (Index i2 = 0; i2 < dims[1]; ++i2) {
            for (Index i1 = 0; i1 < dims[0]; ++i1) {
                const auto [r, c] = unfold_position(dims, mode, i1, i2, i3);
                t(i1, i2, i3) = m(r, c);
            }
        }
    }
    return t;
}

Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode) {
    check_mode(mode);
    if (m.cols() != t.dim(mode)) {
        throw DimensionError("mode product: matrix has " + std::to_string(m.cols()) +
                             " columns but tensor mode " + std::to_string(mode) + " has size " +
                             std::to_string(t.dim(mode)));
    }
    Tensor3::Dims out = t.dims();
    out[static_cast<std::size_t>(mode - 1)] = m.rows();
    // (X x_n U)_(n) = U X_(n)
    return fold(m * matricize(t, mode), mode, out);
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

Tensor3 outer3(const Vector& u, const Vector& v, const Vector& w) {
    if (u.size() == 0 || v.size() == 0 || w.size() == 0) {
        throw DimensionError("outer product of empty vectors");
    }
    Tensor3 t(u.size(), v.size(), w.size());
    for (Index k = 0; k < w.size(); ++k) {
        for (Index j = 0; j < v.size(); ++j) {
            for (Index i = 0; i < u.size(); ++i) {
                t(i, j, k) = u(i) * v(j) * w(k);
            }
        }
    }
    return t;
}

void TuckerFactors::validate() const {
    const auto& g = core.dims();
    if (beta1.cols() != g[0] || beta2.cols() != g[1] || beta3.cols() != g[2]) {
        throw DimensionError("factor column counts do not match the core dimensions");
    }
    if (beta1.rows() != beta2.rows()) {
        throw DimensionError("beta1 and beta2 must have the same number of rows (K)");
    }
    if (beta1.cols() > beta1.rows() || beta2.cols() > beta2.rows() || beta3.cols() > beta3.rows()) {
        throw DimensionError("Tucker ranks exceed their dimension bounds (R1,R2 <= K, R3 <= L)");
    }
}

Tensor3 tucker_reconstruct(const TuckerFactors& f) {
    f.validate();
    return mode_product(mode_product(mode_product(f.core, f.beta1, 1), f.beta2, 2), f.beta3, 3);
}

Matrix tucker_loading_basis(const Tensor3& core, const Matrix& beta2, const Matrix& beta3) {
    if (beta2.cols() != core.dim(2) || beta3.cols() != core.dim(3)) {
        throw DimensionError("factor column counts do not match the core dimensions");
    }
    // G_(1) (beta3 kron beta2)^T without materialising the Kronecker product:
    // fold the mode-2/3 products into the core, then unfold along mode 1.
    return matricize(mode_product(mode_product(core, beta2, 2), beta3, 3), 1);
}

Matrix tucker_matricized(const TuckerFactors& f) {
    f.validate();
    return f.beta1 * tucker_loading_basis(f.core, f.beta2, f.beta3);
}

}  // namespace btdvar
