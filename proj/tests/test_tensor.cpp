#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "btdvar/tensor.hpp"

using namespace btdvar;

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& g) {
    std::normal_distribution<double> n;
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j) {
        for (Index i = 0; i < r; ++i) {
            m(i, j) = n(g);
        }
    }
    return m;
}

Tensor3 random_tensor(Index a, Index b, Index c, std::mt19937_64& g) {
    std::normal_distribution<double> n;
    Tensor3 t(a, b, c);
    for (double& v : t.values()) {
        v = n(g);
    }
    return t;
}

// Entry (i_n, j) of the mode-n unfolding by the fiber definition: columns
// enumerate the remaining indices with the lower mode varying fastest.
double unfold_oracle(const Tensor3& t, int mode, Index row, Index col) {
    const auto& d = t.dims();
    switch (mode) {
        case 1:
            return t(row, col % d[1], col / d[1]);
        case 2:
            return t(col % d[0], row, col / d[0]);
        default:
            return t(col % d[0], col / d[0], row);
    }
}

// Triple sum over the core for one entry of the Tucker product.
double tucker_entry_oracle(const TuckerFactors& f, Index i, Index j, Index l) {
    double s = 0.0;
    const auto r = f.ranks();
    for (Index a = 0; a < r[0]; ++a) {
        for (Index b = 0; b < r[1]; ++b) {
            for (Index c = 0; c < r[2]; ++c) {
                s += f.core(a, b, c) * f.beta1(i, a) * f.beta2(j, b) * f.beta3(l, c);
            }
        }
    }
    return s;
}

TuckerFactors random_factors(Index k, Index lags, std::array<Index, 3> r, std::mt19937_64& g) {
    return {random_tensor(r[0], r[1], r[2], g), random_matrix(k, r[0], g), random_matrix(k, r[1], g),
            random_matrix(lags, r[2], g)};
}

}  // namespace

TEST_CASE("single nonzero entry unfolds to one cell") {
    Tensor3 t(2, 2, 2);
    t(0, 0, 0) = 5.0;
    const Matrix m = matricize(t, 1);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 4);
    CHECK(m(0, 0) == 5.0);
    CHECK(m.cwiseAbs().sum() == 5.0);
}

TEST_CASE("unfoldings follow the fiber definition") {
    Tensor3 t(2, 2, 2);
    for (Index i1 = 0; i1 < 2; ++i1) {
        for (Index i2 = 0; i2 < 2; ++i2) {
            for (Index i3 = 0; i3 < 2; ++i3) {
                t(i1, i2, i3) = static_cast<double>((i1 + 1) + 2 * i2 + 4 * i3);
            }
        }
    }
    std::mt19937_64 g(3);
    const Tensor3 r = random_tensor(3, 4, 2, g);
    for (const Tensor3* x : std::array<const Tensor3*, 2>{&t, &r}) {
        for (int mode = 1; mode <= 3; ++mode) {
            const Matrix m = matricize(*x, mode);
            CHECK(m.rows() == x->dim(mode));
            for (Index i = 0; i < m.rows(); ++i) {
                for (Index j = 0; j < m.cols(); ++j) {
                    CHECK(m(i, j) == unfold_oracle(*x, mode, i, j));
                }
            }
            CHECK(fold(m, mode, x->dims()) == *x);
        }
    }
    // mode 2 of the counting tensor, spelled out
    Matrix expect(2, 4);
    expect << 1, 2, 5, 6, 3, 4, 7, 8;
    CHECK(matricize(t, 2) == expect);
}

TEST_CASE("outer product unfolds to u (w kron v)^T") {
    std::mt19937_64 g(5);
    const Vector u = random_matrix(3, 1, g), v = random_matrix(2, 1, g), w = random_matrix(4, 1, g);
    const Tensor3 x = outer3(u, v, w);
    const Matrix expect = u * kronecker(w, v).transpose();
    CHECK((matricize(x, 1) - expect).norm() < 1e-14);
    for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 2; ++j) {
            for (Index l = 0; l < 4; ++l) {
                CHECK(x(i, j, l) == u(i) * v(j) * w(l));
            }
        }
    }
}

TEST_CASE("outer product corner cases") {
    const Vector e = Vector::Unit(2, 0);
    const Tensor3 x = outer3(e, e, e);
    CHECK(x(0, 0, 0) == 1.0);
    CHECK(x.frobenius_norm() == 1.0);
    CHECK(outer3(Vector::Zero(2), Vector::Ones(3), Vector::Ones(2)).frobenius_norm() == 0.0);
    Vector u(2), v(2), w(2);
    u << 1, 2;
    v << 3, 4;
    w << 5, 6;
    const Tensor3 y = outer3(u, v, w);
    CHECK(y(1, 0, 1) == 2.0 * 3.0 * 6.0);
    CHECK(y(0, 1, 0) == 1.0 * 4.0 * 5.0);
}

TEST_CASE("mode product against direct summation") {
    std::mt19937_64 g(7);
    const Tensor3 x = random_tensor(3, 2, 2, g);
    const Matrix m = random_matrix(4, 3, g);
    const Tensor3 y = mode_product(x, m, 1);
    REQUIRE(y.dims() == Tensor3::Dims{4, 2, 2});
    for (Index a = 0; a < 4; ++a) {
        for (Index j = 0; j < 2; ++j) {
            for (Index l = 0; l < 2; ++l) {
                double s = 0.0;
                for (Index i = 0; i < 3; ++i) {
                    s += m(a, i) * x(i, j, l);
                }
                CHECK(y(a, j, l) == doctest::Approx(s).epsilon(1e-13));
            }
        }
    }
    CHECK(mode_product(x, Matrix::Identity(3, 3), 1) == x);

    const Vector u = random_matrix(3, 1, g), v = random_matrix(2, 1, g), w = random_matrix(2, 1, g);
    const Tensor3 r1 = mode_product(outer3(u, v, w), m, 1);
    const Tensor3 expect = outer3(m * u, v, w);
    for (std::size_t i = 0; i < r1.values().size(); ++i) {
        CHECK(r1.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(mode_product(x, m, 2), DimensionError);
}

TEST_CASE("kronecker product") {
    Matrix a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 0, 1, 1, 0;
    const Matrix k = kronecker(a, b);
    REQUIRE(k.rows() == 4);
    for (Index i = 0; i < 4; ++i) {
        for (Index j = 0; j < 4; ++j) {
            CHECK(k(i, j) == a(i / 2, j / 2) * b(i % 2, j % 2));
        }
    }
    CHECK(kronecker(Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 3.0))(0, 0) == 6.0);
    const Matrix bd = kronecker(Matrix::Identity(2, 2), a);
    CHECK(bd.topLeftCorner(2, 2) == a);
    CHECK(bd.bottomRightCorner(2, 2) == a);
    CHECK(bd.topRightCorner(2, 2).isZero());
}

TEST_CASE("Tucker reconstruction matches the triple sum") {
    std::mt19937_64 g(11);
    const TuckerFactors f = random_factors(3, 2, {2, 2, 2}, g);
    const Tensor3 b = tucker_reconstruct(f);
    for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 3; ++j) {
            for (Index l = 0; l < 2; ++l) {
                const double o = tucker_entry_oracle(f, i, j, l);
                CHECK(std::abs(b(i, j, l) - o) <= 1e-12 * std::max(1.0, std::abs(o)));
            }
        }
    }
    const Matrix m = f.beta1 * matricize(f.core, 1) * kronecker(f.beta3, f.beta2).transpose();
    CHECK((tucker_matricized(f) - m).norm() < 1e-12 * m.norm());
    CHECK((matricize(b, 1) - m).norm() < 1e-12 * m.norm());
    CHECK((f.beta1 * tucker_loading_basis(f.core, f.beta2, f.beta3) - m).norm() < 1e-12 * m.norm());
}

TEST_CASE("Tucker degenerate cases") {
    std::mt19937_64 g(13);
    const Vector u = random_matrix(3, 1, g), v = random_matrix(3, 1, g), w = random_matrix(2, 1, g);
    TuckerFactors f{Tensor3(1, 1, 1, 1.0), u, v, w};
    CHECK(tucker_reconstruct(f) == outer3(u, v, w));

    const Tensor3 core = random_tensor(3, 3, 2, g);
    const TuckerFactors id{core, Matrix::Identity(3, 3), Matrix::Identity(3, 3), Matrix::Identity(2, 2)};
    CHECK(tucker_reconstruct(id) == core);

    TuckerFactors bad = f;
    bad.core = Tensor3(2, 1, 1);
    CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("zeroed beta3 row gives a zero lag slice") {
    std::mt19937_64 g(17);
    for (int rep = 0; rep < 20; ++rep) {
        TuckerFactors f = random_factors(4, 3, {2, 3, 2}, g);
        f.beta3.row(1).setZero();
        const Tensor3 b = tucker_reconstruct(f);
        CHECK(b.frontal_slice(1).isZero(0.0));
        CHECK(b.frontal_slice(0).norm() > 0.0);
    }
}

TEST_CASE("bad shapes raise DimensionError") {
    CHECK_THROWS_AS(Tensor3::from_values({2, 2, 2}, std::vector<double>(7)), DimensionError);
    CHECK_THROWS_AS(matricize(Tensor3(2, 2, 2), 4), DimensionError);
    CHECK_THROWS_AS(fold(Matrix::Zero(2, 3), 1, {2, 2, 2}), DimensionError);
}
