#include <doctest.h>

#include <cmath>
#include <random>

#include "pera/numerics.hpp"
#include "test_support.hpp"

using namespace pera;
using pera::testing::random_matrix;

TEST_CASE("matmul basics") {
    Matrix m(2, 2);
    m << 1, 2, 3, 4;
    CHECK((matmul(Matrix::Identity(2, 2), m) - m).norm() == 0.0);

    Matrix v(2, 1);
    v << 0, 1;
    const Matrix out = matmul(m, v);
    CHECK(out(0, 0) == 2.0);
    CHECK(out(1, 0) == 4.0);

    CHECK_THROWS_AS(matmul(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("matmul matches a naive triple loop") {
    std::mt19937_64 rng(7);
    const Matrix a = random_matrix(rng, 8, 3);
    const Matrix b = random_matrix(rng, 3, 5);
    Matrix naive = Matrix::Zero(8, 5);
    for (Index i = 0; i < 8; ++i)
        for (Index j = 0; j < 5; ++j)
            for (Index k = 0; k < 3; ++k) naive(i, j) += a(i, k) * b(k, j);
    CHECK((matmul(a, b) - naive).norm() < 1e-13);
    CHECK((matmul(a, b) - matmul(b.transpose(), a.transpose()).transpose()).norm() < 1e-13);
}

TEST_CASE("matmul associativity on random conforming triples") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(rng, 6, 9);
        const Matrix b = random_matrix(rng, 9, 4);
        const Matrix c = random_matrix(rng, 4, 7);
        const Matrix lhs = matmul(matmul(a, b), c);
        const Matrix rhs = matmul(a, matmul(b, c));
        CHECK(pera::testing::rel_frobenius(lhs, rhs) < 1e-9);
    }
}

TEST_CASE("hadamard basics") {
    Matrix a(1, 2), b(1, 2);
    a << 1, 3;
    b << 2, 4;
    const Matrix p = hadamard(a, b);
    CHECK(p(0, 0) == 2.0);
    CHECK(p(0, 1) == 12.0);
    CHECK(hadamard(a, Matrix::Zero(1, 2)).isZero(0.0));
    CHECK((hadamard(a, a).array() >= 0.0).all());
    CHECK_THROWS_AS(hadamard(a, Matrix::Zero(2, 2)), ShapeError);
}

TEST_CASE("svd of a diagonal matrix") {
    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 3, 2, 1;
    const SvdResult result = svd(d);
    CHECK(result.singular_values(0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(result.singular_values(1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(result.singular_values(2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("svd of a rank-one outer product") {
    std::mt19937_64 rng(3);
    const Matrix u = random_matrix(rng, 9, 1);
    const Matrix v = random_matrix(rng, 6, 1);
    const SvdResult result = svd(u * v.transpose());
    CHECK(result.singular_values(1) <= 1e-12 * result.singular_values(0));
}

TEST_CASE("svd reconstruction, orthonormality, Frobenius identity") {
    std::mt19937_64 rng(17);
    for (auto [rows, cols] : {std::pair<int, int>{16, 16}, {24, 8}, {8, 24}}) {
        for (int trial = 0; trial < 100; ++trial) {
            const Matrix m = random_matrix(rng, rows, cols);
            const SvdResult result = svd(m);
            for (Index k = 1; k < result.singular_values.size(); ++k)
                CHECK(result.singular_values(k - 1) >= result.singular_values(k));
            const Matrix rebuilt = result.left_vectors *
                                   result.singular_values.asDiagonal() *
                                   result.right_vectors.transpose();
            CHECK((rebuilt - m).norm() / m.norm() < 1e-9);
            const Matrix utu = result.left_vectors.transpose() * result.left_vectors;
            const Matrix vtv = result.right_vectors.transpose() * result.right_vectors;
            const Index d = result.singular_values.size();
            CHECK((utu - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);
            CHECK((vtv - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
    const Matrix m = random_matrix(rng, 16, 16);
    const double from_sv = std::sqrt(svd(m).singular_values.squaredNorm());
    CHECK(std::abs(from_sv - m.norm()) / m.norm() < 1e-10);
}

TEST_CASE("svd rejects non-finite input") {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = std::nan("");
    CHECK_THROWS_AS(svd(m), std::domain_error);
}

TEST_CASE("numeric_rank threshold behavior") {
    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 1.0, 1e-15;
    CHECK(numeric_rank(d, 1e-10) == 1);
    CHECK(numeric_rank(Matrix::Zero(4, 4)) == 0);
    CHECK_THROWS_AS(numeric_rank(d, 0.0), std::domain_error);
    CHECK_THROWS_AS(numeric_rank(d, 1.0), std::domain_error);
}

TEST_CASE("numeric_rank of a rank-5 product") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix m = random_matrix(rng, 16, 5) * random_matrix(rng, 5, 16);
        const Vector sv = svd(m).singular_values;
        REQUIRE(sv(5) / sv(0) < 1e-10);  // sampled instances are honestly rank 5
        CHECK(numeric_rank(m) == 5);
    }
}

TEST_CASE("numeric_rank is monotone non-increasing in rel_tol") {
    std::mt19937_64 rng(29);
    const Matrix m = random_matrix(rng, 12, 12);
    int prev = 12;
    for (double tol : {1e-14, 1e-10, 1e-6, 1e-2, 0.5}) {
        const int rank = numeric_rank(m, tol);
        CHECK(rank <= prev);
        prev = rank;
    }
}

TEST_CASE("finite_diff_grad on simple functions") {
    auto square = [](const Vector& x) { return x(0) * x(0); };
    Vector x(1);
    x << 3.0;
    CHECK(finite_diff_grad(square, x)(0) == doctest::Approx(6.0).epsilon(1e-7));

    auto constant = [](const Vector&) { return 4.2; };
    Vector x2 = Vector::Ones(3);
    CHECK(finite_diff_grad(constant, x2).cwiseAbs().maxCoeff() < 1e-12);

    auto mixed = [](const Vector& v) { return std::sin(v(0)) + v(1) * v(1); };
    Vector x3(2);
    x3 << 0.0, 1.0;
    const Vector g = finite_diff_grad(mixed, x3);
    CHECK(g(0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(g(1) == doctest::Approx(2.0).epsilon(1e-7));

    CHECK_THROWS_AS(finite_diff_grad(square, x, 0.0), std::domain_error);
    auto bad = [](const Vector& v) { return std::log(v(0) - 10.0); };
    CHECK_THROWS_AS(finite_diff_grad(bad, x), std::domain_error);
}

TEST_CASE("finite_diff_grad is exact for degree-2 polynomials") {
    std::mt19937_64 rng(31);
    const Matrix q = random_matrix(rng, 4, 4);
    const Vector lin = pera::testing::random_vector(rng, 4);
    auto quadratic = [&](const Vector& v) {
        return (0.5 * v.transpose() * q * v + lin.transpose() * v).value();
    };
    const Vector x = pera::testing::random_vector(rng, 4);
    const Vector expected = 0.5 * (q + q.transpose()) * x + lin;
    CHECK((finite_diff_grad(quadratic, x) - expected).cwiseAbs().maxCoeff() < 1e-7);
}
