#include <doctest.h>

#include <random>

#include "pera/expansion.hpp"
#include "pera/numerics.hpp"
#include "test_support.hpp"

using namespace pera;
using pera::testing::random_matrix;
using pera::testing::rel_frobenius;

namespace {

CoeffVector random_coeff(std::mt19937_64& rng, int r, Variant variant = Variant::full) {
    CoeffVector coeff = CoeffVector::zeros(r, variant);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < coeff.size(); ++k)
        if (!coeff.frozen[static_cast<std::size_t>(k)]) coeff.h(k) = gauss(rng);
    return coeff;
}

}  // namespace

TEST_CASE("pair_order enumeration") {
    const PairOrder o1(1);
    CHECK(o1.expanded_dim() == 2);
    CHECK(o1.term(0) == Descriptor{0, -1});
    CHECK(o1.term(1) == Descriptor{0, 0});

    const PairOrder o2(2);
    CHECK(o2.expanded_dim() == 5);
    CHECK(o2.term(0) == Descriptor{0, -1});
    CHECK(o2.term(1) == Descriptor{1, -1});
    CHECK(o2.term(2) == Descriptor{0, 0});
    CHECK(o2.term(3) == Descriptor{1, 1});
    CHECK(o2.term(4) == Descriptor{0, 1});

    CHECK(PairOrder::expanded_dim_for(32) == 560);
    CHECK_THROWS_AS(pair_order(0), std::domain_error);
}

TEST_CASE("descriptor round trip is the identity for r <= 64") {
    for (int r = 1; r <= 64; ++r) {
        const PairOrder order(r);
        for (int k = 0; k < order.expanded_dim(); ++k)
            CHECK(order.index_of(order.term(k)) == k);
    }
}

TEST_CASE("expand_b worked examples") {
    Matrix b(2, 2);
    b << 1, 2, 3, 4;
    const Matrix b_hat = expand_b(b);
    Matrix expected(2, 5);
    expected << 1, 2, 1, 4, 2, 3, 4, 9, 16, 12;
    CHECK((b_hat - expected).norm() == 0.0);

    CHECK(expand_b(Matrix::Zero(3, 2)).isZero(0.0));

    Matrix b1(2, 1);
    b1 << 2, -1;
    Matrix expected1(2, 2);
    expected1 << 2, 4, -1, 1;
    CHECK((expand_b(b1) - expected1).norm() == 0.0);
}

TEST_CASE("expand_a worked examples") {
    Matrix a(2, 2);
    a << 1, 0, 0, 2;
    CoeffVector coeff = CoeffVector::zeros(2);
    coeff.h << 1, 1, 1;
    Matrix expected(5, 2);
    expected << 1, 0, 0, 2, 1, 0, 0, 4, 0, 0;
    CHECK((expand_a(a, coeff) - expected).norm() == 0.0);

    CoeffVector zeros = CoeffVector::zeros(2);
    const Matrix a_hat = expand_a(a, zeros);
    CHECK(a_hat.bottomRows(3).isZero(0.0));
    CHECK((a_hat.topRows(2) - a).norm() == 0.0);

    Matrix a2(2, 2);
    a2 << 1, 1, 2, 3;
    CoeffVector cross = CoeffVector::zeros(2);
    cross.h << 0, 0, 5;
    const Matrix a2_hat = expand_a(a2, cross);
    CHECK(a2_hat(4, 0) == 10.0);
    CHECK(a2_hat(4, 1) == 15.0);

    CoeffVector wrong = CoeffVector::zeros(3);
    CHECK_THROWS_AS(expand_a(a, wrong), ShapeError);
}

TEST_CASE("compose_delta_w worked examples") {
    Matrix b(2, 2), a(2, 2);
    b << 1, 2, 3, 4;
    a << 1, 0, 0, 2;

    CoeffVector zeros = CoeffVector::zeros(2);
    CHECK(rel_frobenius(compose_delta_w(b, a, zeros), matmul(b, a)) < 1e-14);

    CoeffVector ones = CoeffVector::zeros(2);
    ones.h << 1, 1, 1;
    Matrix expected(2, 2);
    expected << 2, 20, 12, 72;
    CHECK((compose_delta_w(b, a, ones) - expected).norm() < 1e-12);
    CHECK((delta_w_sum_oracle(b, a, ones) - expected).norm() < 1e-12);

    CHECK(compose_delta_w(b, Matrix::Zero(2, 5), CoeffVector::zeros(2)).isZero(0.0));
}

TEST_CASE("sum oracle hand cases") {
    Matrix b(2, 1), a(1, 2);
    b << 1, 0;
    a << 1, 1;
    CoeffVector coeff = CoeffVector::zeros(1);
    coeff.h << 1;
    Matrix expected(2, 2);
    expected << 2, 2, 0, 0;
    CHECK((delta_w_sum_oracle(b, a, coeff) - expected).norm() == 0.0);

    std::mt19937_64 rng(5);
    const Matrix b2 = random_matrix(rng, 4, 2);
    const Matrix a2 = random_matrix(rng, 2, 4);
    CoeffVector single = CoeffVector::zeros(2);
    single.h(0) = 0.7;  // only h_11
    const Matrix expected2 =
        b2 * a2 + 0.7 * (b2.col(0).cwiseProduct(b2.col(0)) *
                         a2.row(0).cwiseProduct(a2.row(0)));
    CHECK(rel_frobenius(delta_w_sum_oracle(b2, a2, single), expected2) < 1e-14);
}

TEST_CASE("factorization identity: composition vs sum oracle") {
    std::mt19937_64 rng(41);
    for (int r : {1, 2, 4, 8}) {
        for (int m : {4, 16, 64}) {
            for (int n : {4, 16, 64}) {
                const Matrix b = random_matrix(rng, m, r);
                const Matrix a = random_matrix(rng, r, n);
                const CoeffVector coeff = random_coeff(rng, r);
                const Matrix composed = compose_delta_w(b, a, coeff);
                const Matrix oracle = delta_w_sum_oracle(b, a, coeff);
                CHECK((composed - oracle).norm() / std::max(1.0, oracle.norm()) < 1e-12);
            }
        }
    }
}

TEST_CASE("rank bound holds on composed updates") {
    std::mt19937_64 rng(43);
    for (int r : {1, 2, 4}) {
        const Matrix b = random_matrix(rng, 16, r);
        const Matrix a = random_matrix(rng, r, 16);
        const CoeffVector coeff = random_coeff(rng, r);
        CHECK(numeric_rank(compose_delta_w(b, a, coeff)) <= PairOrder::expanded_dim_for(r));
    }
}

TEST_CASE("LoRA degeneracy at h = 0") {
    std::mt19937_64 rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix b = random_matrix(rng, 8, 4);
        const Matrix a = random_matrix(rng, 4, 8);
        const CoeffVector coeff = CoeffVector::zeros(4, Variant::lora);
        CHECK(rel_frobenius(compose_delta_w(b, a, coeff), matmul(b, a)) < 1e-14);
    }
}

TEST_CASE("expansion lifts numeric rank beyond r") {
    std::mt19937_64 rng(53);
    int lifted = 0;
    for (int seed = 0; seed < 100; ++seed) {
        const Matrix b = random_matrix(rng, 16, 2);
        const Matrix a = random_matrix(rng, 2, 16);
        const CoeffVector coeff = random_coeff(rng, 2);
        if (numeric_rank(compose_delta_w(b, a, coeff)) > 2) ++lifted;
    }
    CHECK(lifted >= 95);
}

TEST_CASE("variant_mask freeze counts") {
    auto count = [](const std::vector<bool>& mask) {
        int frozen = 0;
        for (bool f : mask)
            if (f) ++frozen;
        return frozen;
    };
    CHECK(count(variant_mask(Variant::lora, 4)) == 10);
    CHECK(count(variant_mask(Variant::square_only, 4)) == 6);
    CHECK(count(variant_mask(Variant::cross_only, 4)) == 4);
    CHECK(count(variant_mask(Variant::full, 4)) == 0);
    CHECK_THROWS_AS(variant_from_string("diagonal"), ConfigError);
}
