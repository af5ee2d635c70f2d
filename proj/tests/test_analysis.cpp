#include <doctest.h>

#include <random>

#include "pera/analysis.hpp"
#include "test_support.hpp"

using namespace pera;
using pera::testing::random_matrix;
using pera::testing::random_vector;
using pera::testing::rel_frobenius;

namespace {

PeraAdapter random_adapter(std::mt19937_64& rng, int r, Index m, Index n,
                           Variant variant = Variant::full) {
    AdapterConfig config;
    config.r = r;
    config.variant = variant;
    config.seed = rng();
    PeraAdapter adapter = init_adapter(config, m, n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index i = 0; i < adapter.a.size(); ++i) adapter.a.data()[i] = gauss(rng);
    for (int k = 0; k < adapter.coeff.size(); ++k)
        if (!adapter.coeff.frozen[static_cast<std::size_t>(k)])
            adapter.coeff.h(k) = gauss(rng);
    return adapter;
}

}  // namespace

TEST_CASE("rank_report basics") {
    AdapterConfig config;
    config.r = 4;
    const PeraAdapter fresh = init_adapter(config, 8, 8);
    const RankReport fresh_report = rank_report(fresh);
    CHECK(fresh_report.numeric_rank_delta_w == 0);
    CHECK(fresh_report.bound_lora == 4);
    CHECK(fresh_report.bound_pera == 14);
    CHECK(fresh_report.satisfied);

    std::mt19937_64 rng(31);
    const PeraAdapter lora = random_adapter(rng, 4, 16, 16, Variant::lora);
    const RankReport lora_report = rank_report(lora);
    CHECK(lora_report.numeric_rank_delta_w == 4);
    CHECK(lora_report.satisfied);

    int rank5 = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const PeraAdapter full = random_adapter(rng, 2, 16, 16);
        const RankReport report = rank_report(full);
        CHECK(report.satisfied);
        CHECK(report.numeric_rank_delta_w <= 5);
        if (report.numeric_rank_delta_w == 5) ++rank5;
    }
    CHECK(rank5 >= 15);  // rank 5 on most seeds
}

TEST_CASE("term_decomposition structure") {
    std::mt19937_64 rng(37);

    const PeraAdapter lora = random_adapter(rng, 3, 8, 8, Variant::lora);
    const TermDecomposition lora_dec = term_decomposition(lora);
    CHECK(lora_dec.square.isZero(0.0));
    CHECK(lora_dec.cross.isZero(0.0));

    const PeraAdapter sq = random_adapter(rng, 3, 8, 8, Variant::square_only);
    const TermDecomposition sq_dec = term_decomposition(sq);
    CHECK(sq_dec.cross.isZero(0.0));
    CHECK(sq_dec.square_norm > 0.0);

    for (Variant variant : {Variant::lora, Variant::square_only, Variant::cross_only,
                            Variant::full}) {
        for (int trial = 0; trial < 100; ++trial) {
            const PeraAdapter adapter = random_adapter(rng, 3, 8, 8, variant);
            const Matrix sum = term_decomposition(adapter).first_order +
                               term_decomposition(adapter).square +
                               term_decomposition(adapter).cross;
            const Matrix oracle =
                delta_w_sum_oracle(adapter.b, adapter.a, adapter.coeff);
            CHECK(rel_frobenius(sum, oracle) < 1e-12);
        }
    }
}

TEST_CASE("eckart_young_gap") {
    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 3, 2, 1;
    CHECK(eckart_young_gap(d, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(eckart_young_gap(d, 3) == 0.0);
    CHECK_THROWS_AS(eckart_young_gap(d, 4), std::domain_error);
    CHECK_THROWS_AS(eckart_young_gap(d, -1), std::domain_error);

    std::mt19937_64 rng(41);
    const Matrix w = random_matrix(rng, 16, 16);
    CHECK(eckart_young_gap(w, 4) >= eckart_young_gap(w, 9));
}

TEST_CASE("expressivity_bounds") {
    Matrix d = Matrix::Zero(5, 5);
    d.diagonal() << 5, 4, 3, 2, 1;
    const ExpressivityBounds diag = expressivity_bounds(d, 1);
    CHECK(diag.lora_floor == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(diag.pera_floor == doctest::Approx(3.0).epsilon(1e-12));

    std::mt19937_64 rng(43);
    // r=3 gives D=9 >= min dim 5
    CHECK(expressivity_bounds(random_matrix(rng, 5, 5), 3).pera_floor == 0.0);

    Matrix target = Matrix::Zero(32, 32);
    for (int k = 0; k < 12; ++k)
        target += random_matrix(rng, 32, 1) * random_matrix(rng, 1, 32);
    const ExpressivityBounds bounds = expressivity_bounds(target, 4);
    CHECK(bounds.pera_floor < 1e-10);  // D = 14 >= numeric rank 12
    CHECK(bounds.lora_floor > 0.0);

    for (int trial = 0; trial < 20; ++trial) {
        const Matrix w = random_matrix(rng, 10, 14);
        for (int r = 1; r <= 6; ++r) {
            const ExpressivityBounds b = expressivity_bounds(w, r);
            CHECK(b.pera_floor <= b.lora_floor);
        }
    }
}

TEST_CASE("interaction_strength oracle cases") {
    std::mt19937_64 rng(47);
    std::vector<Vector> samples;
    for (int i = 0; i < 8; ++i) samples.push_back(random_vector(rng, 3));

    auto cross = [](const Vector& h) { return h(0) * h(1); };
    const InteractionMatrix s_cross = interaction_strength(cross, samples);
    CHECK(s_cross.s(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s_cross.s(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s_cross.s(0, 0) < 1e-6);

    auto linear = [](const Vector& h) { return 2.0 * h(0) - h(2); };
    CHECK(interaction_strength(linear, samples).s.cwiseAbs().maxCoeff() < 1e-6);

    auto square = [](const Vector& h) { return h(0) * h(0); };
    CHECK(interaction_strength(square, samples).s(0, 0) ==
          doctest::Approx(2.0).epsilon(1e-5));

    CHECK_THROWS_AS(interaction_strength(cross, {}), std::domain_error);
    CHECK_THROWS_AS(interaction_strength(cross, samples, 0.0), std::domain_error);
}

TEST_CASE("interaction_strength recovers |Q| for quadratic forms") {
    std::mt19937_64 rng(53);
    const Matrix half = random_matrix(rng, 8, 8);
    const Matrix q = 0.5 * (half + half.transpose());
    auto quad = [&q](const Vector& h) { return 0.5 * (h.transpose() * q * h).value(); };
    std::vector<Vector> samples;
    for (int i = 0; i < 4; ++i) samples.push_back(random_vector(rng, 8));
    const InteractionMatrix im = interaction_strength(quad, samples);
    CHECK((im.s - q.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((im.s - im.s.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((im.s.array() >= 0.0).all());
}
