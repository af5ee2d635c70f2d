#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pera/adapter.hpp"
#include "pera/expansion.hpp"
#include "pera/numerics.hpp"
#include "pera/types.hpp"

namespace pera {

struct RankReport {
    int numeric_rank_delta_w;
    int bound_lora;  // r
    int bound_pera;  // 2r + C(r,2)
    bool satisfied;
};

inline RankReport rank_report(const PeraAdapter& adapter) {
    const int r = adapter.config.r;
    RankReport report;
    report.numeric_rank_delta_w = numeric_rank(compose(adapter), 1e-10);
    report.bound_lora = r;
    report.bound_pera = PairOrder::expanded_dim_for(r);
    report.satisfied = report.numeric_rank_delta_w <= report.bound_pera;
    return report;
}

/// The three partial sums of the update: first-order b_i a_i^T, squares,
/// crosses. Unscaled, matching delta_w_sum_oracle.
struct TermDecomposition {
    Matrix first_order;
    Matrix square;
    Matrix cross;
    double first_order_norm;
    double square_norm;
    double cross_norm;
};

inline TermDecomposition term_decomposition(const PeraAdapter& adapter) {
    const int r = adapter.config.r;
    const PairOrder order(r);
    TermDecomposition dec;
    dec.first_order = Matrix::Zero(adapter.m(), adapter.n());
    dec.square = Matrix::Zero(adapter.m(), adapter.n());
    dec.cross = Matrix::Zero(adapter.m(), adapter.n());
    for (int i = 0; i < r; ++i)
        dec.first_order += adapter.b.col(i) * adapter.a.row(i);
    for (int i = 0; i < r; ++i)
        for (int j = i; j < r; ++j) {
            const double h_ij = adapter.coeff.h(order.coeff_index(i, j));
            if (h_ij == 0.0) continue;
            const Matrix term = h_ij * (adapter.b.col(i).cwiseProduct(adapter.b.col(j)) *
                                        adapter.a.row(i).cwiseProduct(adapter.a.row(j)));
            (i == j ? dec.square : dec.cross) += term;
        }
    dec.first_order_norm = dec.first_order.norm();
    dec.square_norm = dec.square.norm();
    dec.cross_norm = dec.cross.norm();
    return dec;
}

/// sigma_{k+1}(w), with sigma past min(m,n) taken as 0. Also checks that
/// the rank-k truncated SVD attains spectral error sigma_{k+1}.
inline double eckart_young_gap(const Matrix& w, int k) {
    const Index min_dim = std::min(w.rows(), w.cols());
    if (k < 0 || k > min_dim)
        throw std::domain_error("eckart_young_gap: k out of range");
    const SvdResult dec = svd(w);
    const double gap = k < min_dim ? dec.singular_values(k) : 0.0;
    Matrix truncated = Matrix::Zero(w.rows(), w.cols());
    for (int i = 0; i < k; ++i)
        truncated += dec.singular_values(i) * dec.left_vectors.col(i) *
                     dec.right_vectors.col(i).transpose();
    const Vector residual_sv = svd(w - truncated).singular_values;
    const double achieved = residual_sv.size() > 0 ? residual_sv(0) : 0.0;
    const double scale = std::max(1.0, dec.singular_values.size() > 0 ? dec.singular_values(0) : 0.0);
    if (std::abs(achieved - gap) > 1e-10 * scale)
        throw std::domain_error("eckart_young_gap: truncated SVD failed to attain sigma_{k+1}");
    return gap;
}

struct ExpressivityBounds {
    double lora_floor;  // sigma_{r+1}
    double pera_floor;  // sigma_{2r+C(r,2)+1}
};

inline ExpressivityBounds expressivity_bounds(const Matrix& w_target, int r) {
    if (r < 1) throw std::domain_error("expressivity_bounds: rank must be >= 1");
    const Vector sv = svd(w_target).singular_values;
    auto sigma = [&sv](int k) {  // 1-based
        return k <= sv.size() ? sv(k - 1) : 0.0;
    };
    ExpressivityBounds bounds;
    bounds.lora_floor = sigma(r + 1);
    bounds.pera_floor = sigma(PairOrder::expanded_dim_for(r) + 1);
    return bounds;
}

/// Empirical mean of |d^2 f / dh_i dh_j| over a sample set, symmetrized.
struct InteractionMatrix {
    Matrix s;
    int sample_count;
    double step;
};

inline InteractionMatrix interaction_strength(const std::function<double(const Vector&)>& f,
                                              const std::vector<Vector>& samples,
                                              double step = 1e-3) {
    if (!(step > 0.0)) throw std::domain_error("interaction_strength: step must be positive");
    if (samples.empty()) throw std::domain_error("interaction_strength: empty sample set");
    const Index d = samples.front().size();
    Matrix s = Matrix::Zero(d, d);
    auto eval = [&f](const Vector& h) {
        const double v = f(h);
        if (!std::isfinite(v))
            throw std::domain_error("interaction_strength: non-finite function value");
        return v;
    };
    for (const Vector& h : samples) {
        if (h.size() != d) throw ShapeError("interaction_strength: inconsistent sample sizes");
        Vector probe = h;
        const double f0 = eval(h);
        for (Index i = 0; i < d; ++i) {
            // diagonal: (f(+2s e_i) - 2 f + f(-2s e_i)) / (4 s^2)
            probe(i) = h(i) + 2.0 * step;
            const double fp = eval(probe);
            probe(i) = h(i) - 2.0 * step;
            const double fm = eval(probe);
            probe(i) = h(i);
            s(i, i) += std::abs((fp - 2.0 * f0 + fm) / (4.0 * step * step));
            for (Index j = i + 1; j < d; ++j) {
                probe(i) = h(i) + step;
                probe(j) = h(j) + step;
                const double fpp = eval(probe);
                probe(j) = h(j) - step;
                const double fpm = eval(probe);
                probe(i) = h(i) - step;
                const double fmm = eval(probe);
                probe(j) = h(j) + step;
                const double fmp = eval(probe);
                probe(i) = h(i);
                probe(j) = h(j);
                const double mixed =
                    std::abs((fpp - fpm - fmp + fmm) / (4.0 * step * step));
                s(i, j) += mixed;
                s(j, i) += mixed;
            }
        }
    }
    s /= static_cast<double>(samples.size());
    return InteractionMatrix{std::move(s), static_cast<int>(samples.size()), step};
}

inline double mean_off_diagonal(const Matrix& s) {
    const Index d = s.rows();
    if (d < 2) return 0.0;
    double sum = 0.0;
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            if (i != j) sum += s(i, j);
    return sum / static_cast<double>(d * (d - 1));
}

std::string interaction_csv(const InteractionMatrix& im);

}  // namespace pera
