#pragma once

#include <string>
#include <vector>

#include "pera/numerics.hpp"
#include "pera/types.hpp"

namespace pera {

enum class Variant { lora, square_only, cross_only, full };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::lora: return "lora";
        case Variant::square_only: return "square_only";
        case Variant::cross_only: return "cross_only";
        case Variant::full: return "full";
    }
    throw ConfigError("unknown variant tag");
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "lora") return Variant::lora;
    if (s == "square_only") return Variant::square_only;
    if (s == "cross_only") return Variant::cross_only;
    if (s == "full") return Variant::full;
    throw ConfigError("unknown variant tag: " + s);
}

/// One expanded column/row: an original factor column (j < 0) or a
/// Hadamard pair (i, j) with i <= j. Indices are 0-based.
struct Descriptor {
    int i;
    int j;  // -1 marks an original column
    bool is_singleton() const { return j < 0; }
    bool is_square() const { return j == i; }
    bool is_cross() const { return j > i; }
    bool operator==(const Descriptor&) const = default;
};

/// Canonical expansion ordering: the r original columns, then the r
/// squares (i,i), then the C(r,2) crosses (i,j), i < j, lexicographic.
class PairOrder {
public:
    explicit PairOrder(int r) : rank_(r) {
        if (r < 1) throw std::domain_error("pair_order: rank must be >= 1");
        terms_.reserve(static_cast<std::size_t>(expanded_dim_for(r)));
        for (int i = 0; i < r; ++i) terms_.push_back({i, -1});
        for (int i = 0; i < r; ++i) terms_.push_back({i, i});
        for (int i = 0; i < r; ++i)
            for (int j = i + 1; j < r; ++j) terms_.push_back({i, j});
    }

    static int cross_count_for(int r) { return r * (r - 1) / 2; }
    static int expanded_dim_for(int r) { return 2 * r + cross_count_for(r); }
    static int coeff_dim_for(int r) { return r + cross_count_for(r); }

    int rank() const { return rank_; }
    int expanded_dim() const { return static_cast<int>(terms_.size()); }
    int coeff_dim() const { return coeff_dim_for(rank_); }
    const std::vector<Descriptor>& terms() const { return terms_; }
    const Descriptor& term(int k) const { return terms_.at(static_cast<std::size_t>(k)); }

    int index_of(const Descriptor& d) const {
        if (d.is_singleton()) {
            if (d.i < 0 || d.i >= rank_) throw std::domain_error("pair_order: index out of range");
            return d.i;
        }
        return rank_ + coeff_index(d.i, d.j);
    }

    /// Position of (i,j), i <= j, inside the coefficient vector h:
    /// squares occupy [0, r), crosses [r, r + C(r,2)).
    int coeff_index(int i, int j) const {
        if (i < 0 || j < i || j >= rank_) throw std::domain_error("pair_order: bad pair");
        if (i == j) return i;
        const int before = i * rank_ - i * (i + 1) / 2;  // crosses with smaller first index
        return rank_ + before + (j - i - 1);
    }

private:
    int rank_;
    std::vector<Descriptor> terms_;
};

inline PairOrder pair_order(int r) { return PairOrder(r); }

/// Freeze mask for the variant lattice; frozen coefficients stay pinned at 0.
inline std::vector<bool> variant_mask(Variant variant, int r) {
    if (r < 1) throw ConfigError("variant_mask: rank must be >= 1");
    const int len = PairOrder::coeff_dim_for(r);
    std::vector<bool> frozen(static_cast<std::size_t>(len), false);
    switch (variant) {
        case Variant::lora:
            frozen.assign(static_cast<std::size_t>(len), true);
            break;
        case Variant::square_only:
            for (int k = r; k < len; ++k) frozen[static_cast<std::size_t>(k)] = true;
            break;
        case Variant::cross_only:
            for (int k = 0; k < r; ++k) frozen[static_cast<std::size_t>(k)] = true;
            break;
        case Variant::full:
            break;
    }
    return frozen;
}

/// Learnable gates h_{ij}, i <= j, with a freeze mask from the variant lattice.
struct CoeffVector {
    int r = 0;
    Vector h;                  // length r + C(r,2)
    std::vector<bool> frozen;  // same length

    static CoeffVector zeros(int r, Variant variant = Variant::full) {
        CoeffVector c;
        c.r = r;
        c.h = Vector::Zero(PairOrder::coeff_dim_for(r));
        c.frozen = variant_mask(variant, r);
        return c;
    }

    int size() const { return static_cast<int>(h.size()); }
    int unfrozen_count() const {
        int count = 0;
        for (bool f : frozen)
            if (!f) ++count;
        return count;
    }
    void validate() const {
        if (h.size() != PairOrder::coeff_dim_for(r) || frozen.size() != static_cast<std::size_t>(h.size()))
            throw ShapeError("CoeffVector: length does not match rank");
    }
};

/// Poly^2(B): original columns, then b_i (.) b_j for i <= j in canonical order.
inline Matrix expand_b(const Matrix& b) {
    const int r = static_cast<int>(b.cols());
    const PairOrder order(r);
    Matrix b_hat(b.rows(), order.expanded_dim());
    for (int k = 0; k < order.expanded_dim(); ++k) {
        const Descriptor& d = order.term(k);
        if (d.is_singleton())
            b_hat.col(k) = b.col(d.i);
        else
            b_hat.col(k) = b.col(d.i).cwiseProduct(b.col(d.j));
    }
    return b_hat;
}

/// Poly^2_H(A): original rows, then h_{ij} (a_i (.) a_j) for i <= j.
inline Matrix expand_a(const Matrix& a, const CoeffVector& coeff) {
    const int r = static_cast<int>(a.rows());
    if (coeff.r != r) throw ShapeError("expand_a: coefficient rank does not match A");
    coeff.validate();
    const PairOrder order(r);
    Matrix a_hat(order.expanded_dim(), a.cols());
    for (int k = 0; k < order.expanded_dim(); ++k) {
        const Descriptor& d = order.term(k);
        if (d.is_singleton())
            a_hat.row(k) = a.row(d.i);
        else
            a_hat.row(k) = coeff.h(order.coeff_index(d.i, d.j)) *
                           a.row(d.i).cwiseProduct(a.row(d.j));
    }
    return a_hat;
}

/// Expanded factor pair sharing one PairOrder; column k of b_hat and
/// row k of a_hat refer to the same descriptor.
struct ExpandedFactors {
    Matrix b_hat;
    Matrix a_hat;
    PairOrder order;
};

inline ExpandedFactors expand(const Matrix& b, const Matrix& a, const CoeffVector& coeff) {
    return ExpandedFactors{expand_b(b), expand_a(a, coeff), PairOrder(static_cast<int>(b.cols()))};
}

/// delta_w = scale * Poly^2(B) Poly^2_H(A).
inline Matrix compose_delta_w(const Matrix& b, const Matrix& a, const CoeffVector& coeff,
                              double scale = 1.0) {
    if (b.cols() != a.rows())
        throw ShapeError("compose_delta_w: B columns must match A rows");
    return scale * matmul(expand_b(b), expand_a(a, coeff));
}

/// Independent sum-form route: rank-one terms accumulated one by one,
/// never materializing the expanded matrices.
inline Matrix delta_w_sum_oracle(const Matrix& b, const Matrix& a, const CoeffVector& coeff) {
    const int r = static_cast<int>(b.cols());
    if (a.rows() != r) throw ShapeError("delta_w_sum_oracle: B columns must match A rows");
    if (coeff.r != r) throw ShapeError("delta_w_sum_oracle: coefficient rank mismatch");
    coeff.validate();
    const PairOrder order(r);
    Matrix delta = Matrix::Zero(b.rows(), a.cols());
    for (int i = 0; i < r; ++i)
        delta += b.col(i) * a.row(i);
    for (int i = 0; i < r; ++i)
        for (int j = i; j < r; ++j) {
            const double h_ij = coeff.h(order.coeff_index(i, j));
            if (h_ij == 0.0) continue;
            delta += h_ij * (b.col(i).cwiseProduct(b.col(j)) *
                             a.row(i).cwiseProduct(a.row(j)));
        }
    return delta;
}

}  // namespace pera
