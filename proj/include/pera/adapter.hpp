#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "pera/expansion.hpp"
#include "pera/numerics.hpp"
#include "pera/types.hpp"

namespace pera {

enum class ScalingMode { alpha_over_r, alpha_over_d, none };

inline std::string to_string(ScalingMode m) {
    switch (m) {
        case ScalingMode::alpha_over_r: return "alpha_over_r";
        case ScalingMode::alpha_over_d: return "alpha_over_D";
        case ScalingMode::none: return "none";
    }
    throw ConfigError("unknown scaling mode");
}

inline ScalingMode scaling_mode_from_string(const std::string& s) {
    if (s == "alpha_over_r") return ScalingMode::alpha_over_r;
    if (s == "alpha_over_D") return ScalingMode::alpha_over_d;
    if (s == "none") return ScalingMode::none;
    throw ConfigError("unknown scaling mode: " + s);
}

struct AdapterConfig {
    int r = 8;
    double alpha = 0.0;  // <= 0 defaults to r
    Variant variant = Variant::full;
    ScalingMode scaling_mode = ScalingMode::alpha_over_r;
    double dropout = 0.0;    // applied to the adapter-path input by the training loop
    double init_std = 0.0;   // <= 0 defaults to 1/sqrt(r)
    std::uint64_t seed = 0;

    double effective_alpha() const { return alpha > 0.0 ? alpha : static_cast<double>(r); }
    double effective_init_std() const {
        return init_std > 0.0 ? init_std : 1.0 / std::sqrt(static_cast<double>(r));
    }
    void validate() const {
        if (r < 1) throw ConfigError("AdapterConfig: rank must be >= 1");
        if (alpha < 0.0) throw ConfigError("AdapterConfig: alpha must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0))
            throw ConfigError("AdapterConfig: dropout must lie in [0,1)");
        if (init_std < 0.0) throw ConfigError("AdapterConfig: init_std must be positive");
    }
};

struct PeraAdapter {
    AdapterConfig config;
    Matrix b;           // m x r, Gaussian at init
    Matrix a;           // r x n, zero at init
    CoeffVector coeff;  // h = 0 at init, frozen per variant

    Index m() const { return b.rows(); }
    Index n() const { return a.cols(); }

    double scale() const {
        switch (config.scaling_mode) {
            case ScalingMode::alpha_over_r:
                return config.effective_alpha() / config.r;
            case ScalingMode::alpha_over_d:
                return config.effective_alpha() / PairOrder::expanded_dim_for(config.r);
            case ScalingMode::none:
                return 1.0;
        }
        throw ConfigError("unknown scaling mode");
    }
};

struct AdapterGrads {
    Matrix d_b;  // m x r
    Matrix d_a;  // r x n
    Vector d_h;  // r + C(r,2), exactly 0 at frozen positions
};

inline PeraAdapter init_adapter(const AdapterConfig& config, Index m, Index n) {
    config.validate();
    if (m < 1 || n < 1) throw ConfigError("init_adapter: dimensions must be >= 1");
    PeraAdapter adapter;
    adapter.config = config;
    adapter.b = Matrix(m, config.r);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, config.effective_init_std());
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < config.r; ++j) adapter.b(i, j) = gauss(rng);
    adapter.a = Matrix::Zero(config.r, n);
    adapter.coeff = CoeffVector::zeros(config.r, config.variant);
    return adapter;
}

/// Scaled update scale * Poly^2(B) Poly^2_H(A), materialized.
inline Matrix compose(const PeraAdapter& adapter) {
    return compose_delta_w(adapter.b, adapter.a, adapter.coeff, adapter.scale());
}

/// W0 x + scale * B_hat (A_hat x); factor-first, delta_w never materialized.
inline Matrix forward(const PeraAdapter& adapter, const Matrix& w0, const Matrix& x) {
    if (w0.rows() != adapter.m() || w0.cols() != adapter.n())
        throw ShapeError("forward: W0 shape does not match adapter");
    if (x.rows() != adapter.n())
        throw ShapeError("forward: input rows must match adapter columns");
    const Matrix a_hat = expand_a(adapter.a, adapter.coeff);
    const Matrix b_hat = expand_b(adapter.b);
    return w0 * x + adapter.scale() * (b_hat * (a_hat * x));
}

/// Chain rule through the sum form. upstream is dL/d(output), m x batch.
inline AdapterGrads backward(const PeraAdapter& adapter, const Matrix& w0, const Matrix& x,
                             const Matrix& upstream) {
    (void)w0;  // frozen, no gradient
    if (x.rows() != adapter.n())
        throw ShapeError("backward: input rows must match adapter columns");
    if (upstream.rows() != adapter.m() || upstream.cols() != x.cols())
        throw ShapeError("backward: upstream shape mismatch");
    const int r = adapter.config.r;
    const PairOrder order(r);
    const Matrix g = adapter.scale() * (upstream * x.transpose());  // m x n
    const Matrix a_hat = expand_a(adapter.a, adapter.coeff);
    const Matrix b_hat = expand_b(adapter.b);
    const Matrix d_b_hat = g * a_hat.transpose();  // m x D
    const Matrix d_a_hat = b_hat.transpose() * g;  // D x n

    AdapterGrads grads;
    grads.d_b = Matrix::Zero(adapter.m(), r);
    grads.d_a = Matrix::Zero(r, adapter.n());
    grads.d_h = Vector::Zero(order.coeff_dim());

    for (int k = 0; k < order.expanded_dim(); ++k) {
        const Descriptor& d = order.term(k);
        if (d.is_singleton()) {
            grads.d_b.col(d.i) += d_b_hat.col(k);
            grads.d_a.row(d.i) += d_a_hat.row(k);
            continue;
        }
        const int ci = order.coeff_index(d.i, d.j);
        const double h_ij = adapter.coeff.h(ci);
        const auto prod_a = adapter.a.row(d.i).cwiseProduct(adapter.a.row(d.j));
        grads.d_h(ci) = d_a_hat.row(k).dot(prod_a);
        if (d.is_square()) {
            grads.d_b.col(d.i) += 2.0 * adapter.b.col(d.i).cwiseProduct(d_b_hat.col(k));
            grads.d_a.row(d.i) += 2.0 * h_ij * adapter.a.row(d.i).cwiseProduct(d_a_hat.row(k));
        } else {
            grads.d_b.col(d.i) += adapter.b.col(d.j).cwiseProduct(d_b_hat.col(k));
            grads.d_b.col(d.j) += adapter.b.col(d.i).cwiseProduct(d_b_hat.col(k));
            grads.d_a.row(d.i) += h_ij * adapter.a.row(d.j).cwiseProduct(d_a_hat.row(k));
            grads.d_a.row(d.j) += h_ij * adapter.a.row(d.i).cwiseProduct(d_a_hat.row(k));
        }
    }
    for (int k = 0; k < order.coeff_dim(); ++k)
        if (adapter.coeff.frozen[static_cast<std::size_t>(k)]) grads.d_h(k) = 0.0;
    return grads;
}

/// Fold the scaled update into the frozen base weight.
inline Matrix merge(const PeraAdapter& adapter, const Matrix& w0) {
    if (w0.rows() != adapter.m() || w0.cols() != adapter.n())
        throw ShapeError("merge: W0 shape does not match adapter");
    return w0 + compose(adapter);
}

struct ParamCount {
    long trainable;
    long total;
};

inline ParamCount param_count(const AdapterConfig& config, Index m, Index n) {
    config.validate();
    const long factors = static_cast<long>(m) * config.r + static_cast<long>(config.r) * n;
    const long coeff_total = PairOrder::coeff_dim_for(config.r);
    long unfrozen = 0;
    for (bool f : variant_mask(config.variant, config.r))
        if (!f) ++unfrozen;
    return ParamCount{factors + unfrozen, factors + coeff_total};
}

// Text serialization (JSON object model); defined in serialize.cpp.
std::string serialize(const PeraAdapter& adapter);
PeraAdapter deserialize(const std::string& payload);

}  // namespace pera
