#pragma once

#include <cmath>

#include "mvmcad/autodiff.hpp"
#include "mvmcad/tensor.hpp"

namespace mvmcad {

// Trainable pre-encoder gate: per-image weighted normalization, channel
// gating, spatial gating. Operates on the raw image tensor [B,C,H,W].
namespace prior_gate {

inline constexpr double kSigmaEps = 1e-5;

// gamma_c * (X - mu_c) / (sigma_c + eps) with per-image, per-channel mean
// and population standard deviation over HxW.
template <typename Real>
Var<Real> weighted_norm(const Var<Real>& x, const Var<Real>& gamma, Real eps = Real(kSigmaEps)) {
    const Shape& s = x->value.shape;
    if (s.size() != 4) throw ValidationError("weighted_norm expects [B,C,H,W]");
    if (gamma->value.size() != s[1])
        throw ValidationError("gamma length " + std::to_string(gamma->value.size()) +
                              " does not match C=" + std::to_string(s[1]));
    auto mu = ad::reduce(ad::reduce(x, 3, ReduceKind::Mean, true), 2, ReduceKind::Mean, true);
    auto centered = ad::sub(x, mu);
    auto var = ad::reduce(ad::reduce(ad::square(centered), 3, ReduceKind::Mean, true), 2,
                          ReduceKind::Mean, true);
    auto sigma = ad::sqrt(var);
    auto g = ad::reshape(gamma, Shape{s[1], 1, 1});
    return ad::mul(g, ad::div(centered, ad::add_const(sigma, eps)));
}

// alpha_c = |gamma_c| / sum_k |gamma_k|
template <typename Real>
Var<Real> channel_weights(const Var<Real>& gamma) {
    double total = 0;
    for (Real v : gamma->value.data) total += std::abs(static_cast<double>(v));
    if (total < 1e-12) throw NumericError("channel_weights: all-zero gamma is degenerate");
    auto a = ad::abs(gamma);
    return ad::div(a, ad::sum_all(a));
}

// X^ch = sigmoid(alpha_c * X_norm) . X
template <typename Real>
Var<Real> channel_gate(const Var<Real>& x, const Var<Real>& x_norm, const Var<Real>& alpha) {
    std::size_t c = x->value.shape[1];
    auto a = ad::reshape(alpha, Shape{c, 1, 1});
    return ad::mul(ad::sigmoid(ad::mul(a, x_norm)), x);
}

// beta_{h,w} = M_{h,w} / sum M, with M the channel mean of X^ch. Per image.
template <typename Real>
Var<Real> spatial_weights(const Var<Real>& x_ch) {
    auto m = ad::reduce(x_ch, 1, ReduceKind::Mean);  // [B,H,W]
    auto total = ad::reduce(ad::reduce(m, 2, ReduceKind::Sum, true), 1, ReduceKind::Sum, true);
    for (Real v : total->value.data)
        if (std::abs(static_cast<double>(v)) < 1e-12)
            throw NumericError("spatial_weights: spatial mean sums to ~0");
    return ad::div(m, total);
}

// X^prior = sigmoid(beta_{h,w} * X^ch) . X^ch
template <typename Real>
Var<Real> spatial_gate(const Var<Real>& x_ch, const Var<Real>& beta) {
    const Shape& s = beta->value.shape;  // [B,H,W]
    auto b = ad::reshape(beta, Shape{s[0], 1, s[1], s[2]});
    return ad::mul(ad::sigmoid(ad::mul(b, x_ch)), x_ch);
}

template <typename Real>
struct GateTrace {
    Var<Real> alpha;    // [C]
    Var<Real> beta;     // [B,H,W]
    Var<Real> x_ch;     // [B,C,H,W]
    Var<Real> x_prior;  // [B,C,H,W]
};

template <typename Real>
GateTrace<Real> forward(const Var<Real>& x, const Var<Real>& gamma,
                        Real eps = Real(kSigmaEps)) {
    GateTrace<Real> trace;
    auto x_norm = weighted_norm(x, gamma, eps);
    trace.alpha = channel_weights(gamma);
    trace.x_ch = channel_gate(x, x_norm, trace.alpha);
    bool all_zero = true;
    for (Real v : trace.x_ch->value.data)
        if (v != Real(0)) { all_zero = false; break; }
    if (all_zero) {
        // A zero gated tensor makes beta irrelevant (the spatial gate
        // multiplies by x_ch); keep forward(0) == 0 instead of raising.
        const Shape& s = x->value.shape;
        trace.beta = x->tape->constant(
            Tensor<Real>::full({s[0], s[2], s[3]}, Real(1) / static_cast<Real>(s[2] * s[3])));
    } else {
        trace.beta = spatial_weights(trace.x_ch);
    }
    trace.x_prior = spatial_gate(trace.x_ch, trace.beta);
    return trace;
}

}  // namespace prior_gate
}  // namespace mvmcad
