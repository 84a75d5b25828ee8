#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "mvmcad/blocks.hpp"

namespace mvmcad {

// Anomaly amplification: global token attention followed by norm-based
// similarity suppression that damps dominant token patterns.
namespace aam {

inline constexpr double kNormEps = 1e-6;

struct AamConfig {
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    bool bias = false;      // projections bias-free keeps f(0) = 0
    bool residual = false;  // optional ablation: f_i + f_m
    std::uint64_t seed = 2;
};

template <typename Real>
struct AamTrace {
    Var<Real> f_ctx;  // [B,h,N,d_k]
    Var<Real> f_hat;  // [B,h,N,d_k]
    Var<Real> sim;    // [B,h,N]
    Var<Real> pi;     // [B,h,N]
    Var<Real> att;    // [B,h,1,d_k]
    Var<Real> out;    // [B,N,D]
};

template <typename Real>
void init_params(ParamStore<Real>& store, const AamConfig& cfg) {
    if (cfg.heads == 0 || cfg.embed_dim % cfg.heads != 0)
        throw ValidationError("aam: embed_dim must be divisible by heads");
    Rng rng(cfg.seed);
    std::size_t d = cfg.embed_dim;
    // The frozen encoder emits small-magnitude features (its weights are
    // std-0.02 noise, not pretrained weights). Q/K/V projections are scaled
    // up so attention logits start O(1) instead of collapsing to a uniform
    // softmax that erases per-token signal; the output projection likewise
    // compensates the ~1/N attenuation of the pi-weighted suppression so the
    // decoder sees a usable input scale from step one.
    for (const char* w : {"aam.wq", "aam.wk", "aam.wv"})
        store.add(w, gaussian_tensor<Real>({d, d}, rng, 8.0));
    store.add("aam.wf", gaussian_tensor<Real>({d, d}, rng,
                                              1.0 / std::sqrt(static_cast<double>(d))));
    store.add("aam.wout", gaussian_tensor<Real>({d, d}, rng, 1.0));
    if (cfg.bias)
        for (const char* b : {"aam.bq", "aam.bk", "aam.bv", "aam.bf", "aam.bout"})
            store.add(b, Tensor<Real>({d}));
    // Temperature starts at 1 per head.
    store.add("aam.temp", Tensor<Real>::full({cfg.heads}, Real(1)));
}

template <typename Real>
Var<Real> project(BoundParams<Real>& params, const Var<Real>& x, const std::string& w,
                  const std::string& b, bool bias) {
    auto y = ad::matmul(x, params(w));
    return bias ? ad::add(y, params(b)) : y;
}

// Q, K, V: linear projection then head split.
template <typename Real>
struct Qkv {
    Var<Real> q, k, v;  // [B,h,N,d_k]
};

template <typename Real>
Qkv<Real> qkv_project(BoundParams<Real>& params, const Var<Real>& f_i, const AamConfig& cfg) {
    if (cfg.embed_dim % cfg.heads != 0)
        throw ValidationError("aam: embed_dim must be divisible by heads");
    Qkv<Real> out;
    out.q = blocks::split_heads(project(params, f_i, "aam.wq", "aam.bq", cfg.bias), cfg.heads);
    out.k = blocks::split_heads(project(params, f_i, "aam.wk", "aam.bk", cfg.bias), cfg.heads);
    out.v = blocks::split_heads(project(params, f_i, "aam.wv", "aam.bv", cfg.bias), cfg.heads);
    return out;
}

// softmax(QK^T/sqrt(d_k)) V, heads merged, projected by W^F, re-split.
template <typename Real>
Var<Real> attention_context(BoundParams<Real>& params, const Qkv<Real>& qkv,
                            const AamConfig& cfg) {
    std::size_t dk = cfg.embed_dim / cfg.heads;
    auto scores = ad::scale(ad::matmul(qkv.q, qkv.k, false, true),
                            Real(1) / static_cast<Real>(std::sqrt(double(dk))));
    auto ctx = ad::matmul(ad::softmax(scores, 3), qkv.v);
    auto projected = project(params, blocks::merge_heads(ctx), "aam.wf", "aam.bf", cfg.bias);
    return blocks::split_heads(projected, cfg.heads);
}

// Normalization across tokens: each (b,h,.,d) fiber divided by its L2 norm
// over the N axis plus eps.
template <typename Real>
Var<Real> token_normalize(const Var<Real>& f_ctx) {
    return ad::normalize_l2(f_ctx, 2, Real(kNormEps));
}

// Sim_{b,h,j} = ||F_hat_{b,h,j,:}||^2 * temp_h
template <typename Real>
Var<Real> similarity_scores(const Var<Real>& f_hat, const Var<Real>& temp) {
    auto sq_norm = ad::reduce(ad::square(f_hat), 3, ReduceKind::Sum);  // [B,h,N]
    std::size_t heads = temp->value.size();
    return ad::mul(sq_norm, ad::reshape(temp, Shape{heads, 1}));
}

// Pi = softmax over tokens.
template <typename Real>
Var<Real> soft_distribution(const Var<Real>& sim) {
    return ad::softmax(sim, 2);
}

// Att = 1 / (1 + sum_j Pi_j F^2_{j,d}) per (b,h,d); values in (0,1].
template <typename Real>
Var<Real> suppression_factor(const Var<Real>& pi, const Var<Real>& f_ctx) {
    const Shape& s = f_ctx->value.shape;  // [B,h,N,d_k]
    auto pi4 = ad::reshape(pi, Shape{s[0], s[1], s[2], 1});
    auto energy = ad::reduce(ad::mul(pi4, ad::square(f_ctx)), 2, ReduceKind::Sum, true);
    return ad::reciprocal(ad::add_const(energy, Real(1)));  // [B,h,1,d_k]
}

// f_m = W^out( -(F . Pi) . Att ), heads merged before the projection.
template <typename Real>
Var<Real> amplify(BoundParams<Real>& params, const Var<Real>& f_ctx, const Var<Real>& pi,
                  const Var<Real>& att, const AamConfig& cfg) {
    const Shape& s = f_ctx->value.shape;
    auto pi4 = ad::reshape(pi, Shape{s[0], s[1], s[2], 1});
    auto suppressed = ad::mul(ad::neg(ad::mul(f_ctx, pi4)), att);
    return project(params, blocks::merge_heads(suppressed), "aam.wout", "aam.bout", cfg.bias);
}

template <typename Real>
AamTrace<Real> forward(BoundParams<Real>& params, const Var<Real>& f_i, const AamConfig& cfg) {
    AamTrace<Real> trace;
    auto qkv = qkv_project(params, f_i, cfg);
    trace.f_ctx = attention_context(params, qkv, cfg);
    trace.f_hat = token_normalize(trace.f_ctx);
    trace.sim = similarity_scores(trace.f_hat, params("aam.temp"));
    trace.pi = soft_distribution(trace.sim);
    trace.att = suppression_factor(trace.pi, trace.f_ctx);
    trace.out = amplify(params, trace.f_ctx, trace.pi, trace.att, cfg);
    if (cfg.residual) trace.out = ad::add(trace.out, f_i);
    return trace;
}

}  // namespace aam
}  // namespace mvmcad
