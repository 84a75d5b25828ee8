#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mvmcad/autodiff.hpp"
#include "mvmcad/params.hpp"

namespace mvmcad {

// Pre-norm transformer block shared by the frozen backbone and the
// trainable decoder: x + MHSA(LN(x)), then + MLP(LN(.)), MLP ratio 4.
namespace blocks {

inline constexpr double kLnEps = 1e-5;

template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& g, const Var<Real>& b) {
    std::size_t last = x->value.rank() - 1;
    auto mu = ad::reduce(x, last, ReduceKind::Mean, true);
    auto centered = ad::sub(x, mu);
    auto var = ad::reduce(ad::square(centered), last, ReduceKind::Mean, true);
    auto inv = ad::div(centered, ad::sqrt(ad::add_const(var, Real(kLnEps))));
    return ad::add(ad::mul(inv, g), b);
}

// [B,N,D] -> [B,h,N,d_k] via contiguous slices of D.
template <typename Real>
Var<Real> split_heads(const Var<Real>& x, std::size_t heads) {
    const Shape& s = x->value.shape;
    auto r = ad::reshape(x, Shape{s[0], s[1], heads, s[2] / heads});
    return ad::permute(r, {0, 2, 1, 3});
}

template <typename Real>
Var<Real> merge_heads(const Var<Real>& x) {
    const Shape& s = x->value.shape;  // [B,h,N,d_k]
    auto p = ad::permute(x, {0, 2, 1, 3});
    return ad::reshape(p, Shape{s[0], s[2], s[1] * s[3]});
}

template <typename Real>
Var<Real> multi_head_attention(BoundParams<Real>& params, const std::string& prefix,
                               const Var<Real>& x, std::size_t heads) {
    std::size_t d = x->value.shape[2];
    std::size_t dk = d / heads;
    auto q = split_heads(ad::add(ad::matmul(x, params(prefix + ".wq")), params(prefix + ".bq")), heads);
    auto k = split_heads(ad::add(ad::matmul(x, params(prefix + ".wk")), params(prefix + ".bk")), heads);
    auto v = split_heads(ad::add(ad::matmul(x, params(prefix + ".wv")), params(prefix + ".bv")), heads);
    auto scores = ad::scale(ad::matmul(q, k, false, true),
                            Real(1) / static_cast<Real>(std::sqrt(double(dk))));
    auto ctx = ad::matmul(ad::softmax(scores, 3), v);
    auto merged = merge_heads(ctx);
    return ad::add(ad::matmul(merged, params(prefix + ".wo")), params(prefix + ".bo"));
}

template <typename Real>
Var<Real> mlp(BoundParams<Real>& params, const std::string& prefix, const Var<Real>& x) {
    auto h = ad::gelu(ad::add(ad::matmul(x, params(prefix + ".w1")), params(prefix + ".b1")));
    return ad::add(ad::matmul(h, params(prefix + ".w2")), params(prefix + ".b2"));
}

template <typename Real>
Var<Real> transformer_block(BoundParams<Real>& params, const std::string& prefix,
                            const Var<Real>& x, std::size_t heads) {
    auto a = ad::add(x, multi_head_attention(params, prefix + ".attn",
                                             layer_norm(x, params(prefix + ".ln1.g"),
                                                        params(prefix + ".ln1.b")),
                                             heads));
    return ad::add(a, mlp(params, prefix + ".mlp",
                          layer_norm(a, params(prefix + ".ln2.g"), params(prefix + ".ln2.b"))));
}

template <typename Real>
void init_block_params(ParamStore<Real>& store, const std::string& prefix, std::size_t d,
                       bool frozen, Rng& rng, double stddev = 0.02) {
    auto gauss = [&](Shape s) { return gaussian_tensor<Real>(std::move(s), rng, stddev); };
    store.add(prefix + ".ln1.g", Tensor<Real>::full({d}, Real(1)), frozen);
    store.add(prefix + ".ln1.b", Tensor<Real>({d}), frozen);
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
        store.add(prefix + w, gauss({d, d}), frozen);
    for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"})
        store.add(prefix + b, Tensor<Real>({d}), frozen);
    store.add(prefix + ".ln2.g", Tensor<Real>::full({d}, Real(1)), frozen);
    store.add(prefix + ".ln2.b", Tensor<Real>({d}), frozen);
    store.add(prefix + ".mlp.w1", gauss({d, 4 * d}), frozen);
    store.add(prefix + ".mlp.b1", Tensor<Real>({4 * d}), frozen);
    store.add(prefix + ".mlp.w2", gauss({4 * d, d}), frozen);
    store.add(prefix + ".mlp.b2", Tensor<Real>({d}), frozen);
}

}  // namespace blocks
}  // namespace mvmcad
