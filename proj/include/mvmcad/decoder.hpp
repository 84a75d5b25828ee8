#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvmcad/blocks.hpp"

namespace mvmcad {

// Trainable reconstruction decoder: a stack of pre-norm transformer blocks
// mirroring the backbone, grouped into a shallow and a deep output.
namespace decoder {

struct DecoderConfig {
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::uint64_t seed = 3;

    void validate() const {
        if (depth < 2) throw ValidationError("decoder depth must be >= 2 (two output groups)");
        if (heads == 0 || embed_dim % heads != 0)
            throw ValidationError("decoder: embed_dim must be divisible by heads");
    }
};

template <typename Real>
void init_params(ParamStore<Real>& store, const DecoderConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    for (std::size_t i = 1; i <= cfg.depth; ++i)
        blocks::init_block_params(store, "decoder.block" + std::to_string(i), cfg.embed_dim,
                                  false, rng);
}

template <typename Real>
struct DecodeOut {
    Var<Real> f1;  // mean of the first half of block outputs
    Var<Real> f2;  // mean of the second half
};

template <typename Real>
DecodeOut<Real> decode(BoundParams<Real>& params, const Var<Real>& f_m,
                       const DecoderConfig& cfg) {
    if (f_m->value.rank() != 3 || f_m->value.shape[2] != cfg.embed_dim)
        throw ValidationError("decode expects [B,N,D] with D=" + std::to_string(cfg.embed_dim));
    std::vector<Var<Real>> outs;
    outs.reserve(cfg.depth);
    Var<Real> x = f_m;
    for (std::size_t i = 1; i <= cfg.depth; ++i) {
        x = blocks::transformer_block(params, "decoder.block" + std::to_string(i), x, cfg.heads);
        outs.push_back(x);
    }
    std::size_t half = cfg.depth / 2;
    auto mean_of = [](const std::vector<Var<Real>>& v, std::size_t from, std::size_t to) {
        Var<Real> acc = v[from];
        for (std::size_t i = from + 1; i < to; ++i) acc = ad::add(acc, v[i]);
        return ad::scale(acc, Real(1) / static_cast<Real>(to - from));
    };
    DecodeOut<Real> out;
    out.f1 = mean_of(outs, 0, half);
    out.f2 = mean_of(outs, half, cfg.depth);
    return out;
}

}  // namespace decoder
}  // namespace mvmcad
