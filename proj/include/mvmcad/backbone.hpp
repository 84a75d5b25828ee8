#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvmcad/blocks.hpp"

namespace mvmcad {

struct BackboneConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t channels = 3;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::vector<std::size_t> group1 = {1, 2};  // 1-based block indices -> fe1
    std::vector<std::size_t> group2 = {3, 4};  // -> fe2
    bool pos_embed = true;
    std::uint64_t seed = 1;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return grid() * grid(); }

    void validate() const {
        if (patch_size == 0 || image_size % patch_size != 0)
            throw ValidationError("image_size must be divisible by patch_size");
        if (heads == 0 || embed_dim % heads != 0)
            throw ValidationError("embed_dim must be divisible by heads");
        if (group1.empty() || group2.empty())
            throw ValidationError("feature groups must be non-empty");
        for (std::size_t i : group1)
            for (std::size_t j : group2)
                if (i == j) throw ValidationError("feature groups must be disjoint");
        auto in_range = [&](const std::vector<std::size_t>& g) {
            for (std::size_t i : g)
                if (i < 1 || i > depth) throw ValidationError("group block index out of range");
        };
        in_range(group1);
        in_range(group2);
    }
};

template <typename Real>
struct FeaturePair {
    Var<Real> fe1;  // [B,N,D] shallow group mean
    Var<Real> fe2;  // [B,N,D] deep group mean
    std::size_t grid_rows = 0, grid_cols = 0;
};

namespace backbone {

// Frozen weights are synthesized from the seed; nothing here ever trains.
template <typename Real>
void init_params(ParamStore<Real>& store, const BackboneConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    std::size_t p = cfg.patch_size, d = cfg.embed_dim;
    store.add("backbone.patch_proj",
              gaussian_tensor<Real>({p * p * cfg.channels, d}, rng, 0.02), true);
    store.add("backbone.patch_bias", Tensor<Real>({d}), true);
    if (cfg.pos_embed)
        store.add("backbone.pos_embed", gaussian_tensor<Real>({cfg.tokens(), d}, rng, 0.02), true);
    for (std::size_t i = 1; i <= cfg.depth; ++i)
        blocks::init_block_params(store, "backbone.block" + std::to_string(i), d, true, rng);
}

// Non-overlapping patches flattened row-major and linearly projected:
// [B,C,H,W] -> [B,N,D] with N = (H/patch)^2.
template <typename Real>
Var<Real> patchify(BoundParams<Real>& params, const Var<Real>& x, const BackboneConfig& cfg) {
    const Shape& s = x->value.shape;
    if (s.size() != 4 || s[2] != cfg.image_size || s[3] != cfg.image_size)
        throw ValidationError("patchify: input " + shape_str(s) + " does not match image_size " +
                              std::to_string(cfg.image_size));
    if (s[1] != cfg.channels)
        throw ValidationError("patchify: channel count mismatch");
    std::size_t g = cfg.grid(), p = cfg.patch_size;
    // [B,C,gh,p,gw,p] -> [B,gh,gw,p,p,C] -> [B,N,p*p*C]
    auto r = ad::reshape(x, Shape{s[0], s[1], g, p, g, p});
    auto t = ad::permute(r, {0, 2, 4, 3, 5, 1});
    auto flat = ad::reshape(t, Shape{s[0], g * g, p * p * cfg.channels});
    return ad::add(ad::matmul(flat, params("backbone.patch_proj")), params("backbone.patch_bias"));
}

// Runs every block, returning each block's output in order.
template <typename Real>
std::vector<Var<Real>> encode(BoundParams<Real>& params, const Var<Real>& tokens,
                              const BackboneConfig& cfg) {
    if (tokens->value.rank() != 3) throw ValidationError("encode expects [B,N,D]");
    Var<Real> x = tokens;
    if (cfg.pos_embed) x = ad::add(x, params("backbone.pos_embed"));
    std::vector<Var<Real>> outs;
    outs.reserve(cfg.depth);
    for (std::size_t i = 1; i <= cfg.depth; ++i) {
        x = blocks::transformer_block(params, "backbone.block" + std::to_string(i), x, cfg.heads);
        outs.push_back(x);
    }
    return outs;
}

template <typename Real>
Var<Real> group_mean(const std::vector<Var<Real>>& outs, const std::vector<std::size_t>& group) {
    Var<Real> acc;
    for (std::size_t idx : group) {
        if (idx < 1 || idx > outs.size()) throw ValidationError("group block index out of range");
        const auto& blk = outs[idx - 1];
        acc = acc ? ad::add(acc, blk) : blk;
    }
    return ad::scale(acc, Real(1) / static_cast<Real>(group.size()));
}

template <typename Real>
FeaturePair<Real> group_features(const std::vector<Var<Real>>& outs, const BackboneConfig& cfg) {
    FeaturePair<Real> fp;
    fp.fe1 = group_mean(outs, cfg.group1);
    fp.fe2 = group_mean(outs, cfg.group2);
    fp.grid_rows = fp.grid_cols = cfg.grid();
    return fp;
}

}  // namespace backbone
}  // namespace mvmcad
