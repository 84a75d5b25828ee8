#include <cmath>

#include "doctest.h"
#include "mvmcad/backbone.hpp"

using namespace mvmcad;

namespace {

BackboneConfig small_cfg() {
    BackboneConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.channels = 3;
    cfg.embed_dim = 8;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.group1 = {1, 2};
    cfg.group2 = {3, 4};
    cfg.seed = 42;
    return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("patchify token count contract") {
    BackboneConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 4;
    cfg.validate();
    ParamStore<double> store;
    backbone::init_params(store, cfg);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto x = tape.leaf(Tensor<double>({1, 3, 32, 32}), false);
    auto tokens = backbone::patchify(params, x, cfg);
    CHECK(tokens->value.shape == Shape{1, 64, 64});
    // zero image, zero bias -> zero tokens
    for (double v : tokens->value.data) CHECK(v == 0.0);
}

TEST_CASE("patchify rejects size mismatch") {
    auto cfg = small_cfg();
    ParamStore<double> store;
    backbone::init_params(store, cfg);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto x = tape.leaf(Tensor<double>({1, 3, 16, 16}), false);
    CHECK_THROWS_AS(backbone::patchify(params, x, cfg), ValidationError);
}

TEST_CASE("patchify matches explicit flatten+matmul oracle") {
    auto cfg = small_cfg();
    ParamStore<double> store;
    backbone::init_params(store, cfg);
    Rng rng(9);
    Tensor<double> x0 = random_tensor({2, 3, 8, 8}, rng);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto tokens = backbone::patchify(params, tape.leaf(x0, false), cfg);
    const auto& proj = store.at("backbone.patch_proj").value;  // [p*p*C, D]
    std::size_t g = cfg.grid(), p = cfg.patch_size;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t gy = 0; gy < g; ++gy) {
            for (std::size_t gx = 0; gx < g; ++gx) {
                // flatten patch as [p, p, C] row-major
                std::vector<double> flat;
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t c = 0; c < 3; ++c)
                            flat.push_back(x0.at({b, c, gy * p + py, gx * p + px}));
                for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
                    double acc = 0;
                    for (std::size_t k = 0; k < flat.size(); ++k)
                        acc += flat[k] * proj.at({k, d});
                    CHECK(tokens->value.at({b, gy * g + gx, d}) ==
                          doctest::Approx(acc).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("encode depth 0 returns an empty list (passthrough)") {
    BackboneConfig cfg;
    cfg.depth = 0;
    cfg.pos_embed = false;
    ParamStore<double> store;
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto tokens = tape.leaf(Tensor<double>({1, 4, 8}), false);
    auto outs = backbone::encode(params, tokens, cfg);
    CHECK(outs.empty());
}

TEST_CASE("encode is deterministic for a fixed seed") {
    auto cfg = small_cfg();
    ParamStore<double> s1, s2;
    backbone::init_params(s1, cfg);
    backbone::init_params(s2, cfg);
    Rng rng(10);
    auto x0 = random_tensor({1, 3, 8, 8}, rng);
    auto run = [&](ParamStore<double>& store) {
        Tape<double> tape;
        BoundParams<double> params(tape, store);
        auto outs = backbone::encode(params, backbone::patchify(params, tape.leaf(x0, false), cfg), cfg);
        return outs.back()->value;
    };
    auto a = run(s1), b = run(s2);
    CHECK(a.data == b.data);  // bitwise
}

TEST_CASE("one block matches step-by-step reference composition") {
    auto cfg = small_cfg();
    cfg.depth = 1;
    cfg.group1 = {1};
    cfg.group2 = {1};  // disjointness not needed for this check
    ParamStore<double> store;
    Rng wrng(cfg.seed);
    store.add("backbone.patch_proj",
              gaussian_tensor<double>({cfg.patch_size * cfg.patch_size * 3, cfg.embed_dim}, wrng, 0.02),
              true);
    store.add("backbone.patch_bias", Tensor<double>({cfg.embed_dim}), true);
    store.add("backbone.pos_embed", gaussian_tensor<double>({cfg.tokens(), cfg.embed_dim}, wrng, 0.02),
              true);
    blocks::init_block_params(store, "backbone.block1", cfg.embed_dim, true, wrng);

    Rng rng(11);
    auto x0 = random_tensor({1, 3, 8, 8}, rng);

    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto tokens = backbone::patchify(params, tape.leaf(x0, false), cfg);
    auto outs = backbone::encode(params, tokens, cfg);
    REQUIRE(outs.size() == 1);

    // independent composition from primitive ops
    Tape<double> tape2;
    BoundParams<double> p2(tape2, store);
    auto t2 = backbone::patchify(p2, tape2.leaf(x0, false), cfg);
    auto x = ad::add(t2, p2("backbone.pos_embed"));
    auto ln1 = blocks::layer_norm(x, p2("backbone.block1.ln1.g"), p2("backbone.block1.ln1.b"));
    auto q = blocks::split_heads(
        ad::add(ad::matmul(ln1, p2("backbone.block1.attn.wq")), p2("backbone.block1.attn.bq")),
        cfg.heads);
    auto k = blocks::split_heads(
        ad::add(ad::matmul(ln1, p2("backbone.block1.attn.wk")), p2("backbone.block1.attn.bk")),
        cfg.heads);
    auto v = blocks::split_heads(
        ad::add(ad::matmul(ln1, p2("backbone.block1.attn.wv")), p2("backbone.block1.attn.bv")),
        cfg.heads);
    auto att = ad::matmul(
        ad::softmax(ad::scale(ad::matmul(q, k, false, true),
                              1.0 / std::sqrt(double(cfg.embed_dim / cfg.heads))), 3),
        v);
    auto proj = ad::add(ad::matmul(blocks::merge_heads(att), p2("backbone.block1.attn.wo")),
                        p2("backbone.block1.attn.bo"));
    auto a = ad::add(x, proj);
    auto ln2 = blocks::layer_norm(a, p2("backbone.block1.ln2.g"), p2("backbone.block1.ln2.b"));
    auto h = ad::gelu(ad::add(ad::matmul(ln2, p2("backbone.block1.mlp.w1")),
                              p2("backbone.block1.mlp.b1")));
    auto y = ad::add(a, ad::add(ad::matmul(h, p2("backbone.block1.mlp.w2")),
                                p2("backbone.block1.mlp.b2")));
    for (std::size_t i = 0; i < y->value.size(); ++i)
        CHECK(std::abs(outs[0]->value.data[i] - y->value.data[i]) <= 1e-10);
}

TEST_CASE("group_features aggregation") {
    Tape<double> tape;
    Rng rng(12);
    auto b1 = tape.leaf(random_tensor({1, 4, 8}, rng), false);
    auto b2 = tape.leaf(random_tensor({1, 4, 8}, rng), false);
    auto b3 = tape.leaf(random_tensor({1, 4, 8}, rng), false);
    std::vector<Var<double>> outs = {b1, b2, b3};

    // size-1 group returns that block
    auto single = backbone::group_mean(outs, {2});
    CHECK(single->value.data == b2->value.data);

    // identical blocks: mean equals either
    std::vector<Var<double>> twins = {b1, b1};
    auto tw = backbone::group_mean(twins, {1, 2});
    for (std::size_t i = 0; i < tw->value.size(); ++i)
        CHECK(tw->value.data[i] == doctest::Approx(b1->value.data[i]).epsilon(1e-15));

    // 3-block group vs loop mean
    auto m = backbone::group_mean(outs, {1, 2, 3});
    for (std::size_t i = 0; i < m->value.size(); ++i) {
        double ref = (b1->value.data[i] + b2->value.data[i] + b3->value.data[i]) / 3.0;
        CHECK(std::abs(m->value.data[i] - ref) <= 1e-12);
    }
}

TEST_CASE("config validation rejects bad shapes and overlapping groups") {
    BackboneConfig cfg = small_cfg();
    cfg.image_size = 30;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_cfg();
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_cfg();
    cfg.group2 = {2, 3};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
