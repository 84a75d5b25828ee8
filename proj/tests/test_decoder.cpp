#include <cmath>
#include <string>

#include "doctest.h"
#include "mvmcad/decoder.hpp"

using namespace mvmcad;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0, scale);
    return t;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

TEST_CASE("decode output shapes and input validation") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.seed = 30;
    ParamStore<double> store;
    decoder::init_params(store, cfg);

    Rng rng(31);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto x = tape.leaf(random_tensor({3, 5, 8}, rng), false);
    auto out = decoder::decode(params, x, cfg);
    CHECK(out.f1->value.shape == Shape{3, 5, 8});
    CHECK(out.f2->value.shape == Shape{3, 5, 8});

    auto bad = tape.leaf(Tensor<double>({3, 5, 7}), false);
    CHECK_THROWS_AS(decoder::decode(params, bad, cfg), ValidationError);

    decoder::DecoderConfig shallow = cfg;
    shallow.depth = 1;
    CHECK_THROWS_AS(shallow.validate(), ValidationError);
    decoder::DecoderConfig odd = cfg;
    odd.heads = 3;
    CHECK_THROWS_AS(odd.validate(), ValidationError);
}

TEST_CASE("zeroed projection weights make each block an identity") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.seed = 32;
    ParamStore<double> store;
    decoder::init_params(store, cfg);
    // residual branches vanish when attention output and MLP second layer are zero
    for (auto& [name, entry] : store.entries)
        if (ends_with(name, ".attn.wo") || ends_with(name, ".mlp.w2"))
            std::fill(entry.value.data.begin(), entry.value.data.end(), 0.0);

    Rng rng(33);
    Tensor<double> x0 = random_tensor({2, 4, 8}, rng);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto out = decoder::decode(params, tape.leaf(x0, false), cfg);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(out.f1->value.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-14));
        CHECK(out.f2->value.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-14));
    }
}

TEST_CASE("decode equals an explicit block-by-block composition") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.seed = 34;
    ParamStore<double> store;
    decoder::init_params(store, cfg);

    Rng rng(35);
    Tensor<double> x0 = random_tensor({1, 6, 8}, rng);

    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto got = decoder::decode(params, tape.leaf(x0, false), cfg);

    Tape<double> t2;
    BoundParams<double> p2(t2, store);
    auto x = t2.leaf(x0, false);
    auto b1 = blocks::transformer_block(p2, "decoder.block1", x, cfg.heads);
    auto b2 = blocks::transformer_block(p2, "decoder.block2", b1, cfg.heads);
    auto b3 = blocks::transformer_block(p2, "decoder.block3", b2, cfg.heads);
    auto b4 = blocks::transformer_block(p2, "decoder.block4", b3, cfg.heads);
    auto f1 = ad::scale(ad::add(b1, b2), 0.5);
    auto f2 = ad::scale(ad::add(b3, b4), 0.5);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(std::abs(got.f1->value.data[i] - f1->value.data[i]) <= 1e-12);
        CHECK(std::abs(got.f2->value.data[i] - f2->value.data[i]) <= 1e-12);
    }
}

TEST_CASE("odd depth splits floor(depth/2) / rest") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 4;
    cfg.depth = 3;
    cfg.heads = 1;
    cfg.seed = 36;
    ParamStore<double> store;
    decoder::init_params(store, cfg);

    Rng rng(37);
    Tensor<double> x0 = random_tensor({1, 2, 4}, rng);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto got = decoder::decode(params, tape.leaf(x0, false), cfg);

    Tape<double> t2;
    BoundParams<double> p2(t2, store);
    auto b1 = blocks::transformer_block(p2, "decoder.block1", t2.leaf(x0, false), cfg.heads);
    auto b2 = blocks::transformer_block(p2, "decoder.block2", b1, cfg.heads);
    auto b3 = blocks::transformer_block(p2, "decoder.block3", b2, cfg.heads);
    auto f2 = ad::scale(ad::add(b2, b3), 0.5);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(std::abs(got.f1->value.data[i] - b1->value.data[i]) <= 1e-12);
        CHECK(std::abs(got.f2->value.data[i] - f2->value.data[i]) <= 1e-12);
    }
}

TEST_CASE("every decoder parameter is trainable and receives gradient") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 4;
    cfg.heads = 2;
    cfg.seed = 38;
    ParamStore<double> store;
    decoder::init_params(store, cfg);
    for (const auto& [name, entry] : store.entries) {
        INFO("parameter ", name);
        CHECK_FALSE(entry.frozen);
    }

    Rng rng(39);
    Tape<double> tape;
    BoundParams<double> params(tape, store);
    auto out = decoder::decode(params, tape.leaf(random_tensor({2, 4, 8}, rng), false), cfg);
    tape.backward(ad::sum_all(ad::add(ad::square(out.f1), ad::square(out.f2))));
    for (const auto& [name, var] : params.vars) {
        double norm = 0;
        for (double g : var->grad.data) norm += g * g;
        INFO("parameter ", name);
        // key bias shifts cancel inside softmax, every other tensor must move
        if (ends_with(name, ".attn.bk"))
            CHECK(norm <= 1e-20);
        else
            CHECK(norm > 0.0);
    }
}

TEST_CASE("decode is deterministic for a fixed seed") {
    decoder::DecoderConfig cfg;
    cfg.embed_dim = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.seed = 40;
    ParamStore<double> a, b;
    decoder::init_params(a, cfg);
    decoder::init_params(b, cfg);
    for (const auto& [name, entry] : a.entries) {
        const auto& other = b.at(name).value;
        REQUIRE(entry.value.data == other.data);
    }
}
