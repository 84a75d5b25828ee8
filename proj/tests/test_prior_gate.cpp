#include <cmath>

#include "doctest.h"
#include "mvmcad/prior_gate.hpp"
#include "mvmcad/rng.hpp"

using namespace mvmcad;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("weighted_norm zeroes constant channels and gamma=0 channels") {
    Tape<double> tape;
    Tensor<double> x({1, 2, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) x.data[i] = 3.7;           // channel 0 constant
    for (std::size_t i = 4; i < 8; ++i) x.data[i] = double(i);     // channel 1 varies
    auto xv = tape.leaf(x, false);
    auto gamma = tape.leaf(Tensor<double>({2}, {1.0, 0.0}), false);
    auto out = prior_gate::weighted_norm(xv, gamma);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out->value.data[i] == 0.0);  // zero variance
    for (std::size_t i = 4; i < 8; ++i) CHECK(out->value.data[i] == 0.0);  // gamma 0
}

TEST_CASE("weighted_norm matches scalar mean/std reference") {
    Tape<double> tape;
    Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto out = prior_gate::weighted_norm(tape.leaf(x, false),
                                         tape.leaf(Tensor<double>({1}, {1.0}), false));
    double mu = 2.5;
    double sigma = std::sqrt((1.5 * 1.5 + 0.5 * 0.5 + 0.5 * 0.5 + 1.5 * 1.5) / 4.0);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(out->value.data[i] ==
              doctest::Approx((x.data[i] - mu) / (sigma + prior_gate::kSigmaEps)).epsilon(1e-12));
}

TEST_CASE("channel_weights forced values and normalization") {
    Tape<double> tape;
    auto a = prior_gate::channel_weights(tape.leaf(Tensor<double>({3}, {1, -1, 2}), false));
    CHECK(a->value.data[0] == doctest::Approx(0.25));
    CHECK(a->value.data[1] == doctest::Approx(0.25));
    CHECK(a->value.data[2] == doctest::Approx(0.5));

    auto eq = prior_gate::channel_weights(tape.leaf(Tensor<double>::full({4}, 0.7), false));
    for (double v : eq->value.data) CHECK(v == doctest::Approx(0.25));

    CHECK_THROWS_AS(prior_gate::channel_weights(tape.leaf(Tensor<double>({3}), false)),
                    NumericError);

    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        Tape<double> t;
        auto g = t.leaf(random_tensor({5}, rng), false);
        auto alpha = prior_gate::channel_weights(g);
        double sum = 0;
        for (double v : alpha->value.data) {
            CHECK(v >= 0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-7);
    }
}

TEST_CASE("channel_gate halves X when the gate input is zero") {
    Rng rng(2);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 3, 2, 2}, rng), false);
    auto zero_norm = tape.leaf(Tensor<double>({2, 3, 2, 2}), false);
    auto alpha = tape.leaf(Tensor<double>::full({3}, 1.0 / 3), false);
    auto out = prior_gate::channel_gate(x, zero_norm, alpha);
    for (std::size_t i = 0; i < out->value.size(); ++i)
        CHECK(out->value.data[i] == doctest::Approx(0.5 * x->value.data[i]).epsilon(1e-12));

    // alpha_c = 0 for one channel also halves that channel
    auto xn = tape.leaf(random_tensor({1, 2, 2, 2}, rng), false);
    auto x2 = tape.leaf(random_tensor({1, 2, 2, 2}, rng), false);
    auto a2 = tape.leaf(Tensor<double>({2}, {0.0, 1.0}), false);
    auto out2 = prior_gate::channel_gate(x2, xn, a2);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(out2->value.data[i] == doctest::Approx(0.5 * x2->value.data[i]).epsilon(1e-12));
}

TEST_CASE("channel_gate matches scalar loop oracle") {
    Rng rng(3);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 3, 2, 2}, rng), false);
    auto xn = tape.leaf(random_tensor({2, 3, 2, 2}, rng), false);
    auto alpha = tape.leaf(Tensor<double>({3}, {0.2, 0.3, 0.5}), false);
    auto out = prior_gate::channel_gate(x, xn, alpha);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t w = 0; w < 2; ++w) {
                    double z = alpha->value.data[c] * xn->value.at({b, c, h, w});
                    double ref = 1.0 / (1.0 + std::exp(-z)) * x->value.at({b, c, h, w});
                    CHECK(out->value.at({b, c, h, w}) == doctest::Approx(ref).epsilon(1e-12));
                }
}

TEST_CASE("spatial_weights uniform, one-hot, and normalization") {
    Tape<double> tape;
    auto constant = tape.leaf(Tensor<double>::full({1, 3, 2, 2}, 2.0), false);
    auto beta = prior_gate::spatial_weights(constant);
    for (double v : beta->value.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    Tensor<double> spot({1, 1, 2, 2});
    spot.data[2] = 5.0;
    auto b2 = prior_gate::spatial_weights(tape.leaf(spot, false));
    CHECK(b2->value.data[2] == doctest::Approx(1.0));
    CHECK(b2->value.data[0] == 0.0);

    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Tape<double> t;
        auto x = t.leaf(random_tensor({2, 3, 3, 3}, rng), false);
        auto b = prior_gate::spatial_weights(x);
        for (std::size_t img = 0; img < 2; ++img) {
            double sum = 0;
            for (std::size_t i = 0; i < 9; ++i) sum += b->value.data[img * 9 + i];
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("spatial_weights raises on near-zero spatial sum") {
    Tape<double> tape;
    Tensor<double> x({1, 1, 1, 2}, {1.0, -1.0});
    CHECK_THROWS_AS(prior_gate::spatial_weights(tape.leaf(x, false)), NumericError);
}

TEST_CASE("spatial_gate matches scalar loop oracle and zeroes zero input") {
    Rng rng(5);
    Tape<double> tape;
    auto zero = tape.leaf(Tensor<double>({1, 2, 2, 2}), false);
    auto beta0 = tape.leaf(Tensor<double>::full({1, 2, 2}, 0.25), false);
    auto z = prior_gate::spatial_gate(zero, beta0);
    for (double v : z->value.data) CHECK(v == 0.0);

    auto x = tape.leaf(random_tensor({2, 3, 2, 2}, rng), false);
    auto beta = tape.leaf(random_tensor({2, 2, 2}, rng), false);
    auto out = prior_gate::spatial_gate(x, beta);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t w = 0; w < 2; ++w) {
                    double z2 = beta->value.at({b, h, w}) * x->value.at({b, c, h, w});
                    double ref = 1.0 / (1.0 + std::exp(-z2)) * x->value.at({b, c, h, w});
                    CHECK(out->value.at({b, c, h, w}) == doctest::Approx(ref).epsilon(1e-12));
                }
}

TEST_CASE("forward of a zero image is exactly zero") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1, 3, 4, 4}), false);
    auto gamma = tape.leaf(Tensor<double>::full({3}, 1.0), false);
    auto trace = prior_gate::forward(x, gamma);
    for (double v : trace.x_prior->value.data) CHECK(v == 0.0);
}

TEST_CASE("forward on constant gray matches component composition") {
    Tape<double> tape;
    double v = 0.5;
    std::size_t hw = 16;
    auto x = tape.leaf(Tensor<double>::full({1, 3, 4, 4}, v), false);
    auto gamma = tape.leaf(Tensor<double>::full({3}, 1.0), false);
    auto trace = prior_gate::forward(x, gamma);
    // constant image: X_norm = 0, gate = sigmoid(0) = 0.5, X_ch = v/2,
    // beta uniform, X_prior = sigmoid(v/2 / HW) * v/2
    double x_ch = 0.5 * v;
    double beta = 1.0 / double(hw);
    double expect = 1.0 / (1.0 + std::exp(-beta * x_ch)) * x_ch;
    for (double got : trace.x_prior->value.data)
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("forward gradients match finite differences") {
    Rng rng(6);
    Tensor<double> x0({2, 3, 3, 3});
    for (auto& v : x0.data) v = rng.uniform(0.05, 1.0);  // image-like positive input
    Tensor<double> g0({3}, {1.0, 0.8, 1.2});

    Tape<double> tape;
    auto x = tape.leaf(x0, true);
    auto gamma = tape.leaf(g0, true);
    tape.backward(ad::sum_all(prior_gate::forward(x, gamma).x_prior));

    auto run = [&](const Tensor<double>& xi, const Tensor<double>& gi) {
        Tape<double> t;
        auto out = prior_gate::forward(t.leaf(xi, false), t.leaf(gi, false)).x_prior;
        double s = 0;
        for (double v : out->value.data) s += v;
        return s;
    };
    auto fd_gamma = finite_diff_grad<double>(
        [&](const Tensor<double>& gi) { return run(x0, gi); }, g0, 1e-5);
    auto fd_x = finite_diff_grad<double>(
        [&](const Tensor<double>& xi) { return run(xi, g0); }, x0, 1e-5);
    for (std::size_t i = 0; i < g0.size(); ++i) {
        double denom = std::max(std::abs(fd_gamma.data[i]), 1e-6);
        CHECK(std::abs(gamma->grad.data[i] - fd_gamma.data[i]) / denom <= 1e-4);
    }
    for (std::size_t i = 0; i < x0.size(); ++i) {
        double denom = std::max(std::abs(fd_x.data[i]), 1e-6);
        CHECK(std::abs(x->grad.data[i] - fd_x.data[i]) / denom <= 1e-4);
    }
}

TEST_CASE("forward is equivariant to channel permutation") {
    Rng rng(7);
    Tensor<double> x0({1, 3, 2, 2});
    for (auto& v : x0.data) v = rng.uniform(0.1, 1.0);
    Tensor<double> g0({3}, {0.9, 1.1, 1.3});

    Tape<double> t1;
    auto out1 = prior_gate::forward(t1.leaf(x0, false), t1.leaf(g0, false)).x_prior;

    // permute channels (2,0,1)
    std::vector<std::size_t> perm = {2, 0, 1};
    Tensor<double> xp({1, 3, 2, 2});
    Tensor<double> gp({3});
    for (std::size_t c = 0; c < 3; ++c) {
        gp.data[c] = g0.data[perm[c]];
        for (std::size_t i = 0; i < 4; ++i) xp.data[c * 4 + i] = x0.data[perm[c] * 4 + i];
    }
    Tape<double> t2;
    auto out2 = prior_gate::forward(t2.leaf(xp, false), t2.leaf(gp, false)).x_prior;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(out2->value.data[c * 4 + i] ==
                  doctest::Approx(out1->value.data[perm[c] * 4 + i]).epsilon(1e-12));
}
