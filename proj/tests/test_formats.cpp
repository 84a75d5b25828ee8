#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mvmcad/rng.hpp"
#include "mvmcad/tensor_io.hpp"

using namespace mvmcad;

TEST_CASE("MVTN round trip is bit exact, f32 and f64") {
    Rng rng(2024);
    Tensor<double> td({2, 3, 4});
    for (auto& v : td.data) v = rng.normal();
    std::stringstream ss;
    mvtn::write(ss, td);
    auto back = mvtn::read<double>(ss);
    CHECK(back.shape == td.shape);
    CHECK(back.data == td.data);

    Tensor<float> tf({5});
    for (auto& v : tf.data) v = float(rng.normal());
    std::stringstream ss2;
    mvtn::write(ss2, tf);
    auto backf = mvtn::read<float>(ss2);
    CHECK(backf.data == tf.data);
}

TEST_CASE("MVTN header layout is as documented") {
    Tensor<float> t({2, 1}, {1.0f, -2.0f});
    std::stringstream ss;
    mvtn::write(ss, t);
    std::string bytes = ss.str();
    REQUIRE(bytes.size() == 4 + 4 + 4 + 16 + 1 + 8);
    CHECK(bytes.substr(0, 4) == "MVTN");
    CHECK(std::uint8_t(bytes[4]) == 1);   // version LE
    CHECK(std::uint8_t(bytes[8]) == 2);   // rank LE
    CHECK(std::uint8_t(bytes[12]) == 2);  // dims[0]
    CHECK(std::uint8_t(bytes[20]) == 1);  // dims[1]
    CHECK(std::uint8_t(bytes[28]) == 0);  // dtype f32
}

TEST_CASE("MVTN rejects bad magic and truncation") {
    std::stringstream ss("NOPE");
    CHECK_THROWS_AS(mvtn::read<float>(ss), IoError);

    Tensor<float> t({3}, {1, 2, 3});
    std::stringstream full;
    mvtn::write(full, t);
    std::string cut = full.str().substr(0, full.str().size() - 2);
    std::stringstream truncated(cut);
    CHECK_THROWS_AS(mvtn::read<float>(truncated), IoError);
}

TEST_CASE("MVTN file save/load") {
    Tensor<double> t({3, 2}, {1, 2, 3, 4, 5, 6});
    mvtn::save("/tmp/mvmcad_test_tensor.mvtn", t);
    auto back = mvtn::load<double>("/tmp/mvmcad_test_tensor.mvtn");
    CHECK(back.shape == t.shape);
    CHECK(back.data == t.data);
}
