#include "certmark/model.hpp"

#include <doctest.h>

#include <set>

using namespace certmark;

TEST_CASE("small_cnn parameter count matches layer arithmetic") {
  const auto spec = ModelSpec::small_cnn({16, 16, 1}, 10);
  // conv3x3 1->8: 14x14, conv3x3 s2 8->16: 6x6, dense 576->64, dense 64->10
  const Eigen::Index expected = (9 * 1 * 8 + 8) + (9 * 8 * 16 + 16) + (576 * 64 + 64) + (64 * 10 + 10);
  CHECK(spec.param_count() == expected);
  CHECK(spec.shapes()[1] == Shape{14, 14, 8});
  CHECK(spec.shapes()[3] == Shape{6, 6, 16});
  CHECK(spec.shapes().back() == Shape{1, 1, 10});

  const auto mnist = ModelSpec::small_cnn({28, 28, 1}, 10);
  CHECK(mnist.shapes()[1] == Shape{12, 12, 8});
  CHECK(mnist.shapes()[3] == Shape{5, 5, 16});
}

TEST_CASE("parameter blocks tile the flat vector") {
  const auto spec = ModelSpec::mlp({4, 4, 2}, {7, 5}, 3);
  Eigen::Index next = 0;
  for (const auto& b : spec.blocks()) {
    CHECK(b.offset == next);
    next += b.size();
  }
  CHECK(next == spec.param_count());
  CHECK(spec.param_count() == (32 * 7 + 7) + (7 * 5 + 5) + (5 * 3 + 3));
}

TEST_CASE("invalid architectures are rejected") {
  CHECK_THROWS_AS(ModelSpec({8, 8, 1}, {LayerSpec::dense(10)}, 10), ShapeError);
  CHECK_THROWS_AS(ModelSpec({8, 8, 1}, {LayerSpec::flatten(), LayerSpec::dense(5)}, 10), ShapeError);
  CHECK_THROWS_AS(ModelSpec({8, 8, 1}, {LayerSpec::flatten(), LayerSpec::dense(10), LayerSpec::relu()}, 10),
                  ShapeError);
  CHECK_THROWS_AS(ModelSpec({4, 4, 1}, {LayerSpec::conv(5, 2), LayerSpec::flatten(), LayerSpec::dense(2)}, 2),
                  ShapeError);
  CHECK_THROWS_AS(ModelSpec({8, 8, 1}, {LayerSpec::flatten(), LayerSpec::conv(3, 2), LayerSpec::dense(2)}, 2),
                  ShapeError);
  CHECK_THROWS_AS(ModelSpec({0, 8, 1}, {LayerSpec::flatten(), LayerSpec::dense(2)}, 2), ShapeError);
  CHECK_THROWS_AS(ModelSpec({8, 8, 1}, {LayerSpec::flatten(), LayerSpec::dense(1)}, 1), ShapeError);
}

TEST_CASE("digest follows the canonical form") {
  const auto a = ModelSpec::small_cnn({16, 16, 1}, 10);
  const auto b = ModelSpec::small_cnn({16, 16, 1}, 10);
  const auto c = ModelSpec::small_cnn({16, 16, 1}, 9);
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != c.digest());
  CHECK(a.canonical() == "input=16x16x1;classes=10;conv(3,8,1);relu;conv(3,16,2);relu;flatten;dense(64);relu;dense(10)");
  CHECK(hex_digest(0xabcULL) == "0000000000000abc");
}

TEST_CASE("init is seeded and fan-in bounded") {
  const auto spec = ModelSpec::small_cnn({16, 16, 1}, 10);
  const auto p1 = init_params(spec, 7);
  const auto p2 = init_params(spec, 7);
  const auto p3 = init_params(spec, 8);
  CHECK(p1 == p2);
  CHECK(p1 != p3);
  for (const auto& b : spec.blocks()) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(b.cols));
    CHECK(p1.segment(b.offset, b.size()).cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("unflatten and flatten round-trip") {
  const auto spec = ModelSpec::small_cnn({16, 16, 1}, 10);
  const auto p = init_params(spec, 3);
  const auto layers = unflatten(spec, p);
  REQUIRE(layers.size() == spec.blocks().size());
  CHECK(layers[0].weights.rows() == 8);
  CHECK(layers[0].weights.cols() == 9);
  CHECK(layers[0].weights(2, 4) == p[spec.blocks()[0].offset + 4 * 8 + 2]);
  CHECK(flatten(spec, layers) == p);
  CHECK_THROWS_AS(unflatten(spec, ParamVector::Zero(5)), ShapeError);
  auto bad = layers;
  bad[1].bias.resize(3);
  CHECK_THROWS_AS(flatten(spec, bad), ShapeError);
}

TEST_CASE("layer kind names round-trip") {
  for (auto k : {LayerKind::Dense, LayerKind::Conv, LayerKind::Relu, LayerKind::Flatten})
    CHECK(layer_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(layer_kind_from_string("pool"), std::invalid_argument);
}
