#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "itae/conv.hpp"
#include "itae/errors.hpp"
#include "itae/ops.hpp"
#include "itae/tensor_io.hpp"

using namespace itae;
using itae::testing::gradcheck;

using itae::testing::away_from_zero;
using itae::testing::weighted_sum;

TEST_CASE("conv3d all-ones interior") {
  Tensor5 x = Tensor5::ones({1, 1, 4, 8, 8});
  Tensor5 w = Tensor5::ones({1, 1, 1, 3, 3});
  Tensor5 y = conv3d(x, w, {1, 1, 1}, {0, 1, 1});
  CHECK(y.shape() == Shape5{1, 1, 4, 8, 8});
  for (std::int64_t t = 0; t < 4; ++t)
    for (std::int64_t h = 1; h < 7; ++h)
      for (std::int64_t w2 = 1; w2 < 7; ++w2) CHECK(y.at(0, 0, t, h, w2) == 9.0);
  CHECK(y.at(0, 0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 0, 0, 3) == 6.0);
}

TEST_CASE("conv3d padding 1 on all axes sums the full 3x3 support") {
  Tensor5 x = Tensor5::ones({1, 1, 4, 8, 8});
  Tensor5 w = Tensor5::ones({1, 1, 1, 3, 3});
  Tensor5 y = conv3d(x, w, {1, 1, 1}, {1, 1, 1});
  // Temporal padding with kt=1 adds two zero planes around the input.
  CHECK(y.shape() == Shape5{1, 1, 6, 8, 8});
  CHECK(y.at(0, 0, 2, 4, 4) == 9.0);
  CHECK(y.at(0, 0, 0, 4, 4) == 0.0);
}

TEST_CASE("conv3d dynamic Conv1 shape at 256x256") {
  std::mt19937_64 rng(1);
  Tensor5 x = Tensor5::uniform({1, 3, 16, 256, 256}, rng, 0, 1);
  Tensor5 w = Tensor5::randn({12, 3, 5, 3, 3}, rng, 0.1);
  NoGradGuard ng;
  Tensor5 y = conv3d(x, w, {1, 2, 2}, {2, 1, 1});
  CHECK(y.shape() == Shape5{1, 12, 16, 128, 128});
}

TEST_CASE("conv3d reports both shapes on channel mismatch") {
  Tensor5 x({1, 2, 3, 4, 4});
  Tensor5 w({1, 3, 1, 1, 1});
  try {
    conv3d(x, w, {1, 1, 1}, {0, 0, 0});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("1x2x3x4x4") != std::string::npos);
    CHECK(msg.find("1x3x1x1x1") != std::string::npos);
  }
  CHECK_THROWS_AS(conv3d(Tensor5({1, 1, 1, 2, 2}), Tensor5({1, 1, 1, 3, 3}), {1, 1, 1}, {0, 0, 0}),
                  DimensionError);
}

TEST_CASE("conv3d input gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor5 x = Tensor5::randn({1, 1, 2, 3, 3}, rng);
  Tensor5 w = Tensor5::randn({2, 1, 2, 3, 3}, rng);
  auto rep = gradcheck([&] { return sum_all(conv3d(x, w, {1, 1, 1}, {1, 1, 1})); }, {x}, 1e-4);
  CHECK(rep.max_abs_error < 1e-5);
}

TEST_CASE("conv_transpose3d DeConv2 shape") {
  Shape5 out = conv_transpose3d_shape({1, 256, 4, 64, 64}, {256, 128, 3, 3, 3}, {2, 2, 2},
                                      {1, 1, 1}, {1, 1, 1});
  CHECK(out == Shape5{1, 128, 8, 128, 128});
}

TEST_CASE("conv_transpose3d with identity 1x1x1 kernel is the identity") {
  std::mt19937_64 rng(3);
  Tensor5 x = Tensor5::randn({2, 3, 2, 4, 5}, rng);
  Tensor5 w({3, 3, 1, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0, 0) = 1.0;
  Tensor5 y = conv_transpose3d(x, w, {1, 1, 1}, {0, 0, 0});
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv3d and conv_transpose3d are adjoint") {
  struct Case {
    Triple stride, pad, out_pad;
    Shape5 kernel;
  };
  const Case cases[] = {
      {{1, 1, 1}, {1, 1, 1}, {0, 0, 0}, {3, 2, 3, 3, 3}},
      {{2, 2, 2}, {1, 1, 1}, {1, 1, 1}, {3, 2, 3, 3, 3}},
      {{1, 2, 2}, {0, 1, 1}, {0, 1, 1}, {2, 2, 1, 3, 3}},
      {{2, 1, 1}, {2, 0, 0}, {1, 0, 0}, {2, 2, 5, 1, 1}},
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& c : cases) {
      std::mt19937_64 rng(seed);
      Tensor5 x = Tensor5::randn({2, 2, 2, 4, 4}, rng);
      Tensor5 w = Tensor5::randn(c.kernel, rng);
      NoGradGuard ng;
      Tensor5 cx = conv3d(x, w, c.stride, c.pad);
      Tensor5 y = Tensor5::randn(cx.shape(), rng);
      Tensor5 ty = conv_transpose3d(y, w, c.stride, c.pad, c.out_pad);
      REQUIRE(ty.shape() == x.shape());
      CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-8);
    }
  }
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(11);
  Tensor5 x = Tensor5::randn({2, 3, 1, 2, 2}, rng).set_requires_grad(true);
  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(scale(sum_all(square(x)), 0.5));
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]));
  CHECK(GradTape::current().empty());
}

TEST_CASE("backward contract violations") {
  Tensor5 x = Tensor5::ones({1, 1, 1, 2, 2}).set_requires_grad(true);
  Tensor5 y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), ContractError);
  GradTape::current().clear();
  Tensor5 s = Tensor5::scalar(1.0);
  CHECK_THROWS_AS(backward(s), ContractError);
}

TEST_CASE("conv -> relu -> sum gradient matches finite differences") {
  std::mt19937_64 rng(5);
  Tensor5 x = Tensor5::randn({1, 1, 2, 4, 4}, rng);
  Tensor5 w = Tensor5::randn({2, 1, 1, 3, 3}, rng);
  auto rep = gradcheck([&] { return sum_all(relu(conv3d(x, w, {1, 1, 1}, {0, 1, 1}))); }, {x, w});
  CHECK(rep.max_abs_error < 1e-5);
}

TEST_CASE("diamond graphs accumulate gradients") {
  Tensor5 x = Tensor5(Shape5{1, 1, 1, 1, 3}, std::vector<double>{1.0, 2.0, 3.0}).set_requires_grad(true);
  Tensor5 a = scale(x, 3.0);
  Tensor5 b = square(x);
  backward(sum_all(add(a, b)));  // d/dx (3x + x^2) = 3 + 2x
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[2] == doctest::Approx(9.0));

  x.zero_grad();
  backward(sum_all(mul(x, x)));  // same tensor on both sides
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("every differentiable op passes a randomized finite-difference check") {
  for (const auto& c : itae::testing::op_cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto [a, b] = itae::testing::op_inputs(c, rng);
      Tensor5 probe;
      {
        NoGradGuard ng;
        probe = Tensor5::randn(c.fn(a, b).shape(), rng);
      }
      auto rep = gradcheck([&] { return weighted_sum(c.fn(a, b), probe); }, {a, b}, 1e-4);
      INFO(c.name << " seed " << seed);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("concat of 96 and 16 channels gives 112") {
  Tensor5 a({1, 96, 2, 4, 4}, 1.0);
  Tensor5 b({1, 16, 2, 4, 4}, 2.0);
  Tensor5 c = concat({a, b}, kChannel);
  CHECK(c.shape() == Shape5{1, 112, 2, 4, 4});
  CHECK(c.at(0, 95, 1, 3, 3) == 1.0);
  CHECK(c.at(0, 96, 0, 0, 0) == 2.0);
  CHECK_THROWS_AS(concat({a, Tensor5({1, 16, 3, 4, 4})}, kChannel), DimensionError);
}

TEST_CASE("max over channel of a constant: value and first-index gradient") {
  Tensor5 x = Tensor5({1, 4, 1, 1, 2}, 0.7).set_requires_grad(true);
  Tensor5 m = max(x, {kChannel});
  CHECK(m.shape() == Shape5{1, 1, 1, 1, 2});
  CHECK(m.at(0, 0, 0, 0, 0) == 0.7);
  backward(sum_all(m));
  CHECK(x.grad()[0] == 1.0);  // (c=0, w=0)
  CHECK(x.grad()[1] == 1.0);  // (c=0, w=1)
  for (std::size_t i = 2; i < 8; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("mean over all axes of ones") {
  CHECK(mean_all(Tensor5::ones({2, 3, 4, 5, 6})).item() == doctest::Approx(1.0));
}

TEST_CASE("domain violations surface as NumericError") {
  CHECK_THROWS_AS(log(Tensor5({1, 1, 1, 1, 2}, 0.0)), NumericError);
  CHECK_THROWS_AS(exp(Tensor5({1, 1, 1, 1, 1}, 1e6)), NumericError);
  Tensor5 bad({1, 1, 1, 1, 2});
  bad.mutable_data()[1] = std::nan("");
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(bad.check_finite("bad"), NumericError);
}

TEST_CASE("binary ops broadcast only over batch") {
  CHECK(add(Tensor5({4, 2, 1, 1, 1}), Tensor5({1, 2, 1, 1, 1})).shape() == Shape5{4, 2, 1, 1, 1});
  CHECK_THROWS_AS(add(Tensor5({1, 2, 1, 1, 1}), Tensor5({1, 1, 1, 1, 1})), DimensionError);
}

TEST_CASE("space_to_channel round trip") {
  std::mt19937_64 rng(2);
  Tensor5 x = Tensor5::randn({2, 3, 1, 4, 6}, rng);
  Tensor5 y = space_to_channel(x);
  CHECK(y.shape() == Shape5{2, 12, 1, 2, 3});
  CHECK(y.at(1, 2 * 4 + 3, 0, 1, 2) == x.at(1, 2, 0, 3, 5));
  Tensor5 z = channel_to_space(y);
  for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(z.data()[i] == x.data()[i]);
}

TEST_CASE("packed tensor format") {
  std::mt19937_64 rng(9);
  Tensor5 x = Tensor5::randn({1, 2, 3, 4, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, x);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 5 * 4 + 120 * 8);
  CHECK(bytes.substr(0, 4) == "T5v1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);
  CHECK(static_cast<unsigned char>(bytes[20]) == 5);
  double first;
  std::memcpy(&first, bytes.data() + 24, 8);
  CHECK(first == x.data()[0]);

  Tensor5 y = read_tensor(ss);
  CHECK(y.shape() == x.shape());
  CHECK(std::memcmp(y.data().data(), x.data().data(), 120 * sizeof(double)) == 0);

  std::stringstream bad("T5v2xxxx");
  CHECK_THROWS(read_tensor(bad));
}
