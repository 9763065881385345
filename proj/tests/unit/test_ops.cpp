#include <gtest/gtest.h>

#include "draglora/features.hpp"
#include "draglora/ops.hpp"
#include "draglora/rng.hpp"
#include "grad_check.hpp"

using namespace draglora;
using T = double;

namespace {

using Builder = std::function<Var<T>(Tape<T>&, std::vector<Var<T>>&)>;

// Projects the op output on a fixed random direction and checks d/d(input) for every input.
void check_op(std::vector<Tensor<T>> inputs, const Builder& build, std::uint64_t seed = 1) {
  Tensor<T> dir;
  auto eval = [&](bool grad) {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in, grad));
    Var<T> out = build(tape, vars);
    if (dir.empty()) dir = Rng(seed).normal_tensor<T>(out.shape());
    Var<T> loss = ops::dot_const(out, dir);
    std::vector<Tensor<T>> grads;
    if (grad) {
      tape.backward(loss);
      for (auto& v : vars) grads.push_back(v.grad());
    }
    return std::make_pair(loss.value()[0], grads);
  };
  auto [l0, grads] = eval(true);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto r = gradcheck::check(inputs[i], grads[i], [&] { return eval(false).first; }, 1e-5, 1e-5);
    EXPECT_EQ(r.passed, r.checked) << "input " << i << " worst " << r.worst;
  }
}

Tensor<T> randn(std::vector<int> shape, std::uint64_t seed) { return Rng(seed).normal_tensor<T>(shape); }

}  // namespace

TEST(OpsGrad, Elementwise) {
  check_op({randn({2, 3, 3}, 1), randn({2, 3, 3}, 2)}, [](Tape<T>&, auto& v) {
    return ops::silu(ops::axpby(T(0.7), v[0], T(-1.3), v[1]));
  });
}

TEST(OpsGrad, ChannelBias) {
  check_op({randn({3, 2, 2}, 3), randn({3}, 4)}, [](Tape<T>&, auto& v) { return ops::add_channel_bias(v[0], v[1]); });
}

TEST(OpsGrad, Matmul) {
  check_op({randn({3, 4}, 5), randn({4, 2}, 6)}, [](Tape<T>&, auto& v) { return ops::matmul(v[0], v[1]); });
}

TEST(OpsGrad, Conv2dPadded) {
  check_op({randn({2, 5, 5}, 7), randn({3, 2, 3, 3}, 8), randn({3}, 9)},
           [](Tape<T>&, auto& v) { return ops::conv2d(v[0], v[1], v[2], 1, 1); });
}

TEST(OpsGrad, Conv2dStrided) {
  check_op({randn({2, 6, 6}, 10), randn({3, 2, 3, 3}, 11), randn({3}, 12)},
           [](Tape<T>&, auto& v) { return ops::conv2d(v[0], v[1], v[2], 2, 1); });
}

TEST(OpsGrad, Conv2dPointwise) {
  check_op({randn({4, 3, 3}, 13), randn({2, 4, 1, 1}, 14), randn({2}, 15)},
           [](Tape<T>&, auto& v) { return ops::conv2d(v[0], v[1], v[2], 1, 0); });
}

TEST(OpsGrad, GroupNorm) {
  check_op({randn({4, 3, 3}, 16), randn({4}, 17), randn({4}, 18)},
           [](Tape<T>&, auto& v) { return ops::group_norm(v[0], v[1], v[2], 2); });
}

TEST(OpsGrad, Attention) {
  check_op({randn({4, 5}, 19), randn({4, 5}, 20), randn({4, 5}, 21)},
           [](Tape<T>&, auto& v) { return ops::attention(v[0], v[1], v[2]); });
}

TEST(OpsGrad, UpsampleConcatResize) {
  check_op({randn({2, 3, 3}, 22), randn({1, 6, 6}, 23)}, [](Tape<T>&, auto& v) {
    auto u = ops::concat_channels(ops::upsample_nearest2x(v[0]), v[1]);
    return ops::resize_bilinear(u, 8, 8);
  });
}

TEST(OpsGrad, Reductions) {
  const auto ref = randn({2, 3}, 24);
  const auto w = randn({2, 3}, 25);
  check_op({randn({2, 3}, 26)}, [&](Tape<T>&, auto& v) {
    return ops::add(ops::add(ops::l1_to_const(v[0], ref, true), ops::weighted_l1(v[0], ref, w)),
                    ops::mse_to_const(v[0], ref));
  });
}

TEST(OpsGrad, SamplePatch) {
  check_op({randn({2, 6, 6}, 27)}, [](Tape<T>&, auto& v) { return ops::sample_patch(v[0], Point2{2.3, 3.6}, 1); });
}

TEST(Ops, ResizeIdentityWhenSameSize) {
  Tape<T> tape;
  auto x = randn({2, 4, 4}, 28);
  EXPECT_EQ(ops::resize_bilinear(tape.leaf(x, false), 4, 4).value(), x);
}

TEST(Ops, ShapeErrors) {
  Tape<T> tape;
  auto a = tape.constant(randn({3, 4}, 1));
  auto b = tape.constant(randn({3, 4}, 2));
  EXPECT_THROW(ops::matmul(a, b), ShapeError);
  EXPECT_THROW(ops::add(a, tape.constant(randn({4, 3}, 3))), ShapeError);
}

TEST(Features, IntegerPointExact) {
  auto F = randn({3, 5, 5}, 30);
  auto p = sample_feature(F, Point2{2, 3}, 0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(p[c], F.at(c, 3, 2));
}

TEST(Features, ConstantFieldMidpoint) {
  Tensor<T> F({1, 4, 4}, 2.5);
  auto p = sample_feature(F, Point2{1.5, 2.5}, 1);
  for (double v : p.data) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Features, LinearRampReproducedExactly) {
  Tensor<T> F({1, 6, 6});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) F.at(0, y, x) = 2.0 * x - 3.0 * y + 1.0;
  auto p = sample_feature(F, Point2{1.25, 2.5}, 0);
  EXPECT_NEAR(p[0], 2.0 * 1.25 - 3.0 * 2.5 + 1.0, 1e-12);
  // Patch offsets keep the ramp exact away from the border.
  auto q = sample_feature(F, Point2{2.25, 2.5}, 1);
  int s = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx, ++s) EXPECT_NEAR(q[s], 2.0 * (2.25 + dx) - 3.0 * (2.5 + dy) + 1.0, 1e-12);
}

TEST(Features, ClampsOutsideGrid) {
  auto F = randn({1, 4, 4}, 31);
  auto p = sample_feature(F, Point2{-3.0, 10.0}, 0);
  EXPECT_EQ(p[0], F.at(0, 3, 0));
}

TEST(Features, PatchDistanceIsMeanAbs) {
  Tensor<T> a({4}, {1, 2, 3, 4});
  Tensor<T> b({4}, {1, 0, 3, 8});
  EXPECT_DOUBLE_EQ(patch_distance(a, b), 1.5);
}
