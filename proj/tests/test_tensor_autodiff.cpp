#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "lesdet/graph.hpp"
#include "lesdet/params.hpp"
#include "test_support.hpp"

using namespace lesdet;
using lesdet::testing::away_from_zero;
using lesdet::testing::fd_relative_error;
using lesdet::testing::random_tensor;

namespace {
constexpr double kFdTol = 1e-4;
constexpr int kInstances = 20;
}  // namespace

TEST_CASE("tensor rejects mismatched data length") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor t(Shape{2, 3});
  CHECK(t.size() == 6);
  CHECK(Tensor::scalar(2.5f).item() == 2.5f);
}

TEST_CASE("conv2d sums a ones kernel over a ones image") {
  Graph<double> g;
  Var x = g.leaf(Tensor64(Shape{1, 3, 3}, 1.0), false);
  Var w = g.leaf(Tensor64(Shape{1, 1, 3, 3}, 1.0), false);
  const auto& y = g.value(g.conv2d(x, w, 1, 0));
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == 9.0);
}

TEST_CASE("conv2d with a 1x1 unit kernel is the identity") {
  Rng rng = make_rng(1);
  Graph<double> g;
  const Tensor64 img = random_tensor({1, 5, 4}, rng);
  Var x = g.leaf(img, false);
  Var w = g.leaf(Tensor64(Shape{1, 1, 1, 1}, 1.0), false);
  CHECK(g.value(g.conv2d(x, w, 1, 0)) == img);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  Rng rng = make_rng(2);
  struct Case {
    std::size_t stride, pad;
  };
  for (Case c : {Case{1, 0}, Case{1, 1}, Case{2, 1}, Case{2, 0}}) {
    for (int rep = 0; rep < 5; ++rep) {
      const Tensor64 img = random_tensor({2, 4, 4}, rng);
      const Tensor64 ker = random_tensor({3, 2, 3, 3}, rng);
      Graph<double> g;
      const auto& got = g.value(g.conv2d(g.leaf(img, false), g.leaf(ker, false), c.stride, c.pad));
      const Tensor64 want = lesdet::testing::conv2d_oracle(img, ker, c.stride, c.pad);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-6);
    }
  }
}

TEST_CASE("batched conv2d equals per-sample conv2d") {
  Rng rng = make_rng(3);
  const Tensor64 batch = random_tensor({3, 2, 6, 6}, rng);
  const Tensor64 ker = random_tensor({4, 2, 3, 3}, rng);
  Graph<double> g;
  const auto& out = g.value(g.conv2d(g.leaf(batch, false), g.leaf(ker, false), 1, 1));
  for (std::size_t s = 0; s < 3; ++s) {
    Tensor64 one(Shape{2, 6, 6});
    std::copy_n(batch.data().begin() + s * 72, 72, one.data().begin());
    const Tensor64 want = lesdet::testing::conv2d_oracle(one, ker, 1, 1);
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(out[s * want.size() + i] - want[i]) < 1e-9);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch and oversized kernels") {
  Graph<double> g;
  Var x = g.leaf(Tensor64(Shape{2, 4, 4}), false);
  CHECK_THROWS_AS(g.conv2d(x, g.leaf(Tensor64(Shape{1, 3, 3, 3}), false), 1, 0), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.leaf(Tensor64(Shape{1, 2, 7, 7}), false), 1, 1), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.leaf(Tensor64(Shape{1, 2, 3, 3}), false), 0, 1),
                  InvalidArgument);
}

TEST_CASE("relu, maxpool and dense forward values") {
  Graph<double> g;
  const auto& r = g.value(g.relu(g.leaf(Tensor64(Shape{3}, {-1.0, 0.0, 2.0}), false)));
  CHECK(r.vec() == std::vector<double>{0.0, 0.0, 2.0});

  const auto& p = g.value(g.maxpool2d(g.leaf(Tensor64(Shape{1, 2, 2}, {1, 2, 3, 4}), false), 2));
  CHECK(p.shape() == Shape{1, 1, 1});
  CHECK(p[0] == 4.0);

  CHECK_THROWS_AS(g.maxpool2d(g.leaf(Tensor64(Shape{1, 3, 3}), false), 2), ShapeError);

  Var x = g.leaf(Tensor64(Shape{2}, {1.0, 2.0}), false);
  Var w = g.leaf(Tensor64(Shape{2, 2}, {1.0, 0.0, 1.0, 1.0}), false);
  Var b = g.leaf(Tensor64(Shape{2}, {0.5, -0.5}), false);
  CHECK(g.value(g.dense(x, w, b)).vec() == std::vector<double>{1.5, 2.5});
}

TEST_CASE("maxpool routes ties to the first occurrence") {
  Graph<double> g;
  Var x = g.leaf(Tensor64(Shape{1, 2, 2}, {3, 3, 3, 3}), true);
  g.backward(g.sum(g.maxpool2d(x, 2)));
  CHECK(g.grad(x).vec() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("relu adjoint passes gradient only where input is positive") {
  Graph<double> g;
  Var x = g.leaf(Tensor64(Shape{4}, {-1.0, 0.0, 0.5, 2.0}), true);
  g.backward(g.sum(g.relu(x)));
  CHECK(g.grad(x).vec() == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("softmax cross-entropy and mse values") {
  Graph<double> g;
  Var z = g.leaf(Tensor64(Shape{2}, {0.0, 0.0}), false);
  CHECK(g.value(g.softmax_xent(z, 0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Var a = g.leaf(Tensor64::scalar(0.5), false);
  CHECK(g.value(g.mse(a, 0.1)).item() == doctest::Approx(0.16).epsilon(1e-12));
  CHECK_THROWS_AS(g.softmax_xent(z, 2), InvalidArgument);
}

TEST_CASE("softmax cross-entropy gradient equals softmax minus one-hot") {
  Rng rng = make_rng(4);
  for (int rep = 0; rep < kInstances; ++rep) {
    const Tensor64 logits = random_tensor({5}, rng, -3.0, 3.0);
    const int label = rep % 5;
    Graph<double> g;
    Var z = g.leaf(logits, true);
    g.backward(g.softmax_xent(z, label));
    double denom = 0.0;
    for (double v : logits.data()) denom += std::exp(v);
    for (std::size_t j = 0; j < 5; ++j) {
      const double want = std::exp(logits[j]) / denom - (static_cast<int>(j) == label ? 1.0 : 0.0);
      CHECK(std::abs(g.grad(z)[j] - want) < 1e-6);
    }
  }
}

TEST_CASE("backward of sum gives ones and a graph can only be consumed once") {
  Rng rng = make_rng(5);
  Graph<double> g;
  Var x = g.leaf(random_tensor({2, 3}, rng), true);
  Var loss = g.sum(x);
  g.backward(loss);
  CHECK(g.grad(x).vec() == std::vector<double>(6, 1.0));
  CHECK_THROWS_AS(g.backward(loss), StateError);
}

TEST_CASE("backward rejects non-scalar losses") {
  Graph<double> g;
  Var x = g.leaf(Tensor64(Shape{3}), true);
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng = make_rng(6);
  const Tensor64 img = random_tensor({3, 8, 8}, rng);
  const Tensor64 ker = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Graph<double> g;
    Var y = g.conv2d(g.leaf(img, false), g.leaf(ker, false), 1, 1);
    return g.value(g.maxpool2d(g.relu(y), 2));
  };
  CHECK(run() == run());
}

// Every primitive against central finite differences.
TEST_CASE("gradient check: conv2d w.r.t. input, weight and bias") {
  Rng rng = make_rng(10);
  for (int rep = 0; rep < kInstances; ++rep) {
    const std::size_t stride = 1 + rep % 2;
    auto err = fd_relative_error(
        {random_tensor({2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng),
         random_tensor({3, stride == 1 ? 5u : 3u, stride == 1 ? 5u : 3u}, rng)},
        [stride](Graph<double>& g, const std::vector<Var>& v) {
          Var y = g.conv2d(v[0], v[1], stride, 1, v[2]);
          // weighted sum keeps the loss sensitive to every output entry
          Var prod = g.dense(g.flatten(y, 0), g.reshape(v[3], {1, g.value(v[3]).size()}));
          return g.sum(prod);
        });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: batched conv2d") {
  Rng rng = make_rng(11);
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error(
        {random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng)},
        [](Graph<double>& g, const std::vector<Var>& v) {
          return g.sum(g.scale(g.energy(g.conv2d(v[0], v[1], 1, 1), true), 3.0));
        });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: relu") {
  Rng rng = make_rng(12);
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error({away_from_zero({3, 4}, rng), random_tensor({3, 4}, rng)},
                                 [](Graph<double>& g, const std::vector<Var>& v) {
                                   Var r = g.flatten(g.relu(v[0]), 0);
                                   return g.sum(g.dense(r, g.reshape(v[1], {1, 12})));
                                 });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: maxpool2d") {
  Rng rng = make_rng(13);
  for (int rep = 0; rep < kInstances; ++rep) {
    // distinct values spaced well beyond the stencil width
    Tensor64 x(Shape{2, 4, 4});
    std::vector<double> vals(32);
    for (std::size_t i = 0; i < 32; ++i) vals[i] = 0.1 * static_cast<double>(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    x.vec() = vals;
    auto err = fd_relative_error({x, random_tensor({2, 2, 2}, rng)},
                                 [](Graph<double>& g, const std::vector<Var>& v) {
                                   Var p = g.flatten(g.maxpool2d(v[0], 2), 0);
                                   return g.sum(g.dense(p, g.reshape(v[1], {1, 8})));
                                 });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: dense 4->3 with bias") {
  Rng rng = make_rng(14);
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error(
        {random_tensor({4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)},
        [rep](Graph<double>& g, const std::vector<Var>& v) {
          return g.softmax_xent(g.dense(v[0], v[1], v[2]), rep % 3);
        });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: batched dense and batched softmax cross-entropy") {
  Rng rng = make_rng(15);
  const std::vector<int> labels{0, 2, 1};
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error(
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)},
        [&](Graph<double>& g, const std::vector<Var>& v) {
          return g.softmax_xent(g.dense(v[0], v[1], v[2]), labels);
        });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("gradient check: energy and mse") {
  Rng rng = make_rng(16);
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error({away_from_zero({2, 3, 3}, rng)},
                                 [](Graph<double>& g, const std::vector<Var>& v) {
                                   return g.mse(g.energy(v[0], false), 0.1);
                                 });
    CHECK(err < kFdTol);
    const std::vector<double> targets{0.1, 0.9};
    auto err_batch = fd_relative_error({away_from_zero({2, 2, 3, 3}, rng)},
                                       [&](Graph<double>& g, const std::vector<Var>& v) {
                                         return g.mse(g.energy(v[0], true), targets);
                                       });
    CHECK(err_batch < kFdTol);
  }
}

TEST_CASE("gradient check: composite mse(energy(conv2d(x, w)), 0)") {
  Rng rng = make_rng(17);
  for (int rep = 0; rep < kInstances; ++rep) {
    auto err = fd_relative_error({random_tensor({3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng)},
                                 [](Graph<double>& g, const std::vector<Var>& v) {
                                   return g.mse(g.energy(g.conv2d(v[0], v[1], 1, 1), false), 0.0);
                                 });
    CHECK(err < kFdTol);
  }
}

TEST_CASE("frozen parameters report gradients but sgd leaves them untouched") {
  ParamSet ps;
  ps.add("w", Tensor(Shape{2}, {1.0f, -2.0f}), true);
  ps.add("frozen", Tensor(Shape{2}, {3.0f, 4.0f}), false);
  Graph<float> g;
  Var w = g.leaf_ref(ps[0].value, true);
  Var f = g.leaf_ref(ps[1].value, true);
  g.backward(g.sum(g.dense(w, g.reshape(f, {1, 2}))));
  const std::vector<Tensor> grads{g.grad(w), g.grad(f)};
  CHECK(grads[1].vec() == std::vector<float>{1.0f, -2.0f});
  const Tensor before = ps[1].value;
  sgd_step(ps, grads, 0.1f);
  CHECK(ps[1].value == before);
  CHECK(ps[0].value[0] == doctest::Approx(1.0f - 0.1f * 3.0f));
}

TEST_CASE("sgd step arithmetic") {
  ParamSet ps;
  ps.add("p", Tensor::scalar(1.0f));
  const std::vector<Tensor> grads{Tensor::scalar(0.5f)};
  sgd_step(ps, grads, 0.0f);
  CHECK(ps[0].value.item() == 1.0f);
  sgd_step(ps, grads, 0.1f);
  CHECK(ps[0].value.item() == doctest::Approx(0.95f));
}

TEST_CASE("one sgd step on (w-3)^2 from w=0 with lr 0.1 gives 0.6") {
  ParamSet ps;
  ps.add("w", Tensor::scalar(0.0f));
  Graph<float> g;
  Var w = g.leaf_ref(ps[0].value, true);
  g.backward(g.mse(w, 3.0f));
  const std::vector<Tensor> grads{g.grad(w)};
  sgd_step(ps, grads, 0.1f);
  CHECK(ps[0].value.item() == doctest::Approx(0.6f));
}
