#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <optional>

#include "smanet/common.hpp"
#include "smanet/ops.hpp"
#include "smanet/reference.hpp"
#include "smanet/rng.hpp"
#include "testutil.hpp"

using namespace smanet;
using doctest::Approx;

namespace {

Tensor ref_conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
                  const ops::ConvSpec& spec) {
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  std::vector<double> out;
  std::vector<double> bias_d;
  if (bias) bias_d = testutil::to_doubles(*bias);
  reference::conv2d(testutil::to_doubles(input), n, cin, h, w, testutil::to_doubles(weight),
                    cout, k, bias ? bias_d.data() : nullptr, spec, out);
  const int ho = ops::conv_out_extent(h, k, spec);
  const int wo = ops::conv_out_extent(w, k, spec);
  std::vector<float> out_f(out.begin(), out.end());
  return Tensor({n, cout, ho, wo}, std::move(out_f));
}

}  // namespace

TEST_CASE("conv2d: ones kernel counts the receptive field") {
  Tape tape;
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  ops::ConvSpec spec;
  spec.padding = 1;
  Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
  REQUIRE(y.dims() == std::vector<int>{1, 1, 3, 3});
  CHECK(y.value_at(4) == 9.0f);  // center
  CHECK(y.value_at(0) == 4.0f);  // corners
  CHECK(y.value_at(2) == 4.0f);
  CHECK(y.value_at(6) == 4.0f);
  CHECK(y.value_at(8) == 4.0f);
  CHECK(y.value_at(1) == 6.0f);  // edges
}

TEST_CASE("conv2d: identity kernel reproduces the input exactly") {
  Tape tape;
  Rng rng(2);
  Tensor x = Tensor::uniform({2, 3, 4, 5}, 1.0f, rng);
  Tensor w({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) {
    w.at(((static_cast<std::size_t>(c) * 3 + c) * 3 + 1) * 3 + 1) = 1.0f;
  }
  ops::ConvSpec spec;
  spec.padding = 1;
  Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
  CHECK(testutil::bitwise_equal(x, y));
}

TEST_CASE("conv2d: dilation 2 on the 5x5 ramp") {
  Tape tape;
  std::vector<float> vals(25);
  for (int i = 0; i < 25; ++i) vals[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Tensor x({1, 1, 5, 5}, std::move(vals));
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  ops::ConvSpec spec;
  spec.dilation = 2;
  Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
  REQUIRE(y.numel() == 1);
  CHECK(y.value_at(0) == 108.0f);  // corner/edge/center samples of the ramp
  CHECK(testutil::max_abs_diff(y, ref_conv2d(x, w, std::nullopt, spec)) < 1e-6);
}

TEST_CASE("conv2d rejects bad shapes and empty outputs") {
  Tape tape;
  Tensor x({1, 2, 4, 4});
  Tensor w({2, 2, 3, 3});
  ops::ConvSpec spec;
  spec.groups = 3;  // does not divide channels
  CHECK_THROWS_AS(ops::conv2d(tape, x, w, std::nullopt, spec), ShapeError);
  ops::ConvSpec empty_spec;
  empty_spec.dilation = 4;  // kernel extent 9 > 4
  CHECK_THROWS_AS(ops::conv2d(tape, x, w, std::nullopt, empty_spec), ConfigError);
  Tensor bad_bias({3});
  ops::ConvSpec ok;
  ok.padding = 1;
  CHECK_THROWS_AS(ops::conv2d(tape, x, w, bad_bias, ok), ShapeError);
}

TEST_CASE("conv1d: ones kernel on a ones signal") {
  Tape tape;
  Tensor x = Tensor::full({1, 1, 5}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3}, 1.0f);
  ops::ConvSpec spec;
  spec.padding = 1;
  Tensor y = ops::conv1d(tape, x, w, std::nullopt, spec);
  REQUIRE(y.dims() == std::vector<int>{1, 1, 5});
  const float expected[5] = {2, 3, 3, 3, 2};
  for (int i = 0; i < 5; ++i) CHECK(y.value_at(static_cast<std::size_t>(i)) == expected[i]);
}

TEST_CASE("conv1d: identity kernel and oracle agreement") {
  Tape tape;
  Rng rng(4);
  Tensor x = Tensor::uniform({1, 2, 7}, 1.0f, rng);
  {
    Tensor w({2, 2, 3});
    w.at((0 * 2 + 0) * 3 + 1) = 1.0f;
    w.at((1 * 2 + 1) * 3 + 1) = 1.0f;
    ops::ConvSpec spec;
    spec.padding = 1;
    Tensor y = ops::conv1d(tape, x, w, std::nullopt, spec);
    CHECK(testutil::bitwise_equal(x, y));
  }
  {
    Tensor w = Tensor::uniform({3, 2, 3}, 0.7f, rng);
    Tensor b = Tensor::uniform({3}, 0.5f, rng);
    ops::ConvSpec spec;
    spec.padding = 1;
    Tensor y = ops::conv1d(tape, x, w, b, spec);
    std::vector<double> expected;
    const std::vector<double> bias_d = testutil::to_doubles(b);
    reference::conv1d(testutil::to_doubles(x), 1, 2, 7, testutil::to_doubles(w), 3, 3,
                      bias_d.data(), spec, expected);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      CHECK(y.value_at(i) == Approx(expected[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("fully connected: identity, bias broadcast, and a hand case") {
  Tape tape;
  Rng rng(6);
  {
    Tensor x = Tensor::uniform({3, 4}, 1.0f, rng);
    Tensor w({4, 4});
    for (int i = 0; i < 4; ++i) w.at(static_cast<std::size_t>(i) * 4 + i) = 1.0f;
    Tensor b({4});
    Tensor y = ops::fully_connected(tape, x, w, b);
    CHECK(testutil::bitwise_equal(x, y));
  }
  {
    Tensor x = Tensor::uniform({3, 4}, 1.0f, rng);
    Tensor w({2, 4});
    Tensor b({2}, {0.25f, -1.5f});
    Tensor y = ops::fully_connected(tape, x, w, b);
    for (int r = 0; r < 3; ++r) {
      CHECK(y.value_at(static_cast<std::size_t>(r) * 2) == 0.25f);
      CHECK(y.value_at(static_cast<std::size_t>(r) * 2 + 1) == -1.5f);
    }
  }
  {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w({2, 3}, {1, 0, -1, 2, 1, 0});
    Tensor b({2}, {0.5f, -1.0f});
    Tensor y = ops::fully_connected(tape, x, w, b);
    CHECK(y.value_at(0) == Approx(-1.5));
    CHECK(y.value_at(1) == Approx(3.0));
    CHECK(y.value_at(2) == Approx(-1.5));
    CHECK(y.value_at(3) == Approx(12.0));
  }
  Tensor x({2, 3});
  Tensor w({2, 4});
  Tensor b({2});
  CHECK_THROWS_AS(ops::fully_connected(tape, x, w, b), ShapeError);
}

TEST_CASE("elementwise activations") {
  Tape tape;
  Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  Tensor r = ops::relu(tape, x);
  CHECK(r.value_at(0) == 0.0f);
  CHECK(r.value_at(1) == 0.0f);
  CHECK(r.value_at(2) == 2.0f);

  Tensor s = ops::sigmoid(tape, Tensor::scalar(0.0f));
  CHECK(s.value_at(0) == 0.5f);

  Tensor t = ops::tanh(tape, Tensor::scalar(0.5f));
  CHECK(t.value_at(0) == Approx(0.462117).epsilon(1e-6));

  Tensor a({2}, {1.0f, 2.0f});
  Tensor b({3}, {1.0f, 2.0f, 3.0f});
  CHECK_THROWS_AS(ops::add(tape, a, b), ShapeError);
  CHECK_THROWS_AS(ops::mul(tape, a, b), ShapeError);
}

TEST_CASE("batch norm: training statistics, gamma zero, eval formula") {
  Rng rng(8);
  ops::BatchNormState state{Tensor({3}), Tensor::full({3}, 1.0f)};
  Tensor gamma = Tensor::full({3}, 1.0f);
  Tensor beta({3});
  Tensor x = Tensor::uniform({4, 3, 5, 5}, 2.0f, rng);

  {
    Tape tape;
    Tensor y = ops::batch_norm(tape, x, gamma, beta, state, /*training=*/true);
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0, sum2 = 0.0;
      int count = 0;
      for (int n = 0; n < 4; ++n) {
        for (int i = 0; i < 25; ++i) {
          const double v = y.value_at((static_cast<std::size_t>(n) * 3 + c) * 25 +
                                      static_cast<std::size_t>(i));
          sum += v;
          sum2 += v * v;
          ++count;
        }
      }
      const double mean = sum / count;
      const double var = sum2 / count - mean * mean;
      CHECK(mean == Approx(0.0).epsilon(1e-5));
      CHECK(std::abs(var - 1.0) < 1e-2);  // epsilon shifts variance slightly below 1
    }
  }
  {
    Tape tape;
    Tensor zero_gamma({3});
    Tensor shift({3}, {0.5f, -0.25f, 2.0f});
    Tensor y = ops::batch_norm(tape, x, zero_gamma, shift, state, /*training=*/true);
    for (int n = 0; n < 4; ++n) {
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 25; ++i) {
          CHECK(y.value_at((static_cast<std::size_t>(n) * 3 + c) * 25 +
                           static_cast<std::size_t>(i)) == shift.value_at(static_cast<std::size_t>(c)));
        }
      }
    }
  }
  {
    Tape tape;
    ops::BatchNormState fixed{Tensor({1}, {0.3f}), Tensor({1}, {0.64f})};
    Tensor g({1}, {1.5f});
    Tensor bt({1}, {-0.2f});
    Tensor in({1, 1, 1, 2}, {1.0f, -0.5f});
    Tensor y = ops::batch_norm(tape, in, g, bt, fixed, /*training=*/false, 0.1f, 1e-5f);
    const double inv = 1.0 / std::sqrt(0.64 + 1e-5);
    CHECK(y.value_at(0) == Approx((1.0 - 0.3) * inv * 1.5 - 0.2).epsilon(1e-6));
    CHECK(y.value_at(1) == Approx((-0.5 - 0.3) * inv * 1.5 - 0.2).epsilon(1e-6));
  }
  {
    Tape tape;
    Tensor tiny({1, 3, 1, 1});
    CHECK_THROWS_AS(
        ops::batch_norm(tape, tiny, gamma, beta, state, /*training=*/true), ConfigError);
    CHECK_NOTHROW(ops::batch_norm(tape, tiny, gamma, beta, state, /*training=*/false));
  }
}

TEST_CASE("batch norm training updates running statistics") {
  Rng rng(9);
  ops::BatchNormState state{Tensor({2}), Tensor::full({2}, 1.0f)};
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta({2});
  Tensor x = Tensor::uniform({3, 2, 4, 4}, 1.0f, rng);
  Tape tape;
  ops::batch_norm(tape, x, gamma, beta, state, /*training=*/true, 0.1f);
  // running mean moved toward the batch mean by one momentum step
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int i = 0; i < 16; ++i) {
        sum += x.value_at((static_cast<std::size_t>(n) * 2 + c) * 16 +
                          static_cast<std::size_t>(i));
      }
    }
    const double batch_mean = sum / 48.0;
    CHECK(state.running_mean.value_at(static_cast<std::size_t>(c)) ==
          Approx(0.1 * batch_mean).epsilon(1e-5));
  }
}

TEST_CASE("global average pooling") {
  Tape tape;
  {
    Tensor x = Tensor::full({2, 3, 4, 4}, 0.75f);
    Tensor y = ops::global_avg_pool(tape, x);
    REQUIRE(y.dims() == std::vector<int>{2, 3});
    for (float v : y.values()) CHECK(v == 0.75f);
  }
  {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = ops::global_avg_pool(tape, x);
    CHECK(y.value_at(0) == 2.5f);
  }
  {
    Rng rng(10);
    Tensor x = Tensor::uniform({2, 4, 3, 5}, 1.0f, rng);
    Tensor y = ops::global_avg_pool(tape, x);
    for (int n = 0; n < 2; ++n) {
      for (int c = 0; c < 4; ++c) {
        double sum = 0.0;
        for (int i = 0; i < 15; ++i) {
          sum += x.value_at((static_cast<std::size_t>(n) * 4 + c) * 15 +
                            static_cast<std::size_t>(i));
        }
        CHECK(y.value_at(static_cast<std::size_t>(n) * 4 + c) ==
              Approx(sum / 15.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("softmax cross entropy examples") {
  Tape tape;
  {
    Tensor logits({1, 3});
    auto r = ops::softmax_cross_entropy(tape, logits, {0});
    CHECK(r.loss.value_at(0) == Approx(std::log(3.0)).epsilon(1e-6));
    for (float p : r.probs.values()) CHECK(p == Approx(1.0 / 3.0).epsilon(1e-6));
  }
  {
    Tensor logits({1, 3}, {10.0f, -10.0f, -10.0f});
    auto r = ops::softmax_cross_entropy(tape, logits, {0});
    CHECK(r.loss.value_at(0) < 1e-6);
  }
  {
    Tensor logits({1, 3}, {1.0f, 2.0f, 3.0f});
    auto r = ops::softmax_cross_entropy(tape, logits, {1});
    CHECK(r.loss.value_at(0) == Approx(1.407606).epsilon(1e-6));
  }
  {
    Tensor logits({2, 3});
    CHECK_THROWS_AS(ops::cross_entropy_with_logits(tape, logits, {0, 3}), ConfigError);
    CHECK_THROWS_AS(ops::cross_entropy_with_logits(tape, logits, {0, -1}), ConfigError);
    CHECK_THROWS_AS(ops::cross_entropy_with_logits(tape, logits, {0}), ShapeError);
  }
}

TEST_CASE("softmax rows form a probability distribution") {
  Rng rng(12);
  Tape tape;
  Tensor logits = Tensor::uniform({50, 4}, 8.0f, rng);
  Tensor p = ops::softmax(tape, logits);
  for (int r = 0; r < 50; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 4; ++j) {
      const float v = p.value_at(static_cast<std::size_t>(r) * 4 + j);
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
      sum += v;
    }
    CHECK(sum == Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("backward: sum, square, fan-out, and misuse") {
  Rng rng(14);
  {
    Tape tape;
    Tensor x = Tensor::uniform({3, 4}, 1.0f, rng);
    x.set_requires_grad(true);
    Tensor s = ops::sum_all(tape, x);
    tape.backward(s);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  {
    Tape tape;
    Tensor x = Tensor::uniform({5}, 1.0f, rng);
    x.set_requires_grad(true);
    Tensor s = ops::sum_all(tape, ops::mul(tape, x, x));
    tape.backward(s);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(x.grad()[i] == Approx(2.0f * x.value_at(i)).epsilon(1e-6));
    }
  }
  {
    Tape tape;
    Tensor x = Tensor::scalar(0.7f);
    x.set_requires_grad(true);
    Tensor s = ops::add(tape, x, x);
    tape.backward(s);
    CHECK(x.grad()[0] == 2.0f);  // fan-out sums exactly
  }
  {
    Tape tape;
    Tensor x = Tensor::uniform({2, 2}, 1.0f, rng);
    x.set_requires_grad(true);
    Tensor y = ops::relu(tape, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);  // non-scalar root
    Tensor s = ops::sum_all(tape, y);
    tape.backward(s);
    CHECK_THROWS(tape.backward(s));  // second call without reset
  }
  {
    Tape tape;
    Tensor leaf = Tensor::scalar(1.0f);
    leaf.set_requires_grad(true);
    CHECK_THROWS(tape.backward(leaf));  // not produced by this tape
  }
}

TEST_CASE("depthwise conv equals the block-diagonal dense expansion") {
  Rng rng(16);
  Tape tape;
  const int c = 4;
  Tensor x = Tensor::uniform({2, c, 6, 6}, 1.0f, rng);
  Tensor w_depthwise = Tensor::uniform({c, 1, 3, 3}, 1.0f, rng);
  Tensor w_dense({c, c, 3, 3});
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < 9; ++i) {
      w_dense.at(((static_cast<std::size_t>(ch) * c + ch) * 9) + static_cast<std::size_t>(i)) =
          w_depthwise.value_at(static_cast<std::size_t>(ch) * 9 + static_cast<std::size_t>(i));
    }
  }
  ops::ConvSpec spec_dw;
  spec_dw.padding = 2;
  spec_dw.dilation = 2;
  spec_dw.groups = c;
  ops::ConvSpec spec_dense = spec_dw;
  spec_dense.groups = 1;
  Tensor y_dw = ops::conv2d(tape, x, w_depthwise, std::nullopt, spec_dw);
  Tensor y_dense = ops::conv2d(tape, x, w_dense, std::nullopt, spec_dense);
  CHECK(testutil::max_abs_diff(y_dw, y_dense) < 1e-6);
}

TEST_CASE("conv2d agrees with the naive reference on a parameter grid") {
  Rng rng(18);
  for (int stride : {1, 2}) {
    for (int padding : {0, 1, 2}) {
      ops::ConvSpec spec;
      spec.stride = stride;
      spec.padding = padding;
      if (ops::conv_out_extent(7, 3, spec) < 1) continue;
      Tape tape;
      Tensor x = Tensor::uniform({2, 3, 7, 6}, 1.0f, rng);
      Tensor w = Tensor::uniform({4, 3, 3, 3}, 0.7f, rng);
      Tensor b = Tensor::uniform({4}, 0.5f, rng);
      Tensor y = ops::conv2d(tape, x, w, b, spec);
      CHECK(testutil::max_abs_diff(y, ref_conv2d(x, w, b, spec)) < 1e-6);
    }
  }
}

TEST_CASE("identical seeds give bit-identical outputs and gradients") {
  auto run = [](std::vector<float>* grads) {
    Rng rng(77);
    Tape tape;
    Tensor x = Tensor::uniform({2, 3, 6, 6}, 1.0f, rng);
    x.set_requires_grad(true);
    Tensor w = Tensor::uniform({4, 3, 3, 3}, 0.5f, rng);
    w.set_requires_grad(true);
    ops::ConvSpec spec;
    spec.padding = 1;
    Tensor y = ops::relu(tape, ops::conv2d(tape, x, w, std::nullopt, spec));
    Tensor s = ops::sum_all(tape, ops::mul(tape, y, y));
    tape.backward(s);
    std::vector<float> out(y.values().begin(), y.values().end());
    grads->assign(x.grad().begin(), x.grad().end());
    grads->insert(grads->end(), w.grad().begin(), w.grad().end());
    return out;
  };
  std::vector<float> g1, g2;
  const std::vector<float> y1 = run(&g1);
  const std::vector<float> y2 = run(&g2);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
}
