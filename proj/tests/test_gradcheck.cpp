#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <optional>

#include "smanet/common.hpp"
#include "smanet/gradcheck.hpp"
#include "smanet/ops.hpp"
#include "smanet/rng.hpp"

using namespace smanet;

namespace {

Tensor offset_from_kink(std::vector<int> dims, Rng& rng) {
  Tensor t(std::move(dims));
  for (float& v : t.values()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("fully connected layer passes the finite-difference check") {
  Rng rng(21);
  Tensor x = Tensor::uniform({3, 5}, 1.0f, rng);
  x.set_requires_grad(true);
  Tensor w = Tensor::uniform({4, 5}, 0.6f, rng);
  w.set_requires_grad(true);
  Tensor b = Tensor::uniform({4}, 0.6f, rng);
  b.set_requires_grad(true);
  const double err = grad_check(
      [](Tape& tape, const std::vector<Tensor>& in) {
        Tensor y = ops::fully_connected(tape, in[0], in[1], in[2]);
        return ops::sum_all(tape, ops::mul(tape, y, y));
      },
      {x, w, b});
  CHECK(err < 1e-4);
}

TEST_CASE("dilated conv2d passes the finite-difference check") {
  Rng rng(22);
  Tensor x = Tensor::uniform({1, 2, 6, 6}, 1.0f, rng);
  x.set_requires_grad(true);
  Tensor w = Tensor::uniform({3, 2, 3, 3}, 0.5f, rng);
  w.set_requires_grad(true);
  const double err = grad_check(
      [](Tape& tape, const std::vector<Tensor>& in) {
        ops::ConvSpec spec;
        spec.dilation = 2;
        spec.padding = 2;
        Tensor y = ops::conv2d(tape, in[0], in[1], std::nullopt, spec);
        return ops::sum_all(tape, ops::mul(tape, y, y));
      },
      {x, w});
  CHECK(err < 1e-4);
}

TEST_CASE("relu away from the kink passes the finite-difference check") {
  Rng rng(23);
  Tensor x = offset_from_kink({4, 6}, rng);
  const double err = grad_check(
      [](Tape& tape, const std::vector<Tensor>& in) {
        Tensor y = ops::relu(tape, in[0]);
        return ops::sum_all(tape, ops::mul(tape, y, y));
      },
      {x});
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check rejects oversized and non-scalar programs") {
  Rng rng(24);
  Tensor big = Tensor::uniform({101, 101}, 1.0f, rng);
  big.set_requires_grad(true);
  const TensorProgram sum_prog = [](Tape& tape, const std::vector<Tensor>& in) {
    return ops::sum_all(tape, in[0]);
  };
  CHECK_THROWS_AS(grad_check(sum_prog, {big}), ConfigError);

  Tensor x = Tensor::uniform({2, 2}, 1.0f, rng);
  x.set_requires_grad(true);
  const TensorProgram vector_prog = [](Tape& tape, const std::vector<Tensor>& in) {
    return ops::relu(tape, in[0]);
  };
  CHECK_THROWS_AS(grad_check(vector_prog, {x}), ShapeError);

  Tensor no_grad = Tensor::uniform({2, 2}, 1.0f, rng);
  CHECK_THROWS_AS(grad_check(sum_prog, {no_grad}), ConfigError);
}

TEST_CASE("the standard suite passes every row") {
  const auto rows = gradcheck::standard_suite().run();
  CHECK(rows.size() >= 20);
  for (const auto& row : rows) {
    INFO(row.name, " -> ", row.max_rel_err);
    CHECK(row.pass);
    CHECK(row.max_rel_err < 1e-4);
  }
}

TEST_CASE("a sign-flipped backward rule is caught") {
  gradcheck::Suite suite;
  suite.add("sabotaged_relu", [](std::uint64_t seed) {
    Rng rng(seed);
    gradcheck::CheckCase c;
    c.inputs = {offset_from_kink({3, 5}, rng)};
    c.program = [](Tape& tape, const std::vector<Tensor>& in) {
      const Tensor& x = in[0];
      Tensor out(x.dims());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        out.at(i) = x.value_at(i) > 0.0f ? x.value_at(i) : 0.0f;
      }
      out.set_requires_grad(true);
      tape.record({"bad_relu",
                   {x},
                   out,
                   [x, out]() {
                     const float* go = out.raw()->grad.data();
                     float* g = x.raw()->grad.data();
                     for (std::size_t i = 0; i < x.numel(); ++i) {
                       if (x.value_at(i) > 0.0f) g[i] -= go[i];  // wrong sign
                     }
                   },
                   [x, out](ReplayValues& vals) {
                     const auto& xv = vals.at(x);
                     auto& ov = vals.slot(out);
                     ov.resize(xv.size());
                     for (std::size_t i = 0; i < xv.size(); ++i) {
                       ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
                     }
                   }});
      return ops::sum_all(tape, ops::mul(tape, out, out));
    };
    return c;
  });
  suite.add("honest_relu", [](std::uint64_t seed) {
    Rng rng(seed);
    gradcheck::CheckCase c;
    c.inputs = {offset_from_kink({3, 5}, rng)};
    c.program = [](Tape& tape, const std::vector<Tensor>& in) {
      Tensor y = ops::relu(tape, in[0]);
      return ops::sum_all(tape, ops::mul(tape, y, y));
    };
    return c;
  });
  const auto rows = suite.run();
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].pass);
  CHECK(rows[0].max_rel_err > 0.1);
  CHECK(rows[1].pass);
}

TEST_CASE("suite output is stable across runs") {
  const auto a = gradcheck::standard_suite().run();
  const auto b = gradcheck::standard_suite().run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].max_rel_err == b[i].max_rel_err);
    CHECK(a[i].pass == b[i].pass);
  }
}
