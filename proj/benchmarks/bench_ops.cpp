#include <benchmark/benchmark.h>

#include <optional>

#include "smanet/loss.hpp"
#include "smanet/model.hpp"
#include "smanet/optim.hpp"
#include "smanet/ops.hpp"
#include "smanet/rng.hpp"

using namespace smanet;

namespace {

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  Tensor x = Tensor::uniform({5, 16, 16, 16}, 1.0f, rng);
  Tensor w = Tensor::uniform({16, 16, 3, 3}, 0.5f, rng);
  ops::ConvSpec spec;
  spec.padding = 1;
  for (auto _ : state) {
    Tape tape;
    Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_Conv2dForward);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  Tensor x = Tensor::uniform({5, 16, 16, 16}, 1.0f, rng);
  x.set_requires_grad(true);
  Tensor w = Tensor::uniform({16, 16, 3, 3}, 0.5f, rng);
  w.set_requires_grad(true);
  ops::ConvSpec spec;
  spec.padding = 1;
  for (auto _ : state) {
    Tape tape;
    Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
    Tensor root = ops::sum_all(tape, y);
    tape.backward(root);
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_DepthwiseDilatedConv(benchmark::State& state) {
  Rng rng(3);
  Tensor x = Tensor::uniform({5, 32, 8, 8}, 1.0f, rng);
  Tensor w = Tensor::uniform({32, 1, 3, 3}, 0.5f, rng);
  ops::ConvSpec spec;
  spec.padding = 2;
  spec.dilation = 2;
  spec.groups = 32;
  for (auto _ : state) {
    Tape tape;
    Tensor y = ops::conv2d(tape, x, w, std::nullopt, spec);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_DepthwiseDilatedConv);

void BM_MsdaBlockForward(benchmark::State& state) {
  Rng rng(4);
  MsdaBlock block = MsdaBlock::create({16, 32, 4}, rng);
  Tensor x = Tensor::uniform({5, 16, 8, 8}, 1.0f, rng);
  for (auto _ : state) {
    Tape tape;
    Tensor y = block.forward(tape, x, /*training=*/true);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_MsdaBlockForward);

void BM_ConvLstmStep(benchmark::State& state) {
  Rng rng(5);
  ConvLstmCell cell = ConvLstmCell::create(64, 32, 3, rng);
  Tensor x = Tensor::uniform({4, 64, 2, 2}, 1.0f, rng);
  ConvLstmState s = cell.zero_state(4, 2, 2);
  for (auto _ : state) {
    Tape tape;
    ConvLstmState next = cell.step(tape, x, s);
    benchmark::DoNotOptimize(next.hidden.values().data());
  }
}
BENCHMARK(BM_ConvLstmStep);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig mc;
  SmaNet model(mc, 7);
  Rng rng(6);
  Tensor x = Tensor::uniform({5, 1, 32, 32}, 0.5f, rng);
  for (auto _ : state) {
    Tape tape;
    auto fwd = model.forward(tape, x, /*training=*/false);
    benchmark::DoNotOptimize(fwd.probs_final.values().data());
  }
}
BENCHMARK(BM_ModelForward);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig mc;
  SmaNet model(mc, 8);
  Adam adam;
  std::vector<ParamRef> params;
  model.visit_params([&params](const std::string& name, Tensor& t, bool trainable) {
    if (trainable) params.push_back({name, t});
  });
  Rng rng(9);
  Tensor stacked = Tensor::uniform({20, 1, 32, 32}, 0.5f, rng);
  for (auto _ : state) {
    Tape tape;
    auto fwd = model.forward_batch(tape, stacked, 4, /*training=*/true);
    Tensor total;
    for (int b = 0; b < 4; ++b) {
      Tensor l2d = loss_2d(tape, fwd[static_cast<std::size_t>(b)].slice_logits, b % 3);
      Tensor l3d = loss_3d(tape, fwd[static_cast<std::size_t>(b)].seq_logits,
                           fwd[static_cast<std::size_t>(b)].final_logits, b % 3);
      Tensor lsv = loss_sv(tape, l2d, l3d, 1.0f);
      total = total.defined() ? ops::add(tape, total, lsv) : lsv;
    }
    Tensor scaled = ops::mul_scalar(tape, total, 0.25f);
    tape.backward(scaled);
    adam.step(params, 1e-4f);
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
