#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "smanet/checkpoint.hpp"
#include "smanet/common.hpp"
#include "smanet/dataset.hpp"
#include "smanet/metrics.hpp"
#include "smanet/model.hpp"
#include "smanet/optim.hpp"
#include "smanet/rng.hpp"
#include "smanet/train.hpp"
#include "testutil.hpp"

using namespace smanet;
using doctest::Approx;

namespace {

GeneratorConfig small_gen(std::uint64_t seed = 42) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.num_eyes = 6;
  cfg.sequences_per_eye = 4;
  return cfg;
}

DatasetManifest synthetic_manifest(int eyes, int per_eye) {
  DatasetManifest m;
  for (int e = 0; e < eyes; ++e) {
    for (int s = 0; s < per_eye; ++s) {
      m.entries.push_back({"seq/none.smat", (e + s) % 3, e});
    }
  }
  return m;
}

ModelConfig micro_model() {
  ModelConfig mc;
  mc.input_size = 8;
  mc.stage_channels = {2, 2};
  mc.sequence_len = 3;
  mc.se_reduction = 2;
  mc.convlstm_hidden = 2;
  mc.we_conv_channels = 2;
  return mc;
}

GeneratorConfig micro_gen(std::uint64_t seed) {
  GeneratorConfig g;
  g.seed = seed;
  g.num_eyes = 4;
  g.sequences_per_eye = 3;
  g.slices_per_sequence = 3;
  g.image_size = 8;
  g.image_size = 16;  // renderer minimum
  return g;
}

}  // namespace

TEST_CASE("generator determinism: identical seeds produce identical bytes") {
  testutil::TempDir a("gen_a"), b("gen_b");
  const GeneratorConfig cfg = small_gen();
  const DatasetManifest ma = generate_synthetic(cfg, a.path());
  const DatasetManifest mb = generate_synthetic(cfg, b.path());
  REQUIRE(ma.entries.size() == mb.entries.size());
  CHECK(testutil::same_bytes(a.path() / "manifest.csv", b.path() / "manifest.csv"));
  for (const ManifestEntry& e : ma.entries) {
    CHECK(testutil::same_bytes(a.path() / e.path, b.path() / e.path));
  }

  testutil::TempDir c("gen_c");
  const DatasetManifest mc = generate_synthetic(small_gen(43), c.path());
  CHECK(mc.class_counts(3) == ma.class_counts(3));  // counts stable across seeds
  bool any_diff = false;
  for (std::size_t i = 0; i < ma.entries.size(); ++i) {
    any_diff = any_diff || !testutil::same_bytes(a.path() / ma.entries[i].path,
                                                 c.path() / mc.entries[i].path);
  }
  CHECK(any_diff);
}

TEST_CASE("class counts realize exact proportions") {
  {
    testutil::TempDir tmp("gen_counts");
    GeneratorConfig cfg = small_gen();
    cfg.num_eyes = 5;
    cfg.sequences_per_eye = 6;  // 30 sequences, balanced
    const DatasetManifest m = generate_synthetic(cfg, tmp.path());
    CHECK(m.class_counts(3) == std::vector<int>{10, 10, 10});
  }
  {
    testutil::TempDir tmp("gen_weighted");
    GeneratorConfig cfg = small_gen();
    cfg.num_eyes = 4;
    cfg.sequences_per_eye = 6;  // 24 sequences
    cfg.class_weights = {2.0, 1.0, 1.0};
    const DatasetManifest m = generate_synthetic(cfg, tmp.path());
    CHECK(m.class_counts(3) == std::vector<int>{12, 6, 6});
  }
}

TEST_CASE("generator validation rejects overlapping aperture ranges") {
  GeneratorConfig cfg = small_gen();
  cfg.narrow_range = {5.0, 60.0};  // overlaps both neighbours
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_gen();
  cfg.class_weights = {1.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_gen();
  cfg.noise_sigma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("rendered apertures are recovered within three degrees") {
  for (double aperture : {0.0, 5.0, 12.0, 20.0, 30.0, 45.0, 60.0, 75.0, 80.0}) {
    for (double angle : {0.0, 37.0, 123.0, 270.0}) {
      const Tensor slice = render_wedge_slice(32, angle, aperture, aperture < 10.0);
      const double measured = measure_aperture_deg(slice, 0);
      INFO("aperture ", aperture, " angle ", angle, " measured ", measured);
      CHECK(std::abs(measured - aperture) <= 3.0);
    }
  }
}

TEST_CASE("threshold classifier separates the default classes") {
  testutil::TempDir tmp("gen_sep");
  GeneratorConfig cfg;  // defaults: 20 eyes x 24, noise 0.05
  const DatasetManifest manifest = generate_synthetic(cfg, tmp.path());
  const std::vector<SequenceSample> samples = load_sequences(tmp.path(), manifest);
  ConfusionMatrix cm(3);
  for (const SequenceSample& s : samples) {
    cm.add(s.label, aperture_threshold_classify(s, 3));
  }
  CHECK(balanced_accuracy(cm) >= 0.95);
}

TEST_CASE("eye dominance makes sequences within an eye correlated") {
  testutil::TempDir tmp("gen_dom");
  GeneratorConfig cfg;
  cfg.num_eyes = 12;
  cfg.sequences_per_eye = 12;
  const DatasetManifest manifest = generate_synthetic(cfg, tmp.path());
  int dominant_hits = 0, total = 0;
  for (int eye = 0; eye < cfg.num_eyes; ++eye) {
    std::vector<int> counts(3, 0);
    for (const ManifestEntry& e : manifest.entries) {
      if (e.eye_id == eye) ++counts[static_cast<std::size_t>(e.label)];
    }
    dominant_hits += *std::max_element(counts.begin(), counts.end());
    total += cfg.sequences_per_eye;
  }
  // a uniform assignment would concentrate ~1/3 per eye
  CHECK(static_cast<double>(dominant_hits) / total > 0.45);
}

TEST_CASE("grouped split keeps every eye on one side") {
  {
    const DatasetManifest m = synthetic_manifest(2, 3);
    const auto [train, test] = split_grouped(m, 0.5, 1);
    CHECK(train.entries.size() == 3);
    CHECK(test.entries.size() == 3);
  }
  {
    const DatasetManifest m = synthetic_manifest(9, 4);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto [train, test] = split_grouped(m, 0.4, seed);
      std::set<int> train_eyes, test_eyes;
      for (const auto& e : train.entries) train_eyes.insert(e.eye_id);
      for (const auto& e : test.entries) test_eyes.insert(e.eye_id);
      for (int eye : test_eyes) CHECK(train_eyes.count(eye) == 0);
      CHECK(train_eyes.size() + test_eyes.size() == 9);
    }
  }
  {
    const DatasetManifest m = synthetic_manifest(66, 2);
    const auto [train, test] = split_grouped(m, 0.5, 3);
    std::set<int> test_eyes;
    for (const auto& e : test.entries) test_eyes.insert(e.eye_id);
    CHECK(test_eyes.size() == 33);
  }
  const DatasetManifest m = synthetic_manifest(4, 2);
  CHECK_THROWS_AS(split_grouped(m, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_grouped(m, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split_grouped(synthetic_manifest(1, 4), 0.5, 1), ConfigError);
}

TEST_CASE("manifest round-trip and validation") {
  testutil::TempDir tmp("manifest");
  DatasetManifest m;
  m.entries.push_back({"seq/a.smat", 0, 3});
  m.entries.push_back({"seq/b.smat", 2, 5});
  save_manifest(tmp.path(), m);
  const DatasetManifest back = load_manifest(tmp.path());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].path == "seq/a.smat");
  CHECK(back.entries[1].label == 2);
  CHECK(back.entries[1].eye_id == 5);

  std::ofstream bad(tmp.path() / "manifest.csv", std::ios::binary);
  bad << "wrong,header,here\n";
  bad.close();
  CHECK_THROWS_AS(load_manifest(tmp.path()), IoError);
  CHECK_THROWS_AS(load_manifest(tmp.path() / "missing"), IoError);
}

TEST_CASE("sequence loading validates pixel range and shape") {
  testutil::TempDir tmp("load");
  std::filesystem::create_directories(tmp.path() / "seq");
  DatasetManifest m;
  m.entries.push_back({"seq/ok.smat", 0, 0});
  save_tensor_file(tmp.path() / "seq/ok.smat", Tensor::full({2, 1, 16, 16}, 0.5f));
  const auto samples = load_sequences(tmp.path(), m);
  CHECK(samples.size() == 1);
  CHECK(samples[0].sequence_id == 0);

  save_tensor_file(tmp.path() / "seq/ok.smat", Tensor::full({2, 1, 16, 16}, 1.5f));
  CHECK_THROWS_AS(load_sequences(tmp.path(), m), IoError);
  save_tensor_file(tmp.path() / "seq/ok.smat", Tensor::full({2, 16, 16}, 0.5f));
  CHECK_THROWS_AS(load_sequences(tmp.path(), m), IoError);
}

TEST_CASE("SMCK save-load-save produces identical bytes") {
  testutil::TempDir tmp("smck");
  SmaNet model(micro_model(), 3);
  Adam adam;
  // take one optimizer step so the slots are non-trivial
  std::vector<ParamRef> params;
  model.visit_params([&params](const std::string& name, Tensor& t, bool trainable) {
    if (trainable) params.push_back({name, t});
  });
  Rng rng(5);
  for (const ParamRef& p : params) {
    Tensor t = p.tensor;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.grad()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
  }
  adam.step(params, 1e-3f);

  const std::string config_text = "model.input_size=8\n";
  save_checkpoint(tmp.path() / "a.smck", model, &adam, config_text, {4, 0.75});

  SmaNet restored(micro_model(), 99);
  Adam adam2;
  const CheckpointHeader header = load_checkpoint(tmp.path() / "a.smck", restored, &adam2);
  CHECK(header.config_text == config_text);
  CHECK(header.meta.epochs_done == 4);
  CHECK(header.meta.best_val == Approx(0.75));
  CHECK(adam2.step_count() == adam.step_count());

  save_checkpoint(tmp.path() / "b.smck", restored, &adam2, header.config_text, header.meta);
  CHECK(testutil::same_bytes(tmp.path() / "a.smck", tmp.path() / "b.smck"));
}

TEST_CASE("loading into a differently configured model names the first mismatch") {
  testutil::TempDir tmp("smck_mismatch");
  SmaNet model(micro_model(), 3);
  save_checkpoint(tmp.path() / "m.smck", model, nullptr, "x=1\n", {});

  ModelConfig other = micro_model();
  other.stage_channels = {4, 4};
  other.se_reduction = 2;
  SmaNet wrong(other, 3);
  try {
    load_checkpoint(tmp.path() / "m.smck", wrong, nullptr);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("stem.conv.weight") != std::string::npos);
  }

  // extra tensors in the file are rejected by name
  NamedTensors raw = load_smck(tmp.path() / "m.smck");
  raw.items.emplace_back("rogue.weight", Tensor::scalar(1.0f));
  save_smck(tmp.path() / "extra.smck", raw);
  SmaNet same(micro_model(), 3);
  try {
    load_checkpoint(tmp.path() / "extra.smck", same, nullptr);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("rogue.weight") != std::string::npos);
  }
}

TEST_CASE("SMCK rejects corrupted containers") {
  testutil::TempDir tmp("smck_bad");
  NamedTensors tensors;
  tensors.items.emplace_back("a", Tensor::scalar(1.0f));
  save_smck(tmp.path() / "ok.smck", tensors);
  std::string bytes = testutil::read_bytes(tmp.path() / "ok.smck");
  {
    std::ofstream os(tmp.path() / "magic.smck", std::ios::binary);
    std::string bad = bytes;
    bad[0] = 'X';
    os << bad;
  }
  CHECK_THROWS_AS(load_smck(tmp.path() / "magic.smck"), IoError);
  {
    std::ofstream os(tmp.path() / "trunc.smck", std::ios::binary);
    os << bytes.substr(0, bytes.size() - 2);
  }
  CHECK_THROWS_AS(load_smck(tmp.path() / "trunc.smck"), IoError);
}

TEST_CASE("resuming mid-training matches uninterrupted training bit-exactly") {
  testutil::TempDir tmp("resume");
  const GeneratorConfig gen = micro_gen(77);
  ModelConfig mc = micro_model();
  mc.input_size = gen.image_size;
  const DatasetManifest manifest = generate_synthetic(gen, tmp.path());
  const auto [train_m, test_m] = split_grouped(manifest, 0.5, 7);
  const auto train_set = load_sequences(tmp.path(), train_m);
  const auto val_set = load_sequences(tmp.path(), test_m);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;

  // uninterrupted
  SmaNet model_a(mc, 11);
  Adam adam_a(cfg.adam_config());
  train_loop(model_a, adam_a, train_set, val_set, cfg);
  save_checkpoint(tmp.path() / "full.smck", model_a, &adam_a, "cfg\n", {3, 0.0});

  // two epochs, checkpoint, resume for the third
  SmaNet model_b(mc, 11);
  Adam adam_b(cfg.adam_config());
  TrainConfig first_leg = cfg;
  first_leg.epochs = 2;
  train_loop(model_b, adam_b, train_set, val_set, first_leg);
  save_checkpoint(tmp.path() / "mid.smck", model_b, &adam_b, "cfg\n", {2, 0.0});

  SmaNet model_c(mc, 999);  // parameters come from the checkpoint
  Adam adam_c(cfg.adam_config());
  load_checkpoint(tmp.path() / "mid.smck", model_c, &adam_c);
  train_loop(model_c, adam_c, train_set, val_set, cfg, /*start_epoch=*/2);
  save_checkpoint(tmp.path() / "resumed.smck", model_c, &adam_c, "cfg\n", {3, 0.0});

  CHECK(testutil::same_bytes(tmp.path() / "full.smck", tmp.path() / "resumed.smck"));
}
