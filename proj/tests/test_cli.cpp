#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "smanet/checkpoint.hpp"
#include "smanet/common.hpp"
#include "smanet/dataset.hpp"
#include "smanet/model.hpp"
#include "smanet/runconfig.hpp"
#include "smanet/train.hpp"
#include "testutil.hpp"

using namespace smanet;

namespace {

struct CommandResult {
  int exit_code;
  std::string output;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SMANET_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string output;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) output += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

// small configuration so CLI runs stay fast
const char* kSmallCfg =
    "gen.num_eyes = 6\n"
    "gen.sequences_per_eye = 4\n"
    "gen.slices_per_sequence = 3\n"
    "gen.image_size = 16\n"
    "model.input_size = 16\n"
    "model.sequence_len = 3\n"
    "model.stage_channels = 4,4\n"
    "model.convlstm_hidden = 4\n"
    "model.we_conv_channels = 4\n"
    "train.epochs = 2\n"
    "train.batch_size = 2\n";

}  // namespace

TEST_CASE("gen-data: counts, determinism, seed override, and refusal") {
  testutil::TempDir tmp("cli_gen");
  write_file(tmp.path() / "cfg", kSmallCfg);
  const std::string cfg = (tmp.path() / "cfg").string();

  const CommandResult a =
      run_cli("gen-data --config " + cfg + " --out " + (tmp.path() / "d1").string());
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("generated 24 sequences") != std::string::npos);
  CHECK(a.output.find("class 0 (open): 8") != std::string::npos);
  CHECK(a.output.find("class 1 (narrow): 8") != std::string::npos);
  CHECK(a.output.find("class 2 (synechiae): 8") != std::string::npos);

  const CommandResult b =
      run_cli("gen-data --config " + cfg + " --out " + (tmp.path() / "d2").string());
  CHECK(b.exit_code == 0);
  CHECK(testutil::same_bytes(tmp.path() / "d1/manifest.csv", tmp.path() / "d2/manifest.csv"));
  CHECK(testutil::same_bytes(tmp.path() / "d1/seq/e000_s0000.smat",
                             tmp.path() / "d2/seq/e000_s0000.smat"));

  const CommandResult c = run_cli("gen-data --config " + cfg + " --seed 99 --out " +
                                  (tmp.path() / "d3").string());
  CHECK(c.exit_code == 0);
  CHECK(c.output.find("generated 24 sequences") != std::string::npos);
  CHECK_FALSE(testutil::same_bytes(tmp.path() / "d1/seq/e000_s0000.smat",
                                   tmp.path() / "d3/seq/e000_s0000.smat"));

  const CommandResult refused =
      run_cli("gen-data --config " + cfg + " --out " + (tmp.path() / "d1").string());
  CHECK(refused.exit_code == 1);
}

TEST_CASE("full train/eval/predict round trip through the binary") {
  testutil::TempDir tmp("cli_train");
  write_file(tmp.path() / "cfg", kSmallCfg);
  const std::string cfg = (tmp.path() / "cfg").string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + data).exit_code == 0);

  // two identical runs are byte-identical
  const CommandResult t1 =
      run_cli("train --config " + cfg + " --data " + data + " --out " + (tmp.path() / "r1").string());
  REQUIRE(t1.exit_code == 0);
  const CommandResult t2 =
      run_cli("train --config " + cfg + " --data " + data + " --out " + (tmp.path() / "r2").string());
  REQUIRE(t2.exit_code == 0);
  CHECK(testutil::same_bytes(tmp.path() / "r1/metrics.tsv", tmp.path() / "r2/metrics.tsv"));
  CHECK(testutil::same_bytes(tmp.path() / "r1/checkpoint_last.smck",
                             tmp.path() / "r2/checkpoint_last.smck"));
  CHECK(testutil::same_bytes(tmp.path() / "r1/checkpoint_best.smck",
                             tmp.path() / "r2/checkpoint_best.smck"));
  CHECK(testutil::same_bytes(tmp.path() / "r1/config_echo.cfg",
                             tmp.path() / "r2/config_echo.cfg"));

  // metrics log has exactly `epochs` lines
  std::string log = testutil::read_bytes(tmp.path() / "r1/metrics.tsv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);

  const std::string ckpt = (tmp.path() / "r1/checkpoint_best.smck").string();
  const CommandResult eval_test = run_cli("eval --checkpoint " + ckpt + " --data " + data);
  CHECK(eval_test.exit_code == 0);
  CHECK(eval_test.output.find("split test") != std::string::npos);
  CHECK(eval_test.output.find("kappa ") != std::string::npos);
  CHECK(std::filesystem::exists(tmp.path() / "r1/eval_test.txt"));

  const CommandResult eval_train =
      run_cli("eval --checkpoint " + ckpt + " --data " + data + " --split train");
  CHECK(eval_train.exit_code == 0);
  CHECK(eval_train.output.find("split train") != std::string::npos);

  const CommandResult pred = run_cli("predict --checkpoint " + ckpt + " --sequence " + data +
                                     "/seq/e000_s0000.smat");
  CHECK(pred.exit_code == 0);
  CHECK(pred.output.find("predicted ") != std::string::npos);
  CHECK(pred.output.find("final_probs") != std::string::npos);
}

TEST_CASE("train with zero epochs writes the initialized checkpoint") {
  testutil::TempDir tmp("cli_zero");
  write_file(tmp.path() / "cfg", std::string(kSmallCfg) + "train.epochs = 0\n");
  const std::string cfg = (tmp.path() / "cfg").string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + data).exit_code == 0);
  const CommandResult t =
      run_cli("train --config " + cfg + " --data " + data + " --out " + (tmp.path() / "run").string());
  CHECK(t.exit_code == 0);
  CHECK(std::filesystem::exists(tmp.path() / "run/checkpoint_last.smck"));
  CHECK(testutil::read_bytes(tmp.path() / "run/metrics.tsv").empty());
}

TEST_CASE("chance-level evaluation of untrained models on balanced data") {
  testutil::TempDir tmp("cli_chance");
  write_file(tmp.path() / "cfg", std::string(kSmallCfg) + "train.epochs = 0\n");
  const std::string cfg = (tmp.path() / "cfg").string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + data).exit_code == 0);
  std::vector<double> baccs;
  for (int seed : {1, 2, 3}) {
    const std::string run = (tmp.path() / ("run" + std::to_string(seed))).string();
    REQUIRE(run_cli("train --config " + cfg + " --data " + data + " --seed " +
                    std::to_string(seed) + " --out " + run)
                .exit_code == 0);
    const CommandResult e =
        run_cli("eval --checkpoint " + run + "/checkpoint_last.smck --data " + data);
    REQUIRE(e.exit_code == 0);
    const std::size_t pos = e.output.find("b_acc ");
    REQUIRE(pos != std::string::npos);
    baccs.push_back(std::stod(e.output.substr(pos + 6)));
  }
  std::sort(baccs.begin(), baccs.end());
  CHECK(std::abs(baccs[1] - 1.0 / 3.0) <= 0.10);  // median of three seeds
}

TEST_CASE("predict on a zero-parameter checkpoint prints uniform rows") {
  testutil::TempDir tmp("cli_zero_pred");
  write_file(tmp.path() / "cfg", kSmallCfg);
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + (tmp.path() / "cfg").string() + " --out " + data)
              .exit_code == 0);

  RunConfig cfg = RunConfig::parse_file(tmp.path() / "cfg");
  SmaNet model(cfg.model_config(), 1);
  model.visit_params([](const std::string&, Tensor& t, bool trainable) {
    if (trainable) {
      for (float& v : t.values()) v = 0.0f;
    }
  });
  save_checkpoint(tmp.path() / "zero.smck", model, nullptr, cfg.echo(), {});

  const CommandResult pred = run_cli("predict --checkpoint " + (tmp.path() / "zero.smck").string() +
                                     " --sequence " + data + "/seq/e001_s0004.smat");
  CHECK(pred.exit_code == 0);
  CHECK(pred.output.find("predicted open") != std::string::npos);
  CHECK(pred.output.find("0.333333 0.333333 0.333333") != std::string::npos);
}

TEST_CASE("predict output matches the evaluation path bit-exactly") {
  testutil::TempDir tmp("cli_consist");
  write_file(tmp.path() / "cfg", kSmallCfg);
  const std::string cfg = (tmp.path() / "cfg").string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + data).exit_code == 0);
  const std::string run = (tmp.path() / "run").string();
  REQUIRE(run_cli("train --config " + cfg + " --data " + data + " --out " + run).exit_code == 0);

  // library-side prediction for the same sequence
  const CheckpointHeader header = read_checkpoint_header(run + "/checkpoint_best.smck");
  RunConfig rc = RunConfig::parse_text(header.config_text);
  SmaNet model(rc.model_config(), 1);
  load_checkpoint(run + "/checkpoint_best.smck", model, nullptr);
  const Tensor slices = load_tensor_file(data + "/seq/e002_s0008.smat");
  const SlicePrediction p = model.predict(slices);

  const CommandResult pred = run_cli("predict --checkpoint " + run +
                                     "/checkpoint_best.smck --sequence " + data +
                                     "/seq/e002_s0008.smat");
  REQUIRE(pred.exit_code == 0);
  char expected[64];
  std::snprintf(expected, sizeof(expected), "final_probs %.6f %.6f %.6f",
                p.probs_final.value_at(0), p.probs_final.value_at(1),
                p.probs_final.value_at(2));
  CHECK(pred.output.find(expected) != std::string::npos);
}

TEST_CASE("gradcheck command passes and is stable across runs") {
  const CommandResult a = run_cli("gradcheck");
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("FAIL") == std::string::npos);
  CHECK(a.output.find("full_model") != std::string::npos);
  const CommandResult b = run_cli("gradcheck");
  CHECK(a.output == b.output);
}

TEST_CASE("exit codes: usage, io, and numerical failures") {
  testutil::TempDir tmp("cli_codes");
  CHECK(run_cli("--definitely-not-a-flag").exit_code == 1);
  CHECK(run_cli("train --data /nonexistent --out " + (tmp.path() / "r").string()).exit_code == 1);
  CHECK(run_cli("eval --checkpoint /nonexistent.smck --data /nonexistent").exit_code == 1);

  // a diverging configuration drives the loss non-finite -> exit 2
  write_file(tmp.path() / "cfg", std::string(kSmallCfg) + "train.learning_rate = 1e30\n");
  const std::string cfg = (tmp.path() / "cfg").string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + data).exit_code == 0);
  const CommandResult diverged =
      run_cli("train --config " + cfg + " --data " + data + " --out " + (tmp.path() / "boom").string());
  CHECK(diverged.exit_code == 2);
  CHECK(std::filesystem::exists(tmp.path() / "boom/checkpoint_abort.smck"));
}

TEST_CASE("config echo reparses to an identical configuration") {
  RunConfig cfg = RunConfig::parse_text(kSmallCfg);
  const std::string echo = cfg.echo();
  RunConfig back = RunConfig::parse_text(echo);
  CHECK(back.echo() == echo);
  CHECK_THROWS_AS(RunConfig::parse_text("no_such_key = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("train.epochs = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("not a key value line\n"), ConfigError);
  RunConfig with_comment = RunConfig::parse_text("# comment only\ntrain.epochs = 7 # trailing\n");
  CHECK(with_comment.get_int("train.epochs") == 7);
}
