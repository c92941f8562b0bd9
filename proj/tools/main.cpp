#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "smanet/checkpoint.hpp"
#include "smanet/common.hpp"
#include "smanet/dataset.hpp"
#include "smanet/gradcheck.hpp"
#include "smanet/metrics.hpp"
#include "smanet/model.hpp"
#include "smanet/runconfig.hpp"
#include "smanet/train.hpp"

namespace fs = std::filesystem;
using namespace smanet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig::defaults() : RunConfig::parse_file(path);
}

std::string class_name(int label, int num_classes) {
  if (num_classes == 3) {
    switch (label) {
      case 0:
        return "open";
      case 1:
        return "narrow";
      case 2:
        return "synechiae";
    }
  }
  return label == 0 ? "open" : "closure";
}

void require_empty_dir(const fs::path& dir) {
  if (fs::exists(dir)) {
    require<IoError>(fs::is_directory(dir), dir.string(), " exists and is not a directory");
    require<IoError>(fs::is_empty(dir), "refusing to write into non-empty directory ",
                     dir.string());
  }
}

void check_dataset_matches(const std::vector<SequenceSample>& samples, const ModelConfig& mc) {
  require<ConfigError>(!samples.empty(), "dataset is empty");
  const Tensor& slices = samples.front().slices;
  require<ConfigError>(slices.dim(2) == mc.input_size && slices.dim(3) == mc.input_size,
                       "dataset slices are ", slices.dim(2), "x", slices.dim(3),
                       " but the model expects ", mc.input_size, "x", mc.input_size);
  require<ConfigError>(slices.dim(0) == mc.sequence_len, "dataset sequences have T=",
                       slices.dim(0), " but the model expects T=", mc.sequence_len);
  for (const SequenceSample& s : samples) {
    require<ConfigError>(s.label < mc.num_classes, "dataset label ", s.label,
                         " out of range for ", mc.num_classes, " classes");
  }
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 std::optional<long long> seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.set("gen.seed", std::to_string(*seed));
  const GeneratorConfig gen = cfg.generator_config();
  require_empty_dir(out);
  const DatasetManifest manifest = generate_synthetic(gen, out);
  const std::vector<int> counts = manifest.class_counts(gen.num_classes);
  std::printf("generated %zu sequences under %s\n", manifest.entries.size(), out.c_str());
  for (int k = 0; k < gen.num_classes; ++k) {
    std::printf("class %d (%s): %d\n", k, class_name(k, gen.num_classes).c_str(),
                counts[static_cast<std::size_t>(k)]);
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              std::optional<long long> seed, const std::string& resume) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.set("train.seed", std::to_string(*seed));
  const ModelConfig model_cfg = cfg.model_config();
  const TrainConfig train_cfg = cfg.train_config();

  const DatasetManifest manifest = load_manifest(data);
  auto [train_manifest, test_manifest] =
      split_grouped(manifest, cfg.split_test_fraction(), cfg.split_seed());
  std::vector<SequenceSample> train_set = load_sequences(data, train_manifest);
  std::vector<SequenceSample> val_set = load_sequences(data, test_manifest);
  check_dataset_matches(train_set, model_cfg);

  SmaNet model(model_cfg, train_cfg.seed);
  Adam adam(train_cfg.adam_config());
  int start_epoch = 0;
  TrainerMeta meta;
  if (!resume.empty()) {
    const CheckpointHeader header = load_checkpoint(resume, model, &adam);
    start_epoch = static_cast<int>(header.meta.epochs_done);
    meta.best_val = header.meta.best_val;
  }

  require_empty_dir(out);
  fs::create_directories(out);
  {
    std::ofstream echo(fs::path(out) / "config_echo.cfg", std::ios::binary);
    require<IoError>(echo.is_open(), "cannot write config echo");
    echo << cfg.echo();
  }

  std::ofstream metrics_log(fs::path(out) / "metrics.tsv", std::ios::binary);
  require<IoError>(metrics_log.is_open(), "cannot write metrics log");
  const std::string config_text = cfg.echo();

  TrainHooks hooks;
  double best_val = meta.best_val;
  hooks.on_epoch = [&](const EpochRow& row, bool is_best) {
    metrics_log << format_metrics_row(row) << "\n";
    metrics_log.flush();
    if (is_best) {
      best_val = row.val_bacc;
      TrainerMeta m{row.epoch + 1, best_val};
      save_checkpoint(fs::path(out) / "checkpoint_best.smck", model, &adam, config_text, m);
    }
  };

  try {
    train_loop(model, adam, train_set, val_set, train_cfg, start_epoch, hooks);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    TrainerMeta m{-1, best_val};
    save_checkpoint(fs::path(out) / "checkpoint_abort.smck", model, &adam, config_text, m);
    return kExitNumeric;
  }

  TrainerMeta final_meta{train_cfg.epochs, best_val};
  save_checkpoint(fs::path(out) / "checkpoint_last.smck", model, &adam, config_text,
                  final_meta);
  if (!fs::exists(fs::path(out) / "checkpoint_best.smck")) {
    save_checkpoint(fs::path(out) / "checkpoint_best.smck", model, &adam, config_text,
                    final_meta);
  }
  std::printf("trained %d epochs; best val balanced accuracy %.6f\n",
              train_cfg.epochs - start_epoch, best_val);
  return kExitOk;
}

struct LoadedModel {
  RunConfig cfg;
  std::unique_ptr<SmaNet> model;
};

LoadedModel model_from_checkpoint(const std::string& checkpoint) {
  const CheckpointHeader header = read_checkpoint_header(checkpoint);
  require<IoError>(!header.config_text.empty(), "checkpoint carries no configuration");
  LoadedModel lm{RunConfig::parse_text(header.config_text), nullptr};
  lm.model = std::make_unique<SmaNet>(lm.cfg.model_config(), lm.cfg.train_config().seed);
  load_checkpoint(checkpoint, *lm.model, nullptr);
  return lm;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             std::string out) {
  require<ConfigError>(split == "test" || split == "train", "--split must be test or train");
  LoadedModel lm = model_from_checkpoint(checkpoint);
  const ModelConfig model_cfg = lm.cfg.model_config();

  const DatasetManifest manifest = load_manifest(data);
  auto [train_manifest, test_manifest] =
      split_grouped(manifest, lm.cfg.split_test_fraction(), lm.cfg.split_seed());
  std::vector<SequenceSample> samples =
      load_sequences(data, split == "test" ? test_manifest : train_manifest);
  check_dataset_matches(samples, model_cfg);

  const Evaluation eval = evaluate(*lm.model, samples);
  const std::optional<double> auc = evaluation_auc(eval, samples, model_cfg.num_classes);
  const EvalReport report = make_report(eval.cm, auc, split, model_cfg.num_classes);
  const std::string text = format_report(report);
  std::printf("%s", text.c_str());

  if (out.empty()) out = fs::path(checkpoint).parent_path().string();
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / ("eval_" + split + ".txt"), std::ios::binary);
    require<IoError>(os.is_open(), "cannot write evaluation report");
    os << text;
  }
  return kExitOk;
}

int cmd_gradcheck() {
  const gradcheck::Suite suite = gradcheck::standard_suite();
  const std::vector<gradcheck::Row> rows = suite.run();
  bool all_pass = true;
  for (const gradcheck::Row& row : rows) {
    std::printf("%-24s %12.3e  %s\n", row.name.c_str(), row.max_rel_err,
                row.pass ? "PASS" : "FAIL");
    all_pass = all_pass && row.pass;
  }
  return all_pass ? kExitOk : kExitNumeric;
}

int cmd_predict(const std::string& checkpoint, const std::string& sequence) {
  LoadedModel lm = model_from_checkpoint(checkpoint);
  const int k = lm.cfg.model_config().num_classes;
  const Tensor slices = load_tensor_file(sequence);
  require<IoError>(slices.rank() == 4 && slices.dim(1) == 1,
                   "sequence file must hold a [T,1,S,S] tensor, got ", slices.shape_str());
  const SlicePrediction p = lm.model->predict(slices);

  std::printf("predicted %s\n", class_name(p.predicted_class, k).c_str());
  const auto print_rows = [k](const char* name, const Tensor& probs) {
    for (int t = 0; t < probs.dim(0); ++t) {
      std::printf("%s", probs.dim(0) > 1 ? str_cat(name, " t=", t + 1).c_str() : name);
      for (int j = 0; j < k; ++j) {
        std::printf(" %.6f", probs.value_at(static_cast<std::size_t>(t) * k + j));
      }
      std::printf("\n");
    }
  };
  print_rows("slice_probs", p.probs_slice);
  print_rows("seq_probs", p.probs_seq);
  print_rows("final_probs", p.probs_final);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SMA-Net: sequence classification on synthetic angle-wedge data"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint, sequence, resume;
  std::string split = "test";
  std::optional<long long> seed;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a deterministic synthetic dataset");
  gen->add_option("--config", config_path, "run configuration file");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--seed", seed, "override gen.seed");

  CLI::App* train = app.add_subcommand("train", "Train a model on a generated dataset");
  train->add_option("--config", config_path, "run configuration file");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "run directory for logs and checkpoints")->required();
  train->add_option("--seed", seed, "override train.seed");
  train->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "test or train");
  eval->add_option("--out", out_dir, "directory for the report (default: checkpoint dir)");

  app.add_subcommand("gradcheck", "Check every backward rule against finite differences");

  CLI::App* predict = app.add_subcommand("predict", "Classify one sequence file");
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--sequence", sequence, "SMAT sequence file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_dir, seed, resume);
    if (eval->parsed()) return cmd_eval(checkpoint, data_dir, split, out_dir);
    if (predict->parsed()) return cmd_predict(checkpoint, sequence);
    return cmd_gradcheck();
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}
