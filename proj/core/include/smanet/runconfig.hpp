#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "smanet/dataset.hpp"
#include "smanet/model.hpp"
#include "smanet/train.hpp"

namespace smanet {

// Flat key=value run configuration covering the model, the training run, the
// grouped split and the synthetic generator. '#' starts a comment; unknown
// keys are rejected. Every key has a documented default (see schema()).
class RunConfig {
 public:
  struct KeyDef {
    std::string key;
    enum Kind { kInt, kDouble, kBool, kIntList, kDoubleList } kind;
    std::string default_value;
    std::string doc;
  };

  static const std::vector<KeyDef>& schema();
  static RunConfig defaults();
  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::filesystem::path& path);

  // Validated assignment of a single key.
  void set(const std::string& key, const std::string& value);

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // Canonical echo: every key in schema order, reparses to an identical
  // config.
  std::string echo() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  GeneratorConfig generator_config() const;
  double split_test_fraction() const;
  std::uint64_t split_seed() const;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace smanet
