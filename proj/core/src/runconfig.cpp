#include "smanet/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "smanet/common.hpp"

namespace smanet {

const std::vector<RunConfig::KeyDef>& RunConfig::schema() {
  static const std::vector<KeyDef> defs = {
      {"gen.seed", KeyDef::kInt, "42", "generator master seed"},
      {"gen.num_eyes", KeyDef::kInt, "20", "number of eyes"},
      {"gen.sequences_per_eye", KeyDef::kInt, "24", "sequences rendered per eye"},
      {"gen.slices_per_sequence", KeyDef::kInt, "5", "slices T per sequence"},
      {"gen.image_size", KeyDef::kInt, "32", "square slice extent"},
      {"gen.noise_sigma", KeyDef::kDouble, "0.05", "additive Gaussian pixel noise"},
      {"gen.num_classes", KeyDef::kInt, "3", "generated class count (2 or 3)"},
      {"gen.open_range", KeyDef::kDoubleList, "55,80", "open aperture range, degrees"},
      {"gen.narrow_range", KeyDef::kDoubleList, "18,35", "narrow aperture range, degrees"},
      {"gen.synechiae_range", KeyDef::kDoubleList, "0,8", "synechiae aperture range, degrees"},
      {"gen.class_weights", KeyDef::kDoubleList, "1,1,1", "relative class proportions"},
      {"gen.dominant_bias", KeyDef::kDouble, "4", "per-eye dominant class weight multiplier"},
      {"model.input_size", KeyDef::kInt, "32", "square slice extent the model expects"},
      {"model.num_classes", KeyDef::kInt, "3", "classifier width (2 or 3)"},
      {"model.stage_channels", KeyDef::kIntList, "16,32,64", "backbone stage widths"},
      {"model.sequence_len", KeyDef::kInt, "5", "sequence length T the model is built for"},
      {"model.se_reduction", KeyDef::kInt, "4", "SE gate bottleneck ratio"},
      {"model.convlstm_hidden", KeyDef::kInt, "32", "ConvLSTM hidden channels"},
      {"model.convlstm_kernel", KeyDef::kInt, "3", "ConvLSTM kernel size (odd)"},
      {"model.convlstm_layers", KeyDef::kInt, "2", "stacked ConvLSTM layers"},
      {"model.we_conv_channels", KeyDef::kInt, "8", "ensemble head conv filters"},
      {"model.we_kernel", KeyDef::kInt, "3", "ensemble head conv kernel (odd)"},
      {"split.test_fraction", KeyDef::kDouble, "0.5", "fraction of eyes held out"},
      {"split.seed", KeyDef::kInt, "7", "grouped split shuffle seed"},
      {"train.learning_rate", KeyDef::kDouble, "0.0001", "Adam base learning rate"},
      {"train.lr_decay", KeyDef::kDouble, "0.95", "multiplicative per-epoch decay"},
      {"train.lambda", KeyDef::kDouble, "1", "sequence-loss balance weight"},
      {"train.epochs", KeyDef::kInt, "30", "training epochs"},
      {"train.batch_size", KeyDef::kInt, "4", "sequences per optimizer step"},
      {"train.seed", KeyDef::kInt, "1", "initialization and shuffle seed"},
      {"train.beta1", KeyDef::kDouble, "0.9", "Adam first-moment decay"},
      {"train.beta2", KeyDef::kDouble, "0.999", "Adam second-moment decay"},
      {"train.epsilon", KeyDef::kDouble, "1e-8", "Adam denominator epsilon"},
      {"train.photometric_jitter", KeyDef::kBool, "false",
       "brightness/contrast jitter during training"},
  };
  return defs;
}

namespace {

const RunConfig::KeyDef* find_def(const std::string& key) {
  for (const auto& def : RunConfig::schema()) {
    if (def.key == key) return &def;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    require<ConfigError>(pos == v.size(), "trailing characters");
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(str_cat("config key '", key, "' expects an integer, got '", v, "'"));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    require<ConfigError>(pos == v.size(), "trailing characters");
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError(str_cat("config key '", key, "' expects a number, got '", v, "'"));
  }
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const KeyDef& def : schema()) c.values_[def.key] = def.default_value;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeyDef* def = find_def(key);
  require<ConfigError>(def != nullptr, "unknown config key '", key, "'");
  // Validate the literal now so errors carry the key name.
  switch (def->kind) {
    case KeyDef::kInt:
      parse_int(key, value);
      break;
    case KeyDef::kDouble:
      parse_double(key, value);
      break;
    case KeyDef::kBool:
      require<ConfigError>(value == "true" || value == "false" || value == "1" || value == "0",
                           "config key '", key, "' expects a boolean, got '", value, "'");
      break;
    case KeyDef::kIntList:
      for (const std::string& part : split_commas(value)) parse_int(key, part);
      break;
    case KeyDef::kDoubleList:
      for (const std::string& part : split_commas(value)) parse_double(key, part);
      break;
  }
  values_[key] = value;
}

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig c = defaults();
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    require<ConfigError>(eq != std::string::npos, "config line ", line_no,
                         " is not key=value: '", line, "'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  require<IoError>(is.is_open(), "cannot read config file ", path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_text(buffer.str());
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  require<ConfigError>(it != values_.end(), "unknown config key '", key, "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  return parse_int(key, raw(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_double(key, raw(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  return v == "true" || v == "1";
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& part : split_commas(raw(key))) {
    out.push_back(static_cast<int>(parse_int(key, part)));
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& part : split_commas(raw(key))) out.push_back(parse_double(key, part));
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const KeyDef& def : schema()) {
    out += def.key;
    out += "=";
    out += raw(def.key);
    out += "\n";
  }
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.input_size = static_cast<int>(get_int("model.input_size"));
  m.num_classes = static_cast<int>(get_int("model.num_classes"));
  m.stage_channels = get_int_list("model.stage_channels");
  m.sequence_len = static_cast<int>(get_int("model.sequence_len"));
  m.se_reduction = static_cast<int>(get_int("model.se_reduction"));
  m.convlstm_hidden = static_cast<int>(get_int("model.convlstm_hidden"));
  m.convlstm_kernel = static_cast<int>(get_int("model.convlstm_kernel"));
  m.convlstm_layers = static_cast<int>(get_int("model.convlstm_layers"));
  m.we_conv_channels = static_cast<int>(get_int("model.we_conv_channels"));
  m.we_kernel = static_cast<int>(get_int("model.we_kernel"));
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = static_cast<float>(get_double("train.learning_rate"));
  t.lr_decay = static_cast<float>(get_double("train.lr_decay"));
  t.lambda = static_cast<float>(get_double("train.lambda"));
  t.epochs = static_cast<int>(get_int("train.epochs"));
  t.batch_size = static_cast<int>(get_int("train.batch_size"));
  t.seed = static_cast<std::uint64_t>(get_int("train.seed"));
  t.beta1 = static_cast<float>(get_double("train.beta1"));
  t.beta2 = static_cast<float>(get_double("train.beta2"));
  t.epsilon = static_cast<float>(get_double("train.epsilon"));
  t.photometric_jitter = get_bool("train.photometric_jitter");
  t.validate();
  return t;
}

GeneratorConfig RunConfig::generator_config() const {
  GeneratorConfig g;
  g.seed = static_cast<std::uint64_t>(get_int("gen.seed"));
  g.num_eyes = static_cast<int>(get_int("gen.num_eyes"));
  g.sequences_per_eye = static_cast<int>(get_int("gen.sequences_per_eye"));
  g.slices_per_sequence = static_cast<int>(get_int("gen.slices_per_sequence"));
  g.image_size = static_cast<int>(get_int("gen.image_size"));
  g.noise_sigma = get_double("gen.noise_sigma");
  g.num_classes = static_cast<int>(get_int("gen.num_classes"));
  const auto range = [this](const char* key) {
    const std::vector<double> v = get_double_list(key);
    require<ConfigError>(v.size() == 2, "config key '", key, "' expects lo,hi");
    return ApertureRange{v[0], v[1]};
  };
  g.open_range = range("gen.open_range");
  g.narrow_range = range("gen.narrow_range");
  g.synechiae_range = range("gen.synechiae_range");
  g.class_weights = get_double_list("gen.class_weights");
  if (static_cast<int>(g.class_weights.size()) > g.num_classes) {
    g.class_weights.resize(static_cast<std::size_t>(g.num_classes));
  }
  g.dominant_bias = get_double("gen.dominant_bias");
  g.validate();
  return g;
}

double RunConfig::split_test_fraction() const { return get_double("split.test_fraction"); }

std::uint64_t RunConfig::split_seed() const {
  return static_cast<std::uint64_t>(get_int("split.seed"));
}

}  // namespace smanet
