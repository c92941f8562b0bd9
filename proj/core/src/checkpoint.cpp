#include "smanet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "smanet/common.hpp"

namespace smanet {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint8_t kVersion = 0x01;

const char* kAdamMPrefix = "__adam.m.";
const char* kAdamVPrefix = "__adam.v.";

Tensor encode_text(const std::string& text) {
  std::vector<float> data;
  data.reserve(text.size());
  for (unsigned char ch : text) data.push_back(static_cast<float>(ch));
  if (data.empty()) data.push_back(0.0f);
  const int len = static_cast<int>(data.size());
  return Tensor({len}, std::move(data));
}

std::string decode_text(const Tensor& t) {
  std::string text;
  for (float v : t.values()) {
    const int ch = static_cast<int>(v);
    if (ch > 0) text.push_back(static_cast<char>(ch));
  }
  return text;
}

bool has_prefix(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

const Tensor* NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_smck(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  require<IoError>(os.is_open(), "cannot open for write: ", path.string());
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  const std::uint32_t count = static_cast<std::uint32_t>(tensors.items.size());
  const char count_bytes[4] = {
      static_cast<char>(count & 0xff), static_cast<char>((count >> 8) & 0xff),
      static_cast<char>((count >> 16) & 0xff), static_cast<char>((count >> 24) & 0xff)};
  os.write(count_bytes, 4);
  for (const auto& [name, tensor] : tensors.items) {
    require<IoError>(name.size() <= 0xffff, "checkpoint entry name too long: ", name);
    const std::uint16_t len = static_cast<std::uint16_t>(name.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    os.write(len_bytes, 2);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    save_tensor(os, tensor);
  }
  require<IoError>(static_cast<bool>(os), "failed writing checkpoint ", path.string());
}

NamedTensors load_smck(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open for read: ", path.string());
  char magic[4];
  is.read(magic, 4);
  require<IoError>(static_cast<bool>(is) && std::memcmp(magic, kMagic, 4) == 0,
                   "bad SMCK magic in ", path.string());
  const int version = is.get();
  require<IoError>(version == kVersion, "unsupported SMCK version ", version);
  unsigned char cb[4];
  is.read(reinterpret_cast<char*>(cb), 4);
  require<IoError>(static_cast<bool>(is), "truncated SMCK header");
  const std::uint32_t count = static_cast<std::uint32_t>(cb[0]) |
                              (static_cast<std::uint32_t>(cb[1]) << 8) |
                              (static_cast<std::uint32_t>(cb[2]) << 16) |
                              (static_cast<std::uint32_t>(cb[3]) << 24);
  NamedTensors out;
  out.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char lb[2];
    is.read(reinterpret_cast<char*>(lb), 2);
    require<IoError>(static_cast<bool>(is), "truncated SMCK entry header");
    const std::size_t len = static_cast<std::size_t>(lb[0]) | (static_cast<std::size_t>(lb[1]) << 8);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    require<IoError>(static_cast<bool>(is), "truncated SMCK entry name");
    out.items.emplace_back(std::move(name), load_tensor(is));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, SmaNet& model, const Adam* adam,
                     const std::string& config_text, const TrainerMeta& meta) {
  NamedTensors tensors;
  model.visit_params([&tensors](const std::string& name, Tensor& t, bool) {
    tensors.items.emplace_back(name, t);
  });
  if (adam) {
    model.visit_params([&tensors, adam](const std::string& name, Tensor& t, bool trainable) {
      if (!trainable) return;
      auto it = adam->slots().find(name);
      Tensor m = it != adam->slots().end() ? it->second.m : Tensor(t.dims());
      Tensor v = it != adam->slots().end() ? it->second.v : Tensor(t.dims());
      tensors.items.emplace_back(kAdamMPrefix + name, m);
      tensors.items.emplace_back(kAdamVPrefix + name, v);
    });
    tensors.items.emplace_back("__meta.adam_step",
                               Tensor::scalar(static_cast<float>(adam->step_count())));
  }
  tensors.items.emplace_back("__meta.epochs_done",
                             Tensor::scalar(static_cast<float>(meta.epochs_done)));
  tensors.items.emplace_back("__meta.best_val",
                             Tensor::scalar(static_cast<float>(meta.best_val)));
  tensors.items.emplace_back("__meta.config", encode_text(config_text));
  save_smck(path, tensors);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const NamedTensors tensors = load_smck(path);
  CheckpointHeader h;
  if (const Tensor* cfg = tensors.find("__meta.config")) h.config_text = decode_text(*cfg);
  if (const Tensor* e = tensors.find("__meta.epochs_done")) {
    h.meta.epochs_done = static_cast<std::int64_t>(e->value_at(0));
  }
  if (const Tensor* b = tensors.find("__meta.best_val")) {
    h.meta.best_val = static_cast<double>(b->value_at(0));
  }
  h.has_adam = tensors.find("__meta.adam_step") != nullptr;
  return h;
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, SmaNet& model, Adam* adam) {
  const NamedTensors tensors = load_smck(path);
  std::set<std::string> consumed;

  model.visit_params([&](const std::string& name, Tensor& t, bool) {
    const Tensor* stored = tensors.find(name);
    require<IoError>(stored != nullptr, "checkpoint ", path.string(),
                     " is missing tensor '", name, "' required by this model config");
    require<IoError>(stored->dims() == t.dims(), "checkpoint tensor '", name, "' has shape ",
                     stored->shape_str(), " but the model expects ", t.shape_str());
    std::copy(stored->values().begin(), stored->values().end(), t.values().begin());
    consumed.insert(name);
  });

  if (adam) {
    adam->slots().clear();
    model.visit_params([&](const std::string& name, Tensor& t, bool trainable) {
      if (!trainable) return;
      const Tensor* m = tensors.find(kAdamMPrefix + name);
      const Tensor* v = tensors.find(kAdamVPrefix + name);
      require<IoError>(m && v, "checkpoint ", path.string(),
                       " has no optimizer state for '", name, "'");
      require<IoError>(m->dims() == t.dims() && v->dims() == t.dims(),
                       "optimizer state shape mismatch for '", name, "'");
      adam->slots().emplace(name, Adam::Slot{m->clone(), v->clone()});
      consumed.insert(kAdamMPrefix + name);
      consumed.insert(kAdamVPrefix + name);
    });
    const Tensor* step = tensors.find("__meta.adam_step");
    require<IoError>(step != nullptr, "checkpoint has no __meta.adam_step entry");
    adam->set_step_count(static_cast<std::int64_t>(step->value_at(0)));
  }

  for (const auto& [name, tensor] : tensors.items) {
    if (consumed.count(name) || has_prefix(name, "__meta.")) continue;
    if (!adam && (has_prefix(name, kAdamMPrefix) || has_prefix(name, kAdamVPrefix))) continue;
    throw IoError(str_cat("checkpoint tensor '", name,
                          "' does not exist in the configured model"));
  }
  return read_checkpoint_header(path);
}

}  // namespace smanet
