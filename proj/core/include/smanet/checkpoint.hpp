#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "smanet/model.hpp"
#include "smanet/optim.hpp"

namespace smanet {

// SMCK container: "SMCK" | version 0x01 | little-endian u32 entry count |
// per entry (little-endian u16 name length, UTF-8 name, embedded SMAT
// tensor).
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  const Tensor* find(const std::string& name) const;
};

void save_smck(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_smck(const std::filesystem::path& path);

struct TrainerMeta {
  std::int64_t epochs_done = 0;
  double best_val = -1.0;
};

// Model state (parameters and running statistics), optional Adam slots, the
// canonical run-config echo, and trainer bookkeeping, all as named tensors.
void save_checkpoint(const std::filesystem::path& path, SmaNet& model, const Adam* adam,
                     const std::string& config_text, const TrainerMeta& meta);

struct CheckpointHeader {
  std::string config_text;
  TrainerMeta meta;
  bool has_adam = false;
};

// Reads only the embedded config and bookkeeping.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Restores model (and Adam when given) state. Every model tensor must be
// present with matching shape and no unexpected entries may remain; the
// first offending tensor is named in the error.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, SmaNet& model, Adam* adam);

}  // namespace smanet
