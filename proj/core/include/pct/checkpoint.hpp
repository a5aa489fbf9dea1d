#pragma once

// Versioned checkpoint container:
//   "PCTCKPT\0" | u32 format_version | u64 header bytes | JSON header | payload
// The header holds the model config, free-form metadata and a table of named
// tensors (dtype, shape, payload offset); an optional opaque blob carries
// optimizer state.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pct/model.hpp"
#include "pct/serialization.hpp"

namespace pct::model {

void to_json(Json& j, const ModelConfig& v);
void from_json(const Json& j, ModelConfig& v);

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Json meta = Json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  std::string optimizer_state;

  bool has_prefix(const std::string& prefix) const;
  const torch::Tensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws LoadError naming the file on a bad magic, version or truncation.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Appends every parameter and buffer as "<prefix>.<name>".
void store_model(Checkpoint& ckpt, BevSegModel& model, const std::string& prefix);
/// Copies "<prefix>.*" tensors into the model. Throws LoadError on a missing,
/// unexpected or wrongly shaped tensor.
void load_model(BevSegModel& model, const Checkpoint& ckpt, const std::string& prefix);

}  // namespace pct::model
