#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cep/tensor.hpp"

namespace cep {

// Binary tensor container. Layout, all little-endian:
//   magic "CEPC" | version u32 | tensor count u32 | per tensor:
//   name length u16, name bytes, rank u8, extents u32 each, values f32 each.
// A plain-text `key = value` sidecar at <path>.meta carries run metadata.
struct CheckpointData {
  std::vector<std::pair<std::string, Tensor>> tensors;  // fixed order
  std::map<std::string, std::string> meta;

  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint_file(const std::string& path, const CheckpointData& data);

// Rejections (bad magic, version, truncation) name the byte offset.
CheckpointData load_checkpoint_file(const std::string& path);

}  // namespace cep
