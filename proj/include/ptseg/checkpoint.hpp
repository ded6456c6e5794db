#pragma once

// Versioned binary checkpoint: little-endian, shape-prefixed float64
// parameter blocks followed by the Adam state.
//
//   "PTSEGCKP" | u32 version
//   u32 n_meta   { u32 len, key | u32 len, value }
//   u32 n_params { u32 len, name | u32 rank | u32 dims[rank] | f64 values[] }
//   u64 step | f64 lr, beta1, beta2, eps, weight_decay
//   u8 has_moments [ per param: f64 m[], f64 v[] ]

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ptseg/autodiff.hpp"

namespace ptseg::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> params;
  AdamState adam;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ptseg::ad
