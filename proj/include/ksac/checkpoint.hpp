#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ksac/tensor.hpp"

namespace ksac {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "KSAC" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | 4 x u64 shape | f64 payload }
void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace ksac
