#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgta/param_store.hpp"
#include "mgta/tensor.hpp"

namespace mgta {

inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'T', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Layout (all integers little-endian):
//   "MGTA" | u32 version | records...
//   record: u32 name_len | name bytes | u8 dtype (0=f64, 1=f32) | u32 rank |
//           rank x u64 dims | values (8 or 4 bytes each)
void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     DType dtype = DType::kF64);

struct LoadReport {
  std::vector<std::string> loaded;
  // Present in the store but absent from the file; left at their init values.
  std::vector<std::string> fresh;
  // Present in the file but unknown to the store; ignored.
  std::vector<std::string> unused;
};

/// Copies matching tensors into the store by name. A shape mismatch throws
/// DataError naming the parameter and the checkpoint version.
LoadReport load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace mgta
