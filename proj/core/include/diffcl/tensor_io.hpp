#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffcl/matrix.hpp"
#include "diffcl/model.hpp"

namespace diffcl {

struct TensorEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t offset = 0;  // bytes into the blob
};

/// Raw little-endian float64 blob, tensors back to back in the given order.
std::vector<TensorEntry> write_tensor_blob(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, DenseMatrix*>>& tensors);

/// Fills every tensor from the blob by name. Throws DataError on a missing
/// name, a shape mismatch or a short file.
void read_tensor_blob(const std::filesystem::path& path, std::span<const TensorEntry> entries,
                      const std::vector<std::pair<std::string, DenseMatrix*>>& tensors);

/// Writes dir/tensors.bin and dir/checkpoint.json. `metadata_json` must be
/// a JSON object; it is embedded under "metadata".
void save_checkpoint(const std::filesystem::path& dir, DiffClParams& params,
                     const std::string& metadata_json);
/// Loads into params, which must already have the checkpoint's layout.
void load_checkpoint(const std::filesystem::path& dir, DiffClParams& params);

}  // namespace diffcl
