#include "diffcl/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>
#include <spdlog/fmt/fmt.h>

#include "diffcl/data_io.hpp"
#include "diffcl/error.hpp"

namespace diffcl {

static_assert(std::endian::native == std::endian::little, "blob format assumes little-endian");

std::vector<TensorEntry> write_tensor_blob(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, DenseMatrix*>>& tensors) {
  std::vector<TensorEntry> entries;
  std::string bytes;
  for (const auto& [name, t] : tensors) {
    entries.push_back({name, t->rows(), t->cols(), bytes.size()});
    const auto* p = reinterpret_cast<const char*>(t->values().data());
    bytes.append(p, t->size() * sizeof(double));
  }
  write_file(path, bytes);
  return entries;
}

void read_tensor_blob(const std::filesystem::path& path, std::span<const TensorEntry> entries,
                      const std::vector<std::pair<std::string, DenseMatrix*>>& tensors) {
  const std::string bytes = read_file(path);
  for (const auto& [name, t] : tensors) {
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [&](const TensorEntry& e) { return e.name == name; });
    if (it == entries.end()) throw DataError(fmt::format("checkpoint lacks tensor '{}'", name));
    if (it->rows != t->rows() || it->cols != t->cols()) {
      throw DataError(fmt::format("tensor '{}' is {}x{} in the checkpoint, expected {}x{}", name,
                                  it->rows, it->cols, t->rows(), t->cols()));
    }
    const std::size_t len = t->size() * sizeof(double);
    if (it->offset + len > bytes.size()) {
      throw DataError(fmt::format("tensor blob {} is truncated", path.string()));
    }
    std::memcpy(t->values().data(), bytes.data() + it->offset, len);
  }
}

void save_checkpoint(const std::filesystem::path& dir, DiffClParams& params,
                     const std::string& metadata_json) {
  const auto entries = write_tensor_blob(dir / "tensors.bin", params.tensors());
  nlohmann::ordered_json j;
  j["format"] = "diffcl-checkpoint-1";
  j["blob"] = "tensors.bin";
  auto& list = j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    list.push_back({{"name", e.name}, {"shape", {e.rows, e.cols}}, {"offset", e.offset}});
  }
  j["metadata"] = nlohmann::ordered_json::parse(metadata_json);
  write_file(dir / "checkpoint.json", j.dump(2) + "\n");
}

void load_checkpoint(const std::filesystem::path& dir, DiffClParams& params) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "checkpoint.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("bad checkpoint manifest: {}", e.what()));
  }
  std::vector<TensorEntry> entries;
  for (const auto& t : j.at("tensors")) {
    entries.push_back({t.at("name").get<std::string>(), t.at("shape").at(0).get<std::size_t>(),
                       t.at("shape").at(1).get<std::size_t>(),
                       t.at("offset").get<std::uint64_t>()});
  }
  read_tensor_blob(dir / j.value("blob", std::string("tensors.bin")), entries, params.tensors());
}

}  // namespace diffcl
