#include "diffcl/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "diffcl/error.hpp"

namespace diffcl {

static_assert(std::endian::native == std::endian::little,
              "feature matrix I/O assumes a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::vector<RawInteraction> parse_interactions(std::string_view text) {
  std::vector<RawInteraction> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
      throw DataError(fmt::format(
          "line {}: expected user<TAB>item[<TAB>timestamp], got '{}'", line_no, line));
    }
    out.push_back({std::string(fields[0]), std::string(fields[1])});
    if (end == text.size()) break;
  }
  return out;
}

std::vector<RawInteraction> read_interactions(const std::filesystem::path& path) {
  try {
    return parse_interactions(read_file(path));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_interactions(const std::filesystem::path& path,
                        std::span<const Interaction> interactions, const IdMaps& ids) {
  std::string out;
  for (const auto& x : interactions) {
    out += ids.users.at(x.user);
    out += '\t';
    out += ids.items.at(x.item);
    out += '\n';
  }
  write_file(path, out);
}

DenseMatrix read_feature_matrix(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16) {
    throw DataError(fmt::format("{}: truncated feature header", path.string()));
  }
  std::uint64_t rows = 0, cols = 0;
  std::memcpy(&rows, bytes.data(), 8);
  std::memcpy(&cols, bytes.data() + 8, 8);
  const std::uint64_t expected = 16 + rows * cols * 4;
  if (bytes.size() != expected) {
    throw DataError(fmt::format("{}: header says {}x{} ({} bytes) but file has {} bytes",
                                path.string(), rows, cols, expected, bytes.size()));
  }
  std::vector<double> data(rows * cols);
  for (std::size_t k = 0; k < data.size(); ++k) {
    float v = 0.0f;
    std::memcpy(&v, bytes.data() + 16 + 4 * k, 4);
    data[k] = static_cast<double>(v);
    if (!std::isfinite(data[k])) {
      throw DataError(fmt::format("{}: non-finite value in row {}", path.string(),
                                  cols == 0 ? 0 : k / cols));
    }
  }
  return DenseMatrix(rows, cols, std::move(data));
}

void write_feature_matrix(const std::filesystem::path& path, const DenseMatrix& features) {
  std::string bytes(16 + features.size() * 4, '\0');
  const std::uint64_t rows = features.rows(), cols = features.cols();
  std::memcpy(bytes.data(), &rows, 8);
  std::memcpy(bytes.data() + 8, &cols, 8);
  const auto values = features.values();
  for (std::size_t k = 0; k < values.size(); ++k) {
    const float v = static_cast<float>(values[k]);
    std::memcpy(bytes.data() + 16 + 4 * k, &v, 4);
  }
  write_file(path, bytes);
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  std::vector<std::string> ids;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_id_list(const std::filesystem::path& path, std::span<const std::string> ids) {
  std::string out;
  for (const auto& id : ids) {
    out += id;
    out += '\n';
  }
  write_file(path, out);
}

std::vector<std::string> default_row_ids(std::size_t rows) {
  std::vector<std::string> ids;
  ids.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) ids.push_back(std::to_string(r));
  return ids;
}

DenseMatrix align_feature_rows(const DenseMatrix& features,
                               std::span<const std::string> row_ids,
                               std::span<const std::string> item_ids, const char* modality) {
  if (row_ids.size() != features.rows()) {
    throw DataError(fmt::format("{} features: {} rows but {} row ids", modality,
                                features.rows(), row_ids.size()));
  }
  if (!features.all_finite()) {
    throw DataError(fmt::format("{} features contain non-finite values", modality));
  }
  std::unordered_map<std::string_view, std::size_t> row_of;
  for (std::size_t r = 0; r < row_ids.size(); ++r) row_of.emplace(row_ids[r], r);

  DenseMatrix out(item_ids.size(), features.cols());
  std::size_t missing = 0;
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    const auto it = row_of.find(item_ids[i]);
    if (it == row_of.end()) {
      ++missing;
      continue;
    }
    const auto src = features.row(it->second);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  if (missing > 0) {
    spdlog::warn("{} features: {} of {} items have no feature row; using zero rows", modality,
                 missing, item_ids.size());
  }
  return out;
}

}  // namespace diffcl
