#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffcl/dataset.hpp"
#include "diffcl/matrix.hpp"

namespace diffcl {

// Interactions file: UTF-8 text, one `user<TAB>item[<TAB>timestamp]` per
// line. Blank lines and lines starting with '#' are ignored. Malformed lines
// raise DataError naming the 1-based line number.
std::vector<RawInteraction> read_interactions(const std::filesystem::path& path);
std::vector<RawInteraction> parse_interactions(std::string_view text);

// Writes `user<TAB>item` lines using the original ids.
void write_interactions(const std::filesystem::path& path,
                        std::span<const Interaction> interactions, const IdMaps& ids);

// Feature matrix file: little-endian; header = two u64 (rows, cols), then
// rows*cols float32 values row-major. Values are widened to double.
DenseMatrix read_feature_matrix(const std::filesystem::path& path);
// Narrows to float32 on write.
void write_feature_matrix(const std::filesystem::path& path, const DenseMatrix& features);

// One id per line.
std::vector<std::string> read_id_list(const std::filesystem::path& path);
void write_id_list(const std::filesystem::path& path, std::span<const std::string> ids);

/// Reorders feature rows to dense item order. Row r of `features`
/// belongs to raw item `row_ids[r]`. Items missing from `row_ids` get a zero
/// row and a warning. Throws DataError on non-finite values.
DenseMatrix align_feature_rows(const DenseMatrix& features,
                               std::span<const std::string> row_ids,
                               std::span<const std::string> item_ids, const char* modality);

/// Default row ids when no id file accompanies a feature matrix: "0".."rows-1".
std::vector<std::string> default_row_ids(std::size_t rows);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace diffcl
