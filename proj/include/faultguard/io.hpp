#pragma once

#include "faultguard/core.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace faultguard::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Binary matrix container: "FGMX" magic, u32 version, u64 count, then per
/// matrix u64 rows, u64 cols and column-major little-endian doubles.
void write_matrices(const fs::path& path, std::span<const Matrix> matrices);
std::vector<Matrix> read_matrices(const fs::path& path);

void write_json(const fs::path& path, const json& value);
json read_json(const fs::path& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Creates `dir` (and parents) or throws if it cannot be written.
void ensure_directory(const fs::path& dir);

}  // namespace faultguard::io
