#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ovw/tensor.hpp"

namespace ovw {

// {"shape": [...], "data": [...]} with row-major data.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

std::string read_text_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Writes via a sibling temporary file and rename, so readers never observe a
// partially written file.
void write_text_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// Canonical serialization used for every file the tools emit: two-space
// indent and a trailing newline.
std::string dump_json(const nlohmann::json& j);

}  // namespace ovw
