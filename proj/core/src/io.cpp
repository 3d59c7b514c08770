#include "ovw/io.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "ovw/errors.hpp"

namespace ovw {

nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data") || !j["shape"].is_array() ||
      !j["data"].is_array()) {
    throw LoadError("tensor JSON needs array fields \"shape\" and \"data\"");
  }
  Shape shape;
  for (const auto& e : j["shape"]) {
    if (!e.is_number_unsigned()) throw LoadError("tensor shape entries must be positive integers");
    shape.push_back(e.get<std::size_t>());
  }
  std::vector<double> data;
  data.reserve(j["data"].size());
  for (const auto& v : j["data"]) {
    if (!v.is_number()) throw LoadError("tensor data entries must be numbers");
    data.push_back(v.get<double>());
  }
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const Error& e) {
    throw LoadError(std::string("invalid tensor: ") + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_text_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file_atomic(path, dump_json(j));
}

}  // namespace ovw
