#include "config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include "ovw/errors.hpp"
#include "ovw/io.hpp"

namespace ovw::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw InputError("config " + key + ": expected an unsigned integer, got \"" + v + "\"");
  return static_cast<std::size_t>(out);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw InputError("config " + key + ": expected a number, got \"" + v + "\"");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config " + key + ": expected true/false, got \"" + v + "\"");
}

void require_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw InputError(std::string("config ") + name + " must lie in [0, 1]");
}

}  // namespace

void RunConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) throw InputError("config dim must be even and >= 2");
  if (heads == 0 || dim % heads != 0) throw InputError("config heads must divide dim");
  if (bins < 2) throw InputError("config bins must be >= 2");
  if (m == 0) throw InputError("config m must be >= 1");
  if (image_size == 0 || image_size % 32 != 0 || image_size < 96) {
    throw InputError("config image_size must be a multiple of 32 and at least 96");
  }
  require_unit(nms_thresh, "nms_thresh");
  require_unit(conf_thresh, "conf_thresh");
  require_unit(img_thresh, "img_thresh");
  require_unit(score_thresh, "score_thresh");
  if (!(reparam_tol > 0.0)) throw InputError("config reparam_tol must be positive");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"dim", [&](auto& k, auto& v) { cfg.dim = to_size(k, v); }},
      {"bins", [&](auto& k, auto& v) { cfg.bins = to_size(k, v); }},
      {"heads", [&](auto& k, auto& v) { cfg.heads = to_size(k, v); }},
      {"m", [&](auto& k, auto& v) { cfg.m = to_size(k, v); }},
      {"image_size", [&](auto& k, auto& v) { cfg.image_size = to_size(k, v); }},
      {"max_det", [&](auto& k, auto& v) { cfg.max_det = to_size(k, v); }},
      {"trials", [&](auto& k, auto& v) { cfg.trials = to_size(k, v); }},
      {"nms_thresh", [&](auto& k, auto& v) { cfg.nms_thresh = to_double(k, v); }},
      {"conf_thresh", [&](auto& k, auto& v) { cfg.conf_thresh = to_double(k, v); }},
      {"img_thresh", [&](auto& k, auto& v) { cfg.img_thresh = to_double(k, v); }},
      {"score_thresh", [&](auto& k, auto& v) { cfg.score_thresh = to_double(k, v); }},
      {"reparam_tol", [&](auto& k, auto& v) { cfg.reparam_tol = to_double(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = to_size(k, v); }},
      {"relabel", [&](auto& k, auto& v) { cfg.relabel = to_bool(k, v); }},
      {"box_accurate", [&](auto& k, auto& v) { cfg.box_accurate = to_bool(k, v); }},
  };
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw InputError("config line " + std::to_string(line_no) + ": unknown key \"" + key + "\"");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

ModelParams ModelParams::random(const RunConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.backbone_seed = seed;
  p.fusion = pan::FusionParams::random(cfg.dim, cfg.heads, seed + 1);
  p.head = head::HeadParams::random(cfg.dim, cfg.bins, seed + 2);
  return p;
}

nlohmann::json model_params_to_json(const ModelParams& p) {
  return {{"backbone_seed", p.backbone_seed},
          {"fusion", pan::fusion_params_to_json(p.fusion)},
          {"head", head::head_params_to_json(p.head)}};
}

ModelParams model_params_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("backbone_seed") || !j.contains("fusion") || !j.contains("head")) {
    throw LoadError("params file needs \"backbone_seed\", \"fusion\" and \"head\"");
  }
  ModelParams p;
  p.backbone_seed = j["backbone_seed"].get<std::uint64_t>();
  p.fusion = pan::fusion_params_from_json(j["fusion"]);
  p.head = head::head_params_from_json(j["head"]);
  if (p.fusion.dim != p.head.dim) throw LoadError("params file: fusion and head dims differ");
  return p;
}

}  // namespace ovw::cli
