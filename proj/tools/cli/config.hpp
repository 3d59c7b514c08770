#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ovw/detect_head.hpp"
#include "ovw/repvl_pan.hpp"

namespace ovw::cli {

// Flat key=value run configuration. Blank lines and lines starting with '#'
// are ignored.
struct RunConfig {
  std::size_t dim = 32;
  std::size_t bins = head::kDefaultBins;
  std::size_t heads = 4;
  std::size_t m = 80;
  std::size_t image_size = 128;
  std::size_t max_det = 100;
  std::size_t trials = 100;
  double nms_thresh = 0.5;
  double conf_thresh = 0.3;
  double img_thresh = 0.3;
  double score_thresh = 0.5;
  double reparam_tol = 1e-6;
  std::uint64_t seed = 0;
  bool relabel = false;
  bool box_accurate = false;

  // Throws InputError on out-of-range thresholds, odd dim or heads not
  // dividing dim.
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Everything a detect run needs besides the image and vocabulary.
struct ModelParams {
  std::uint64_t backbone_seed = 0;
  pan::FusionParams fusion;
  head::HeadParams head;

  static ModelParams random(const RunConfig& cfg, std::uint64_t seed);
};

nlohmann::json model_params_to_json(const ModelParams& p);
ModelParams model_params_from_json(const nlohmann::json& j);

}  // namespace ovw::cli
