#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovw/box.hpp"

namespace ovw {

enum class DataSource { kDetection, kGrounding, kImageText };

std::string_view source_name(DataSource s);
DataSource source_from_name(std::string_view name);

// A box paired with free-form text: the unit of every training annotation.
struct RegionText {
  Box box;
  std::string text;
  bool box_accurate = true;
  std::optional<double> score;
};

// Annotations JSON:
// {"image_id": str, "source": "detection"|"grounding"|"image-text",
//  "annotations": [{"box": [x1,y1,x2,y2], "text": str, "box_accurate": bool}, ...]}
// A pseudo-label may also carry "score".
struct AnnotatedImage {
  std::string image_id;
  DataSource source = DataSource::kDetection;
  std::vector<RegionText> annotations;
};

nlohmann::json annotated_image_to_json(const AnnotatedImage& img);
AnnotatedImage annotated_image_from_json(const nlohmann::json& j);

}  // namespace ovw
