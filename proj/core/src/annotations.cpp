#include "ovw/annotations.hpp"

#include "ovw/errors.hpp"

namespace ovw {

std::string_view source_name(DataSource s) {
  switch (s) {
    case DataSource::kDetection:
      return "detection";
    case DataSource::kGrounding:
      return "grounding";
    case DataSource::kImageText:
      return "image-text";
  }
  return "detection";
}

DataSource source_from_name(std::string_view name) {
  if (name == "detection") return DataSource::kDetection;
  if (name == "grounding") return DataSource::kGrounding;
  if (name == "image-text") return DataSource::kImageText;
  throw LoadError("unknown annotation source \"" + std::string(name) + "\"");
}

nlohmann::json annotated_image_to_json(const AnnotatedImage& img) {
  nlohmann::json anns = nlohmann::json::array();
  for (const auto& a : img.annotations) {
    nlohmann::json e = {{"box", a.box.as_array()}, {"text", a.text}, {"box_accurate", a.box_accurate}};
    if (a.score) e["score"] = *a.score;
    anns.push_back(std::move(e));
  }
  return {{"image_id", img.image_id}, {"source", source_name(img.source)}, {"annotations", anns}};
}

AnnotatedImage annotated_image_from_json(const nlohmann::json& j) {
  try {
    AnnotatedImage img;
    img.image_id = j.at("image_id").get<std::string>();
    img.source = source_from_name(j.at("source").get<std::string>());
    for (const auto& a : j.at("annotations")) {
      RegionText rt;
      rt.box = Box::from_span(a.at("box").get<std::vector<double>>());
      require_well_formed(rt.box, "annotation");
      rt.text = a.at("text").get<std::string>();
      rt.box_accurate = a.value("box_accurate", true);
      if (a.contains("score")) rt.score = a.at("score").get<double>();
      img.annotations.push_back(std::move(rt));
    }
    return img;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("annotations: ") + e.what());
  } catch (const InputError& e) {
    throw LoadError(std::string("annotations: ") + e.what());
  }
}

}  // namespace ovw
