#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovw/annotations.hpp"
#include "ovw/box.hpp"

namespace ovw::label {

struct CaptionSample {
  std::string image_id;
  std::string caption;
};

struct RegionProposal {
  Box box;
  std::string text;
  double confidence = 0.0;                 // detector confidence c
  std::optional<double> region_score;      // region-text score s_r
  std::optional<double> rescored;          // sqrt(c * s_r)
};

// Open-vocabulary detector producing coarse region-text proposals.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<RegionProposal> propose(const std::string& image_id,
                                              const std::vector<std::string>& nouns) const = 0;
};

// Image-text relevance model. Scores lie in [0, 1].
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double image_score(const std::string& image_id, const std::string& caption) const = 0;
  // Score of the crop of proposal `region` (its index in the detector output)
  // against `text`.
  virtual double region_score(const std::string& image_id, std::size_t region, const Box& box,
                              const std::string& text) const = 0;
};

// Detector fixture JSON:
//   {"<image_id>": [{"box": [x1,y1,x2,y2], "text": str, "confidence": c}, ...], ...}
class FixtureDetector : public Detector {
 public:
  explicit FixtureDetector(nlohmann::json fixture);
  std::vector<RegionProposal> propose(const std::string& image_id,
                                      const std::vector<std::string>& nouns) const override;

 private:
  nlohmann::json fixture_;
};

// Scorer fixture JSON:
//   {"image_scores": {"<image_id>": s, ...},
//    "region_scores": {"<image_id>": [{"<text>": s, ...}, ...], ...}}
// region_scores lists one object per detector proposal, in proposal order.
class FixtureScorer : public Scorer {
 public:
  explicit FixtureScorer(nlohmann::json fixture);
  double image_score(const std::string& image_id, const std::string& caption) const override;
  double region_score(const std::string& image_id, std::size_t region, const Box& box,
                      const std::string& text) const override;

 private:
  nlohmann::json fixture_;
};

// Words that never appear in an extracted phrase.
const std::vector<std::string>& stopwords();

inline constexpr std::size_t kMaxPhraseWords = 3;

// Lowercases the caption and splits it into words of [a-z0-9] with inner
// hyphens. Whitespace and apostrophes separate words; any other punctuation
// also ends the current phrase. Stopwords end the current phrase. Every
// maximal run of surviving words becomes phrases of at most three words
// (split left to right). Phrases are deduplicated in first-occurrence order.
std::vector<std::string> extract_nouns(const std::string& caption);

// Queries the detector and validates each proposal: well-formed box,
// confidence in [0, 1] and text among `nouns`.
std::vector<RegionProposal> propose_regions(const CaptionSample& sample, const std::vector<std::string>& nouns,
                                            const Detector& detector);

// sqrt(c * s_r) for c, s_r in [0, 1].
double rescore(double confidence, double region_score);

// Argmax noun; ties go to the earliest entry.
std::string relabel(const std::vector<std::pair<std::string, double>>& scores);

inline constexpr double kNmsThreshold = 0.5;
inline constexpr double kConfidenceThreshold = 0.3;
inline constexpr double kImageThreshold = 0.3;

// Greedy NMS on the rescored confidence within each text group; input order
// is preserved.
std::vector<RegionProposal> suppress_per_text(const std::vector<RegionProposal>& proposals, double nms_thresh);
// Keeps proposals whose rescored confidence is strictly above conf_thresh.
std::vector<RegionProposal> drop_low_confidence(const std::vector<RegionProposal>& proposals, double conf_thresh);

// Per-text NMS on the rescored confidence, then keeps proposals with rescored
// confidence strictly above conf_thresh. Output keeps input order.
std::vector<RegionProposal> region_filter(const std::vector<RegionProposal>& proposals,
                                          double nms_thresh = kNmsThreshold,
                                          double conf_thresh = kConfidenceThreshold);

struct ImageDecision {
  double region_mean = 0.0;  // mean rescored confidence of kept proposals, 0 if none
  double score = 0.0;        // sqrt(s_img * region_mean)
  bool keep = false;         // score > img_thresh
};

ImageDecision image_filter(double image_score, const std::vector<RegionProposal>& kept,
                           double img_thresh = kImageThreshold);

struct PipelineConfig {
  double nms_thresh = kNmsThreshold;
  double conf_thresh = kConfidenceThreshold;
  double img_thresh = kImageThreshold;
  bool relabel = false;
  bool box_accurate = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct StageCount {
  std::size_t in = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

struct SampleError {
  std::string image_id;
  std::string message;
};

struct PipelineReport {
  std::size_t images_in = 0;
  std::size_t images_kept = 0;
  std::size_t images_errored = 0;
  std::size_t proposals_in = 0;
  std::size_t proposals_kept = 0;
  std::size_t relabeled = 0;
  StageCount extract_nouns;  // images with at least one phrase
  StageCount region_nms;     // proposals
  StageCount region_conf;    // proposals
  StageCount image_filter;   // images
  std::vector<SampleError> errors;

  // in == kept + dropped at every stage and the stages chain together.
  bool reconciles() const;
};

struct PipelineResult {
  std::vector<AnnotatedImage> images;
  PipelineReport report;
};

// Extract nouns, propose regions, score the image and every region, relabel
// (optional), rescore, region-level filtering, image-level filtering. A stage
// failure drops that sample and is recorded in the report. Output follows
// input order whatever the thread count.
PipelineResult run_pipeline(const std::vector<CaptionSample>& dataset, const Detector& detector,
                            const Scorer& scorer, const PipelineConfig& config);

// JSON lines of {"image_id": str, "caption": str}.
std::vector<CaptionSample> parse_caption_dataset(const std::string& jsonl);
std::vector<CaptionSample> load_caption_dataset(const std::filesystem::path& path);

nlohmann::json report_to_json(const PipelineReport& report);
// One Annotations JSON object per line, compact form.
std::string annotations_to_jsonl(const std::vector<AnnotatedImage>& images);

}  // namespace ovw::label
