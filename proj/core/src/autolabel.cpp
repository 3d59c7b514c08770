#include "ovw/autolabel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_set>

#include "ovw/detect_head.hpp"
#include "ovw/errors.hpp"
#include "ovw/io.hpp"
#include "ovw/parallel.hpp"

namespace ovw::label {
namespace {

void require_unit_interval(double v, const std::string& what) {
  if (!(v >= 0.0 && v <= 1.0)) throw InputError(what + " " + std::to_string(v) + " is outside [0, 1]");
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += words[i];
  }
  return out;
}

struct SampleOutcome {
  bool errored = false;
  std::string error;
  bool had_nouns = false;
  std::size_t proposals = 0;
  std::size_t after_nms = 0;
  std::size_t after_conf = 0;
  std::size_t relabeled = 0;
  bool kept = false;
  AnnotatedImage image;
};

SampleOutcome process_sample(const CaptionSample& sample, const Detector& detector, const Scorer& scorer,
                             const PipelineConfig& cfg) {
  SampleOutcome out;
  const std::vector<std::string> nouns = extract_nouns(sample.caption);
  if (nouns.empty()) return out;
  out.had_nouns = true;

  std::vector<RegionProposal> proposals = propose_regions(sample, nouns, detector);
  out.proposals = proposals.size();

  const double s_img = scorer.image_score(sample.image_id, sample.caption);
  require_unit_interval(s_img, "image-text score for " + sample.image_id);

  for (std::size_t i = 0; i < proposals.size(); ++i) {
    RegionProposal& p = proposals[i];
    if (cfg.relabel) {
      std::vector<std::pair<std::string, double>> scores;
      for (const auto& noun : nouns) {
        const double s = scorer.region_score(sample.image_id, i, p.box, noun);
        require_unit_interval(s, "region-text score");
        scores.emplace_back(noun, s);
      }
      std::string best = relabel(scores);
      if (best != p.text) ++out.relabeled;
      p.region_score = std::find_if(scores.begin(), scores.end(), [&](const auto& e) { return e.first == best; })->second;
      p.text = std::move(best);
    } else {
      p.region_score = scorer.region_score(sample.image_id, i, p.box, p.text);
      require_unit_interval(*p.region_score, "region-text score");
    }
    p.rescored = rescore(p.confidence, *p.region_score);
  }

  const std::vector<RegionProposal> after_nms = suppress_per_text(proposals, cfg.nms_thresh);
  out.after_nms = after_nms.size();
  const std::vector<RegionProposal> kept = drop_low_confidence(after_nms, cfg.conf_thresh);
  out.after_conf = kept.size();

  const ImageDecision decision = image_filter(s_img, kept, cfg.img_thresh);
  out.kept = decision.keep;
  if (decision.keep) {
    out.image.image_id = sample.image_id;
    out.image.source = DataSource::kImageText;
    for (const auto& p : kept) out.image.annotations.push_back({p.box, p.text, cfg.box_accurate, p.rescored});
  }
  return out;
}

}  // namespace

FixtureDetector::FixtureDetector(nlohmann::json fixture) : fixture_(std::move(fixture)) {
  if (!fixture_.is_object()) throw LoadError("detector fixture must be a JSON object keyed by image id");
}

std::vector<RegionProposal> FixtureDetector::propose(const std::string& image_id,
                                                     const std::vector<std::string>&) const {
  const auto it = fixture_.find(image_id);
  if (it == fixture_.end()) throw PipelineError("detector fixture has no entry for image \"" + image_id + "\"");
  std::vector<RegionProposal> out;
  try {
    for (const auto& p : *it) {
      RegionProposal r;
      r.box = Box::from_span(p.at("box").get<std::vector<double>>());
      r.text = p.at("text").get<std::string>();
      r.confidence = p.at("confidence").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError("detector fixture for \"" + image_id + "\": " + e.what());
  }
  return out;
}

FixtureScorer::FixtureScorer(nlohmann::json fixture) : fixture_(std::move(fixture)) {
  if (!fixture_.is_object() || !fixture_.contains("image_scores") || !fixture_.contains("region_scores")) {
    throw LoadError("scorer fixture needs \"image_scores\" and \"region_scores\"");
  }
}

double FixtureScorer::image_score(const std::string& image_id, const std::string&) const {
  const auto& scores = fixture_["image_scores"];
  const auto it = scores.find(image_id);
  if (it == scores.end() || !it->is_number()) {
    throw PipelineError("scorer fixture has no image score for \"" + image_id + "\"");
  }
  return it->get<double>();
}

double FixtureScorer::region_score(const std::string& image_id, std::size_t region, const Box&,
                                   const std::string& text) const {
  const auto& all = fixture_["region_scores"];
  const auto img = all.find(image_id);
  if (img == all.end() || !img->is_array() || region >= img->size()) {
    throw PipelineError("scorer fixture has no region " + std::to_string(region) + " for \"" + image_id + "\"");
  }
  const auto& entry = (*img)[region];
  const auto it = entry.find(text);
  if (it == entry.end() || !it->is_number()) {
    throw PipelineError("scorer fixture has no score for \"" + text + "\" on region " + std::to_string(region) +
                        " of \"" + image_id + "\"");
  }
  return it->get<double>();
}

const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> words = {
      "a",     "about",  "above", "across", "after", "against", "all",    "along",  "also",  "am",    "among",
      "an",    "and",    "any",   "are",    "around", "as",     "at",     "be",     "been",  "before", "behind",
      "being", "below",  "beside", "between", "both", "but",    "by",     "can",    "could", "did",   "do",
      "does",  "down",   "during", "each",  "eight", "every",   "few",    "five",   "for",   "four",  "from",
      "had",   "has",    "have",  "having", "he",    "her",     "here",   "hers",   "him",   "his",   "how",
      "i",     "in",     "into",  "is",     "it",    "its",     "just",   "many",   "may",   "me",    "might",
      "more",  "most",   "much",  "must",   "my",    "near",    "next",   "nine",   "no",    "nor",   "not",
      "of",    "off",    "on",    "one",    "onto",  "or",      "other",  "our",    "ours",  "out",   "over",
      "s",     "same",   "seven", "shall",  "she",   "should",  "six",    "so",     "some",  "such",  "t",
      "ten",   "than",   "that",  "the",    "their", "theirs",  "them",   "then",   "there", "these", "they",
      "this",  "those",  "three", "through", "to",   "too",     "two",    "under",  "up",    "upon",  "us",
      "very",  "was",    "we",    "were",   "what",  "when",    "where",  "which",  "while", "who",   "whom",
      "why",   "will",   "with",  "within", "without", "would", "yet",    "you",    "your",  "yours"};
  return words;
}

std::vector<std::string> extract_nouns(const std::string& caption) {
  if (caption.empty()) throw InputError("extract_nouns: empty caption");
  static const std::unordered_set<std::string> stop(stopwords().begin(), stopwords().end());

  std::vector<std::vector<std::string>> runs(1);
  std::string word;
  auto end_word = [&] {
    const auto first = word.find_first_not_of('-');
    const auto last = word.find_last_not_of('-');
    std::string w = first == std::string::npos ? std::string() : word.substr(first, last - first + 1);
    word.clear();
    if (w.empty()) return;
    if (stop.count(w)) {
      if (!runs.back().empty()) runs.emplace_back();
    } else {
      runs.back().push_back(std::move(w));
    }
  };
  for (unsigned char ch : caption) {
    if (std::isalnum(ch) || ch == '-') {
      word += static_cast<char>(std::tolower(ch));
    } else if (std::isspace(ch) || ch == '\'') {
      end_word();
    } else {
      end_word();
      if (!runs.back().empty()) runs.emplace_back();
    }
  }
  end_word();

  std::vector<std::string> phrases;
  std::unordered_set<std::string> seen;
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < run.size(); i += kMaxPhraseWords) {
      std::string phrase = join(run, i, std::min(run.size(), i + kMaxPhraseWords));
      if (seen.insert(phrase).second) phrases.push_back(std::move(phrase));
    }
  }
  return phrases;
}

std::vector<RegionProposal> propose_regions(const CaptionSample& sample, const std::vector<std::string>& nouns,
                                            const Detector& detector) {
  if (nouns.empty()) throw InputError("propose_regions: no nouns for image \"" + sample.image_id + "\"");
  std::vector<RegionProposal> proposals = detector.propose(sample.image_id, nouns);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const RegionProposal& p = proposals[i];
    const std::string where = "proposal " + std::to_string(i) + " of \"" + sample.image_id + "\"";
    if (!p.box.well_formed()) throw PipelineError(where + " has a malformed box");
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) throw PipelineError(where + " has confidence outside [0, 1]");
    if (std::find(nouns.begin(), nouns.end(), p.text) == nouns.end()) {
      throw PipelineError(where + " names \"" + p.text + "\", which is not an extracted noun");
    }
  }
  return proposals;
}

double rescore(double confidence, double region_score) {
  require_unit_interval(confidence, "confidence");
  require_unit_interval(region_score, "region-text score");
  return std::sqrt(confidence * region_score);
}

std::string relabel(const std::vector<std::pair<std::string, double>>& scores) {
  if (scores.empty()) throw InputError("relabel: no candidate nouns");
  auto best = scores.begin();
  for (auto it = scores.begin() + 1; it != scores.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

std::vector<RegionProposal> suppress_per_text(const std::vector<RegionProposal>& proposals, double nms_thresh) {
  std::map<std::string, std::size_t> text_ids;
  std::vector<head::Detection> dets;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const RegionProposal& p = proposals[i];
    if (!p.rescored) {
      throw PipelineError("region_filter: proposal " + std::to_string(i) + " has not been rescored");
    }
    const auto id = text_ids.emplace(p.text, text_ids.size()).first->second;
    dets.push_back({p.box, id, *p.rescored});
  }
  std::vector<std::size_t> kept = head::nms(dets, nms_thresh);
  std::sort(kept.begin(), kept.end());
  std::vector<RegionProposal> out;
  for (std::size_t i : kept) out.push_back(proposals[i]);
  return out;
}

std::vector<RegionProposal> drop_low_confidence(const std::vector<RegionProposal>& proposals, double conf_thresh) {
  std::vector<RegionProposal> out;
  for (const auto& p : proposals) {
    if (!p.rescored) throw PipelineError("region_filter: proposal has not been rescored");
    if (*p.rescored > conf_thresh) out.push_back(p);
  }
  return out;
}

std::vector<RegionProposal> region_filter(const std::vector<RegionProposal>& proposals, double nms_thresh,
                                          double conf_thresh) {
  return drop_low_confidence(suppress_per_text(proposals, nms_thresh), conf_thresh);
}

ImageDecision image_filter(double image_score, const std::vector<RegionProposal>& kept, double img_thresh) {
  require_unit_interval(image_score, "image-text score");
  ImageDecision d;
  if (!kept.empty()) {
    double sum = 0.0;
    for (const auto& p : kept) {
      if (!p.rescored) throw PipelineError("image_filter: proposal has not been rescored");
      sum += *p.rescored;
    }
    d.region_mean = sum / static_cast<double>(kept.size());
  }
  d.score = std::sqrt(image_score * d.region_mean);
  d.keep = d.score > img_thresh;
  return d;
}

void PipelineConfig::validate() const {
  require_unit_interval(nms_thresh, "nms_thresh");
  require_unit_interval(conf_thresh, "conf_thresh");
  require_unit_interval(img_thresh, "img_thresh");
}

bool PipelineReport::reconciles() const {
  auto balanced = [](const StageCount& s) { return s.in == s.kept + s.dropped; };
  return balanced(extract_nouns) && balanced(region_nms) && balanced(region_conf) && balanced(image_filter) &&
         images_in == images_errored + extract_nouns.in && image_filter.in == extract_nouns.kept &&
         region_conf.in == region_nms.kept && proposals_in == region_nms.in && images_kept == image_filter.kept &&
         proposals_kept <= region_conf.kept;
}

PipelineResult run_pipeline(const std::vector<CaptionSample>& dataset, const Detector& detector,
                            const Scorer& scorer, const PipelineConfig& config) {
  config.validate();
  std::vector<SampleOutcome> outcomes(dataset.size());
  parallel_for(dataset.size(), config.threads, [&](std::size_t i) {
    try {
      outcomes[i] = process_sample(dataset[i], detector, scorer, config);
    } catch (const Error& e) {
      outcomes[i] = SampleOutcome{};
      outcomes[i].errored = true;
      outcomes[i].error = e.what();
    }
  });

  PipelineResult result;
  PipelineReport& r = result.report;
  r.images_in = dataset.size();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    SampleOutcome& o = outcomes[i];
    if (o.errored) {
      ++r.images_errored;
      r.errors.push_back({dataset[i].image_id, o.error});
      continue;
    }
    ++r.extract_nouns.in;
    if (!o.had_nouns) {
      ++r.extract_nouns.dropped;
      continue;
    }
    ++r.extract_nouns.kept;
    r.proposals_in += o.proposals;
    r.relabeled += o.relabeled;
    r.region_nms.in += o.proposals;
    r.region_nms.kept += o.after_nms;
    r.region_nms.dropped += o.proposals - o.after_nms;
    r.region_conf.in += o.after_nms;
    r.region_conf.kept += o.after_conf;
    r.region_conf.dropped += o.after_nms - o.after_conf;
    ++r.image_filter.in;
    if (o.kept) {
      ++r.image_filter.kept;
      r.proposals_kept += o.image.annotations.size();
      result.images.push_back(std::move(o.image));
    } else {
      ++r.image_filter.dropped;
    }
  }
  r.images_kept = r.image_filter.kept;
  return result;
}

std::vector<CaptionSample> parse_caption_dataset(const std::string& jsonl) {
  std::vector<CaptionSample> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("image_id").get<std::string>(), j.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("caption dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CaptionSample> load_caption_dataset(const std::filesystem::path& path) {
  return parse_caption_dataset(read_text_file(path));
}

nlohmann::json report_to_json(const PipelineReport& r) {
  auto stage = [](const StageCount& s) { return nlohmann::json{{"in", s.in}, {"kept", s.kept}, {"dropped", s.dropped}}; };
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : r.errors) errors.push_back({{"image_id", e.image_id}, {"error", e.message}});
  return {{"images_in", r.images_in},
          {"images_kept", r.images_kept},
          {"images_errored", r.images_errored},
          {"proposals_in", r.proposals_in},
          {"proposals_kept", r.proposals_kept},
          {"relabeled", r.relabeled},
          {"stages",
           {{"extract_nouns", stage(r.extract_nouns)},
            {"region_nms", stage(r.region_nms)},
            {"region_conf", stage(r.region_conf)},
            {"image_filter", stage(r.image_filter)}}},
          {"errors", errors},
          {"reconciles", r.reconciles()}};
}

std::string annotations_to_jsonl(const std::vector<AnnotatedImage>& images) {
  std::string out;
  for (const auto& img : images) out += annotated_image_to_json(img).dump() + "\n";
  return out;
}

}  // namespace ovw::label
