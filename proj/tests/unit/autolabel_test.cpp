#include <gtest/gtest.h>

#include "ovw/autolabel.hpp"
#include "ovw/errors.hpp"
#include "ovw/io.hpp"
#include "test_support.hpp"

namespace ovw::label {
namespace {

using Nouns = std::vector<std::string>;

TEST(ExtractNouns, StopwordsSplitPhrases) {
  EXPECT_EQ(extract_nouns("a dog running in the park"), (Nouns{"dog running", "park"}));
}

TEST(ExtractNouns, OnlyStopwordsGivesNothing) { EXPECT_TRUE(extract_nouns("it is what it is").empty()); }

TEST(ExtractNouns, DuplicatesAppearOnce) {
  EXPECT_EQ(extract_nouns("dog and cat and dog"), (Nouns{"dog", "cat"}));
}

TEST(ExtractNouns, PunctuationEndsAPhraseButApostropheOnlyAWord) {
  EXPECT_EQ(extract_nouns("Red car, blue truck"), (Nouns{"red car", "blue truck"}));
  EXPECT_EQ(extract_nouns("a bird's nest"), (Nouns{"bird", "nest"}));
  EXPECT_EQ(extract_nouns("the bird nest"), (Nouns{"bird nest"}));
}

TEST(ExtractNouns, LongRunsAreChunked) {
  EXPECT_EQ(extract_nouns("big old red wooden barn door"), (Nouns{"big old red", "wooden barn door"}));
  EXPECT_EQ(extract_nouns("big old red barn"), (Nouns{"big old red", "barn"}));
}

TEST(ExtractNouns, HyphensStayInsideWords) {
  EXPECT_EQ(extract_nouns("a T-shirt on a -- hanger"), (Nouns{"t-shirt", "hanger"}));
}

TEST(ExtractNouns, EmptyCaptionThrows) { EXPECT_THROW(extract_nouns(""), InputError); }

FixtureDetector detector_with(nlohmann::json proposals) { return FixtureDetector(nlohmann::json{{"img", proposals}}); }

TEST(ProposeRegions, PassesValidProposalsThrough) {
  const auto det = detector_with({{{"box", {0, 0, 10, 10}}, {"text", "dog"}, {"confidence", 0.5}},
                                  {{"box", {2, 2, 8, 9}}, {"text", "cat"}, {"confidence", 0.7}}});
  const auto p = propose_regions({"img", "dog cat"}, {"dog", "cat"}, det);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[1].text, "cat");
  EXPECT_EQ(p[1].confidence, 0.7);
}

TEST(ProposeRegions, Validation) {
  const auto det = detector_with({{{"box", {5, 0, 5, 10}}, {"text", "dog"}, {"confidence", 0.5}}});
  EXPECT_THROW(propose_regions({"img", "dog"}, {}, det), InputError);
  EXPECT_THROW(propose_regions({"img", "dog"}, {"dog"}, det), PipelineError);
  const auto stranger = detector_with({{{"box", {0, 0, 5, 10}}, {"text", "cow"}, {"confidence", 0.5}}});
  EXPECT_THROW(propose_regions({"img", "dog"}, {"dog"}, stranger), PipelineError);
  EXPECT_THROW(propose_regions({"other", "dog"}, {"dog"}, stranger), PipelineError);
}

TEST(Rescore, GeometricMean) {
  EXPECT_DOUBLE_EQ(rescore(0.64, 0.25), 0.4);
  EXPECT_EQ(rescore(1.0, 1.0), 1.0);
  EXPECT_EQ(rescore(0.0, 0.7), 0.0);
  EXPECT_THROW(rescore(1.2, 0.5), InputError);
}

TEST(Relabel, StrictArgmaxFirstWins) {
  EXPECT_EQ(relabel({{"dog", 0.9}, {"cat", 0.1}}), "dog");
  EXPECT_EQ(relabel({{"dog", 0.5}, {"cat", 0.5}}), "dog");
  EXPECT_EQ(relabel({{"cat", 0.2}}), "cat");
  EXPECT_THROW(relabel({}), InputError);
}

RegionProposal scored(Box b, std::string text, double s) { return {b, std::move(text), s, std::nullopt, s}; }

TEST(RegionFilter, DuplicateBoxesCollapse) {
  const Box b{0, 0, 10, 10};
  const auto kept = region_filter({scored(b, "dog", 0.8), scored(b, "dog", 0.9)}, 0.5, 0.3);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(*kept[0].rescored, 0.9);
}

TEST(RegionFilter, ConfidenceThresholdIsStrict) {
  const Box b{0, 0, 10, 10};
  EXPECT_TRUE(region_filter({scored(b, "dog", 0.3)}, 0.5, 0.3).empty());
  EXPECT_EQ(region_filter({scored(b, "dog", 0.31)}, 0.5, 0.3).size(), 1u);
  // The same boundary reached through the geometric mean.
  EXPECT_EQ(rescore(0.3, 0.3), 0.3);
  EXPECT_EQ(rescore(0.31, 0.31), 0.31);
}

TEST(ImageFilter, Examples) {
  const Box b{0, 0, 10, 10};
  const auto keep = image_filter(0.49, {scored(b, "dog", 0.25)}, 0.3);
  EXPECT_DOUBLE_EQ(keep.score, 0.35);
  EXPECT_TRUE(keep.keep);
  const auto boundary = image_filter(0.18, {scored(b, "dog", 0.5)}, 0.3);
  EXPECT_EQ(boundary.score, 0.3);
  EXPECT_FALSE(boundary.keep);
  const auto none = image_filter(0.9, {}, 0.3);
  EXPECT_EQ(none.score, 0.0);
  EXPECT_FALSE(none.keep);
}

struct Fixtures {
  std::vector<CaptionSample> dataset = load_caption_dataset(testing::data_path("label/captions.jsonl"));
  nlohmann::json detector = read_json_file(testing::data_path("label/detector.json"));
  nlohmann::json scorer = read_json_file(testing::data_path("label/scorer.json"));
};

PipelineResult run_fixture(const Fixtures& f, bool relabel, std::size_t threads = 1) {
  PipelineConfig cfg;
  cfg.relabel = relabel;
  cfg.threads = threads;
  return run_pipeline(f.dataset, FixtureDetector(f.detector), FixtureScorer(f.scorer), cfg);
}

// Compares a run against the independent trace in expected_trace.json.
void expect_matches_trace(const PipelineResult& r, const nlohmann::json& trace) {
  ASSERT_EQ(r.images.size(), trace["images"].size());
  for (std::size_t i = 0; i < r.images.size(); ++i) {
    const auto& want = trace["images"][i];
    const auto& got = r.images[i];
    EXPECT_EQ(got.image_id, want["image_id"].get<std::string>());
    EXPECT_EQ(got.source, DataSource::kImageText);
    ASSERT_EQ(got.annotations.size(), want["annotations"].size());
    for (std::size_t a = 0; a < got.annotations.size(); ++a) {
      const auto& wa = want["annotations"][a];
      EXPECT_EQ(got.annotations[a].text, wa["text"].get<std::string>());
      const auto box = got.annotations[a].box.as_array();
      EXPECT_EQ(std::vector<double>(box.begin(), box.end()), wa["box"].get<std::vector<double>>());
      EXPECT_NEAR(*got.annotations[a].score, wa["score"].get<double>(), 1e-12);
      EXPECT_FALSE(got.annotations[a].box_accurate);
    }
  }
  for (const auto& [name, stage] :
       {std::pair{"extract_nouns", r.report.extract_nouns}, std::pair{"region_nms", r.report.region_nms},
        std::pair{"region_conf", r.report.region_conf}, std::pair{"image_filter", r.report.image_filter}}) {
    EXPECT_EQ(stage.in, trace["stages"][name]["in"].get<std::size_t>()) << name;
    EXPECT_EQ(stage.kept, trace["stages"][name]["kept"].get<std::size_t>()) << name;
    EXPECT_EQ(stage.dropped, trace["stages"][name]["dropped"].get<std::size_t>()) << name;
  }
  EXPECT_EQ(r.report.relabeled, trace["relabeled"].get<std::size_t>());
  EXPECT_TRUE(r.report.reconciles());
}

TEST(Pipeline, FixtureRunMatchesHandTrace) {
  const auto trace = read_json_file(testing::data_path("label/expected_trace.json"));
  Fixtures f;
  expect_matches_trace(run_fixture(f, false), trace["default"]);
  expect_matches_trace(run_fixture(f, true), trace["relabel"]);
}

TEST(Pipeline, GoldenFilesAreCurrent) {
  Fixtures f;
  const auto r = run_fixture(f, false);
  EXPECT_EQ(annotations_to_jsonl(r.images), read_text_file(testing::data_path("label/golden_annotations.jsonl")));
  EXPECT_EQ(dump_json(report_to_json(r.report)), read_text_file(testing::data_path("label/golden_report.json")));
}

TEST(Pipeline, RelabelChangesTextNotBoxes) {
  Fixtures f;
  const auto off = run_fixture(f, false), on = run_fixture(f, true);
  ASSERT_EQ(off.images.size(), on.images.size());
  const auto& a = off.images.back().annotations[0];
  const auto& b = on.images.back().annotations[0];
  EXPECT_EQ(a.text, "bird");
  EXPECT_EQ(b.text, "nest");
  EXPECT_EQ(a.box.as_array(), b.box.as_array());
}

TEST(Pipeline, ThreadCountDoesNotChangeOutput) {
  Fixtures f;
  const auto one = run_fixture(f, false, 1), four = run_fixture(f, false, 4);
  EXPECT_EQ(annotations_to_jsonl(one.images), annotations_to_jsonl(four.images));
  EXPECT_EQ(dump_json(report_to_json(one.report)), dump_json(report_to_json(four.report)));
}

TEST(Pipeline, MissingFixtureEntryErrorsOnlyThatSample) {
  Fixtures f;
  f.detector.erase("img2");
  f.scorer["region_scores"]["img1"][0].erase("dog running");
  const auto r = run_fixture(f, false);
  EXPECT_EQ(r.report.images_errored, 2u);
  ASSERT_EQ(r.report.errors.size(), 2u);
  EXPECT_EQ(r.report.errors[0].image_id, "img1");
  EXPECT_EQ(r.report.errors[1].image_id, "img2");
  EXPECT_EQ(r.images.size(), 1u);
  EXPECT_TRUE(r.report.reconciles());
}

TEST(Pipeline, EmptyDatasetGivesZeroedReport) {
  Fixtures f;
  f.dataset.clear();
  const auto r = run_fixture(f, false);
  EXPECT_TRUE(r.images.empty());
  EXPECT_EQ(r.report.images_in, 0u);
  EXPECT_EQ(r.report.proposals_in, 0u);
  EXPECT_TRUE(r.report.reconciles());
}

TEST(Pipeline, BoxAccurateFlagIsCarried) {
  Fixtures f;
  PipelineConfig cfg;
  cfg.box_accurate = true;
  const auto r = run_pipeline(f.dataset, FixtureDetector(f.detector), FixtureScorer(f.scorer), cfg);
  for (const auto& img : r.images)
    for (const auto& a : img.annotations) EXPECT_TRUE(a.box_accurate);
}

TEST(CaptionDataset, MalformedLineIsLoadError) {
  EXPECT_THROW(parse_caption_dataset("{\"image_id\": \"a\", \"caption\": \"x\"}\nnot json\n"), LoadError);
  EXPECT_EQ(parse_caption_dataset("\n{\"image_id\": \"a\", \"caption\": \"x\"}\n\n").size(), 1u);
}

}  // namespace
}  // namespace ovw::label
