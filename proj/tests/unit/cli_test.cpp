#include <gtest/gtest.h>

#include <cstdlib>

#include "config.hpp"
#include "ovw/errors.hpp"
#include "ovw/io.hpp"
#include "ovw/text_embed.hpp"
#include "test_support.hpp"

namespace ovw::cli {
namespace {

using testing::data_path;
using testing::run_cli;
using testing::TempDir;

std::string p(const std::filesystem::path& path) { return path.string(); }

// Runs the built binary in a child process with OVW_THREADS set.
int run_binary(const std::string& threads, const std::string& args) {
  const std::string cmd = "OVW_THREADS=" + threads + " \"" + OVW_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Config, ParsesAndValidates) {
  const auto cfg = parse_config("# comment\n dim = 16\nheads=2\n\nrelabel = true\nnms_thresh=0.4\n");
  EXPECT_EQ(cfg.dim, 16u);
  EXPECT_EQ(cfg.heads, 2u);
  EXPECT_TRUE(cfg.relabel);
  EXPECT_EQ(cfg.nms_thresh, 0.4);
  EXPECT_EQ(cfg.m, 80u);
  EXPECT_THROW(parse_config("dim=15"), InputError);
  EXPECT_THROW(parse_config("dim=16\nheads=3"), InputError);
  EXPECT_THROW(parse_config("conf_thresh=1.5"), InputError);
  EXPECT_THROW(parse_config("colour=red"), InputError);
  EXPECT_THROW(parse_config("dim"), InputError);
  EXPECT_THROW(parse_config("dim=-4"), InputError);
  EXPECT_THROW(parse_config("reparam_tol=0"), InputError);
  EXPECT_THROW(parse_config("image_size=64"), InputError);
}

TEST(ModelParamsJson, RoundTrip) {
  const auto m = ModelParams::random(RunConfig{}, 4);
  const auto back = model_params_from_json(model_params_to_json(m));
  EXPECT_EQ(back.backbone_seed, 4u);
  EXPECT_EQ(back.head.levels[1].embed, m.head.levels[1].embed);
  EXPECT_THROW(model_params_from_json(nlohmann::json::object()), LoadError);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"detect", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"--help"}).code, kExitOk);
}

TEST(EncodeVocab, NounListGivesOneRowEach) {
  TempDir dir;
  write_text_file_atomic(dir / "n.json", R"(["dog", "cat", "red car"])");
  const auto r = run_cli({"encode-vocab", "--nouns", p(dir / "n.json"), "--out", p(dir / "v.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto e = text::load_embeddings(dir / "v.json");
  EXPECT_EQ(e.size(), 3u);
  EXPECT_EQ(e.dim(), 32u);
}

TEST(EncodeVocab, CaptionsGoThroughNounExtraction) {
  TempDir dir;
  const auto r = run_cli({"encode-vocab", "--captions", p(data_path("label/captions.jsonl")), "--dim", "8", "--out",
                          p(dir / "v.json")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::vector<std::string> want = {"dog running", "park", "cats", "red sofa", "man riding",
                                         "beach",       "bird", "nest", "eggs"};
  EXPECT_EQ(text::load_embeddings(dir / "v.json").nouns(), want);
}

TEST(EncodeVocab, PassThroughRenormalizes) {
  TempDir dir;
  write_text_file_atomic(dir / "raw.json", R"({"dim": 2, "entries": [{"noun": "a", "vec": [3, 4]}]})");
  const auto r = run_cli({"encode-vocab", "--embeddings", p(dir / "raw.json")});
  ASSERT_EQ(r.code, kExitOk);
  const auto e = text::embeddings_from_json(nlohmann::json::parse(r.out));
  EXPECT_DOUBLE_EQ(e.matrix()(0, 1), 0.8);
}

TEST(EncodeVocab, BadInputsExitTwo) {
  TempDir dir;
  write_text_file_atomic(dir / "bad.json", "[\"dog\", ");
  write_text_file_atomic(dir / "obj.json", "{\"dog\": 1}");
  EXPECT_EQ(run_cli({"encode-vocab", "--nouns", p(dir / "bad.json")}).code, kExitUsage);
  EXPECT_EQ(run_cli({"encode-vocab", "--nouns", p(dir / "obj.json")}).code, kExitUsage);
  EXPECT_EQ(run_cli({"encode-vocab", "--nouns", p(dir / "missing.json")}).code, kExitUsage);
  EXPECT_EQ(run_cli({"encode-vocab"}).code, kExitUsage);
}

std::vector<std::string> detect_args(const std::string& vocab) {
  return {"detect", "--config", p(data_path("detect/run.cfg")), "--vocab", vocab};
}

TEST(Detect, MatchesGoldenFile) {
  const auto r = run_cli(detect_args(p(data_path("detect/vocab.json"))));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out, read_text_file(data_path("detect/golden_detections.json")));
}

TEST(Detect, RepeatedRunsAreByteIdentical) {
  TempDir dir;
  auto a = detect_args(p(data_path("detect/vocab.json")));
  auto b = a;
  a.insert(a.end(), {"--out", p(dir / "a.json")});
  b.insert(b.end(), {"--out", p(dir / "b.json")});
  ASSERT_EQ(run_cli(a).code, kExitOk);
  ASSERT_EQ(run_cli(b).code, kExitOk);
  EXPECT_EQ(read_text_file(dir / "a.json"), read_text_file(dir / "b.json"));
}

TEST(Detect, SwappingVocabularyRowsPermutesTexts) {
  TempDir dir;
  auto vocab = read_json_file(data_path("detect/vocab.json"));
  const auto before = nlohmann::json::parse(run_cli(detect_args(p(data_path("detect/vocab.json")))).out);

  // Swap whole entries: same noun-vector pairs, so the output is unchanged.
  auto swapped = vocab;
  std::swap(swapped["entries"][0], swapped["entries"][2]);
  write_json_file(dir / "swapped.json", swapped);
  EXPECT_EQ(nlohmann::json::parse(run_cli(detect_args(p(dir / "swapped.json"))).out), before);

  // Swap only the names of two rows: texts follow the permutation, boxes and
  // scores stay put.
  auto renamed = vocab;
  std::swap(renamed["entries"][1]["noun"], renamed["entries"][2]["noun"]);
  write_json_file(dir / "renamed.json", renamed);
  const auto after = nlohmann::json::parse(run_cli(detect_args(p(dir / "renamed.json"))).out);
  const std::string n1 = vocab["entries"][1]["noun"], n2 = vocab["entries"][2]["noun"];
  ASSERT_EQ(after["detections"].size(), before["detections"].size());
  for (std::size_t i = 0; i < before["detections"].size(); ++i) {
    const auto& b = before["detections"][i];
    const auto& a = after["detections"][i];
    EXPECT_EQ(a["box"], b["box"]);
    EXPECT_EQ(a["score"], b["score"]);
    const std::string t = b["text"];
    EXPECT_EQ(a["text"].get<std::string>(), t == n1 ? n2 : t == n2 ? n1 : t);
  }
}

TEST(Detect, BadVocabularyExitsTwo) {
  TempDir dir;
  write_text_file_atomic(dir / "empty.json", R"({"dim": 32, "entries": []})");
  write_text_file_atomic(dir / "blank.json", "");
  write_text_file_atomic(dir / "narrow.json", R"({"dim": 2, "entries": [{"noun": "a", "vec": [1, 0]}]})");
  EXPECT_EQ(run_cli(detect_args(p(dir / "empty.json"))).code, kExitUsage);
  EXPECT_EQ(run_cli(detect_args(p(dir / "blank.json"))).code, kExitUsage);
  EXPECT_EQ(run_cli(detect_args(p(dir / "narrow.json"))).code, kExitUsage);
}

TEST(Detect, ImageFileInput) {
  TempDir dir;
  write_json_file(dir / "img.json", tensor_to_json(Tensor::full({96, 128, 3}, 0.5)));
  auto args = detect_args(p(data_path("detect/vocab.json")));
  args.insert(args.end(), {"--image", p(dir / "img.json"), "--image-id", "grey"});
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["image_id"], "grey");
  write_json_file(dir / "odd.json", tensor_to_json(Tensor::full({90, 128, 3}, 0.5)));
  args[args.size() - 3] = p(dir / "odd.json");
  EXPECT_EQ(run_cli(args).code, kExitUsage);
}

TEST(ReparamVerify, DefaultRunPasses) {
  const auto r = run_cli({"reparam-verify", "--vocab", p(data_path("detect/vocab.json"))});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["trials"], 100);
  EXPECT_EQ(j["tol"], 1e-6);
  EXPECT_TRUE(j["pass"].get<bool>());
}

TEST(ReparamVerify, InjectedFaultExitsOneAndNamesLayer) {
  const auto r = run_cli(
      {"reparam-verify", "--vocab", p(data_path("detect/vocab.json")), "--trials", "5", "--inject-fault", "bu5"});
  EXPECT_EQ(r.code, kExitVerificationFailed);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_FALSE(j["pass"].get<bool>());
  EXPECT_EQ(j["failing_layer"], "bu5");
}

TEST(ReparamVerify, ValidationExitsTwo) {
  const std::string v = p(data_path("detect/vocab.json"));
  EXPECT_EQ(run_cli({"reparam-verify", "--vocab", v, "--trials", "0"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"reparam-verify", "--vocab", v, "--tol", "-1"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"reparam-verify", "--vocab", v, "--inject-fault", "p6"}).code, kExitUsage);
}

TEST(ReparamVerify, ParamsFileIsUsed) {
  TempDir dir;
  ASSERT_EQ(run_cli({"init-params", "--seed", "9", "--out", p(dir / "m.json")}).code, kExitOk);
  const auto r = run_cli(
      {"reparam-verify", "--vocab", p(data_path("detect/vocab.json")), "--params", p(dir / "m.json"), "--trials", "10"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
}

std::vector<std::string> label_args(const TempDir& dir) {
  return {"label",      "--dataset", p(data_path("label/captions.jsonl")),
          "--detector", p(data_path("label/detector.json")),
          "--scorer",   p(data_path("label/scorer.json")),
          "--out",      p(dir / "ann.jsonl"),
          "--report",   p(dir / "report.json")};
}

TEST(Label, MatchesGoldenFiles) {
  TempDir dir;
  ASSERT_EQ(run_cli(label_args(dir)).code, kExitOk);
  EXPECT_EQ(read_text_file(dir / "ann.jsonl"), read_text_file(data_path("label/golden_annotations.jsonl")));
  EXPECT_EQ(read_text_file(dir / "report.json"), read_text_file(data_path("label/golden_report.json")));
}

TEST(Label, RelabelFlagMatchesRelabelGoldens) {
  TempDir dir;
  auto args = label_args(dir);
  args.push_back("--relabel");
  ASSERT_EQ(run_cli(args).code, kExitOk);
  EXPECT_EQ(read_text_file(dir / "ann.jsonl"), read_text_file(data_path("label/golden_annotations_relabel.jsonl")));
  EXPECT_EQ(read_text_file(dir / "report.json"), read_text_file(data_path("label/golden_report_relabel.json")));
}

TEST(Label, MissingFixtureKeyIsCountedNotFatal) {
  TempDir dir;
  auto det = read_json_file(data_path("label/detector.json"));
  det.erase("img5");
  write_json_file(dir / "det.json", det);
  auto args = label_args(dir);
  args[4] = p(dir / "det.json");
  ASSERT_EQ(run_cli(args).code, kExitOk);
  const auto report = read_json_file(dir / "report.json");
  EXPECT_EQ(report["images_errored"], 1);
  EXPECT_EQ(report["errors"][0]["image_id"], "img5");
  EXPECT_TRUE(report["reconciles"].get<bool>());
}

TEST(Label, RunLevelFailuresExitTwo) {
  TempDir dir;
  auto args = label_args(dir);
  args[2] = p(dir / "nope.jsonl");
  EXPECT_EQ(run_cli(args).code, kExitUsage);
  write_text_file_atomic(dir / "scorer.json", "{}");
  args = label_args(dir);
  args[6] = p(dir / "scorer.json");
  EXPECT_EQ(run_cli(args).code, kExitUsage);
}

TEST(GradCheckCmd, FullDefaultMatrixPasses) {
  const auto r = run_cli({"grad-check"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["results"].size(), 7u * 100u);
}

TEST(GradCheckCmd, SingleOpGivesOneRowPerSeed) {
  const auto r = run_cli({"grad-check", "--ops", "eq1", "--seeds", "5"});
  ASSERT_EQ(r.code, kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["results"].size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(j["results"][i]["op"], "eq1");
    EXPECT_EQ(j["results"][i]["seed"], i);
  }
}

TEST(GradCheckCmd, ValidationExitsTwo) {
  EXPECT_EQ(run_cli({"grad-check", "--eps", "1"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"grad-check", "--ops", "eq9"}).code, kExitUsage);
  EXPECT_EQ(run_cli({"grad-check", "--seeds", "0"}).code, kExitUsage);
}

TEST(Determinism, ThreadBudgetDoesNotChangeOutputs) {
  TempDir dir;
  const std::string vocab = p(data_path("detect/vocab.json"));
  const std::string detect = "detect --config \"" + p(data_path("detect/run.cfg")) + "\" --vocab \"" + vocab + "\"";
  const std::string label = "label --dataset \"" + p(data_path("label/captions.jsonl")) + "\" --detector \"" +
                            p(data_path("label/detector.json")) + "\" --scorer \"" +
                            p(data_path("label/scorer.json")) + "\"";
  for (const std::string t : {"1", "4"}) {
    ASSERT_EQ(run_binary(t, detect + " --out \"" + p(dir / ("d" + t)) + "\""), 0);
    ASSERT_EQ(run_binary(t, label + " --out \"" + p(dir / ("a" + t)) + "\" --report \"" + p(dir / ("r" + t)) + "\""),
              0);
  }
  EXPECT_EQ(read_text_file(dir / "d1"), read_text_file(dir / "d4"));
  EXPECT_EQ(read_text_file(dir / "a1"), read_text_file(dir / "a4"));
  EXPECT_EQ(read_text_file(dir / "r1"), read_text_file(dir / "r4"));
}

}  // namespace
}  // namespace ovw::cli
