#include "commands.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "config.hpp"
#include "ovw/autolabel.hpp"
#include "ovw/detect_head.hpp"
#include "ovw/errors.hpp"
#include "ovw/gradients.hpp"
#include "ovw/io.hpp"
#include "ovw/parallel.hpp"
#include "ovw/reparam.hpp"
#include "ovw/repvl_pan.hpp"
#include "ovw/text_embed.hpp"

namespace ovw::cli {
namespace {

constexpr double kMinEps = 1e-7;
constexpr double kMaxEps = 1e-3;
constexpr double kDefaultFaultSize = 1e-3;

// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text_file_atomic(path, text);
  }
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "flat key=value config file");
  sub->add_option("--seed", c.seed, "overrides the config seed");
  sub->add_option("--out", c.out, "output file (stdout when omitted)");
}

// encode-vocab -------------------------------------------------------------

struct EncodeArgs {
  Common common;
  std::string nouns, captions, embeddings;
  std::optional<std::size_t> dim;
};

std::vector<std::string> nouns_from_captions(const std::vector<label::CaptionSample>& samples) {
  std::vector<std::string> nouns;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples)
    for (auto& n : label::extract_nouns(s.caption))
      if (seen.insert(n).second) nouns.push_back(std::move(n));
  return nouns;
}

int cmd_encode_vocab(const EncodeArgs& a, std::ostream& out) {
  const int given = !a.nouns.empty() + !a.captions.empty() + !a.embeddings.empty();
  if (given != 1) throw InputError("encode-vocab needs exactly one of --nouns, --captions, --embeddings");
  RunConfig cfg = resolve_config(a.common);
  if (a.dim) {
    cfg.dim = *a.dim;
    cfg.validate();
  }

  std::optional<text::TextEmbeddings> emb;
  if (!a.embeddings.empty()) {
    emb = text::load_embeddings(a.embeddings);
  } else if (!a.captions.empty()) {
    const auto nouns = nouns_from_captions(label::load_caption_dataset(a.captions));
    if (nouns.empty()) throw InputError("no noun phrases found in " + a.captions);
    emb = text::toy_encode(nouns, cfg.dim, cfg.seed);
  } else {
    const auto j = read_json_file(a.nouns);
    if (!j.is_array()) throw LoadError(a.nouns + ": expected a JSON array of strings");
    std::vector<std::string> nouns;
    for (const auto& n : j) {
      if (!n.is_string()) throw LoadError(a.nouns + ": expected a JSON array of strings");
      nouns.push_back(n.get<std::string>());
    }
    emb = text::toy_encode(nouns, cfg.dim, cfg.seed);
  }
  emit(dump_json(text::embeddings_to_json(*emb)), a.common.out, out);
  return kExitOk;
}

// detect -------------------------------------------------------------------

struct DetectArgs {
  Common common;
  std::string image, vocab, params, image_id;
};

Tensor random_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(size * size * 3);
  for (double& v : px) v = u(gen);
  return Tensor({size, size, 3}, std::move(px));
}

ModelParams resolve_params(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return ModelParams::random(cfg, cfg.seed);
  return model_params_from_json(read_json_file(path));
}

int cmd_detect(const DetectArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  const text::TextEmbeddings vocab = text::load_embeddings(a.vocab);
  const ModelParams params = resolve_params(a.params, cfg);
  if (vocab.dim() != params.fusion.dim) {
    throw DimensionError("vocabulary dim " + std::to_string(vocab.dim()) + " vs model dim " +
                         std::to_string(params.fusion.dim));
  }
  const Tensor image = a.image.empty() ? random_image(cfg.image_size, cfg.seed)
                                       : tensor_from_json(read_json_file(a.image));

  const pan::FeaturePyramid pyramid = pan::toy_backbone(image, params.fusion.dim, params.backbone_seed);
  const pan::PanOutput fused = pan::repvlpan_forward(pyramid, vocab.matrix(), params.fusion);
  const head::HeadOutput ho = head::head_forward(fused.pyramid, params.head);
  const head::SimilarityMatrix sim =
      head::contrastive_similarity(ho.embeddings, fused.text, params.head.alpha, params.head.beta);

  // One candidate per anchor: its best-matching text, scored by sigmoid.
  std::vector<head::Detection> candidates;
  for (std::size_t k = 0; k < sim.values.rows(); ++k) {
    const auto row = sim.values.row(k);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double score = sigmoid(row[best]);
    const Box box = Box::from_span(ho.boxes.row(k));
    if (score > cfg.score_thresh && box.well_formed()) candidates.push_back({box, best, score});
  }
  auto kept = head::nms(candidates, cfg.nms_thresh);
  if (kept.size() > cfg.max_det) kept.resize(cfg.max_det);

  nlohmann::json dets = nlohmann::json::array();
  for (std::size_t i : kept) {
    const auto& d = candidates[i];
    dets.push_back({{"box", d.box.as_array()}, {"text", vocab.nouns()[d.text_id]}, {"score", d.score}});
  }
  const std::string id = a.image_id.empty() ? (a.image.empty() ? "seed-" + std::to_string(cfg.seed) : a.image)
                                            : a.image_id;
  emit(dump_json({{"image_id", id}, {"detections", dets}}), a.common.out, out);
  return kExitOk;
}

// reparam-verify -----------------------------------------------------------

struct VerifyArgs {
  Common common;
  std::string vocab, params, inject_fault;
  std::optional<std::size_t> trials;
  std::optional<double> tol;
  double fault_size = kDefaultFaultSize;
};

// Perturbs one weight of the deployed path so the check has something to find.
reparam::ReparamBundle corrupt(reparam::ReparamBundle b, pan::Site site, double delta) {
  auto bump = [delta](const Tensor& t) {
    std::vector<double> v(t.values());
    v[0] += delta;
    return Tensor(t.shape(), std::move(v));
  };
  const auto i = static_cast<std::size_t>(site);
  if (i < 2) {
    b.top_down[i] = reparam::FoldedConv{bump(b.top_down[i].kernel)};
  } else {
    b.bottom_up_guides[i - 2] = bump(b.bottom_up_guides[i - 2]);
  }
  return b;
}

int cmd_reparam_verify(const VerifyArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  reparam::EquivalenceOptions opts;
  opts.trials = a.trials.value_or(cfg.trials);
  opts.tol = a.tol.value_or(cfg.reparam_tol);
  opts.seed = cfg.seed;
  opts.threads = thread_budget();
  if (opts.trials == 0) throw InputError("--trials must be >= 1");
  if (!(opts.tol > 0.0)) throw InputError("--tol must be positive");

  const text::TextEmbeddings vocab = text::load_embeddings(a.vocab);
  const ModelParams params = resolve_params(a.params, cfg);
  if (vocab.dim() != params.fusion.dim) {
    throw DimensionError("vocabulary dim " + std::to_string(vocab.dim()) + " vs model dim " +
                         std::to_string(params.fusion.dim));
  }
  std::optional<reparam::ReparamBundle> bundle;
  if (!a.inject_fault.empty()) {
    const auto site = pan::site_from_name(a.inject_fault);
    if (!site) throw InputError("--inject-fault: unknown site \"" + a.inject_fault + "\" (td4, td3, bu4, bu5)");
    bundle = corrupt(reparam::build_bundle(params.fusion, vocab.matrix()), *site, a.fault_size);
  }
  const auto report = reparam::verify_equivalence(params.fusion, vocab.matrix(), opts, bundle);
  const std::string text = dump_json(reparam::report_to_json(report));
  out << text;
  if (!a.common.out.empty()) write_text_file_atomic(a.common.out, text);
  return report.passed() ? kExitOk : kExitVerificationFailed;
}

// label --------------------------------------------------------------------

struct LabelArgs {
  Common common;
  std::string dataset, detector, scorer, report;
  bool relabel = false;
};

int cmd_label(const LabelArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  label::PipelineConfig pc;
  pc.nms_thresh = cfg.nms_thresh;
  pc.conf_thresh = cfg.conf_thresh;
  pc.img_thresh = cfg.img_thresh;
  pc.relabel = cfg.relabel || a.relabel;
  pc.box_accurate = cfg.box_accurate;
  pc.seed = cfg.seed;
  pc.threads = thread_budget();
  pc.validate();

  const auto dataset = label::load_caption_dataset(a.dataset);
  const label::FixtureDetector detector(read_json_file(a.detector));
  const label::FixtureScorer scorer(read_json_file(a.scorer));
  const auto result = label::run_pipeline(dataset, detector, scorer, pc);

  emit(label::annotations_to_jsonl(result.images), a.common.out, out);
  const std::string report = dump_json(label::report_to_json(result.report));
  if (a.report.empty()) {
    out << report;
  } else {
    write_text_file_atomic(a.report, report);
  }
  return kExitOk;
}

// grad-check ---------------------------------------------------------------

struct GradArgs {
  Common common;
  std::vector<std::string> ops;
  std::size_t seeds = 100;
  double eps = 1e-5;
};

int cmd_grad_check(const GradArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.common);
  if (!(a.eps >= kMinEps && a.eps <= kMaxEps)) {
    throw InputError("--eps must lie in [1e-7, 1e-3]");
  }
  if (a.seeds == 0) throw InputError("--seeds must be >= 1");
  const auto& registered = loss::registered_gradient_ops();
  std::vector<std::string> ops = a.ops.empty() ? registered : a.ops;
  for (const auto& op : ops) {
    if (std::find(registered.begin(), registered.end(), op) == registered.end()) {
      throw InputError("unknown gradient op \"" + op + "\"");
    }
  }

  std::vector<loss::GradCheckResult> results(ops.size() * a.seeds);
  parallel_for(results.size(), thread_budget(), [&](std::size_t i) {
    results[i] = loss::grad_check(ops[i / a.seeds], cfg.seed + i % a.seeds, a.eps);
  });

  bool all_pass = true;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    const bool pass = r.max_rel_error < loss::kGradCheckTolerance;
    all_pass = all_pass && pass;
    rows.push_back({{"op", r.op},
                    {"seed", r.seed},
                    {"components", r.components},
                    {"max_rel_error", r.max_rel_error},
                    {"pass", pass}});
  }
  const nlohmann::json report = {
      {"eps", a.eps}, {"tolerance", loss::kGradCheckTolerance}, {"results", rows}, {"pass", all_pass}};
  emit(dump_json(report), a.common.out, out);
  return all_pass ? kExitOk : kExitVerificationFailed;
}

// init-params --------------------------------------------------------------

int cmd_init_params(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve_config(c);
  emit(dump_json(model_params_to_json(ModelParams::random(cfg, cfg.seed))), c.out, out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Open-vocabulary detection toolkit"};
  app.require_subcommand(1);

  EncodeArgs enc;
  auto* s_enc = app.add_subcommand("encode-vocab", "encode nouns or captions into an offline vocabulary");
  add_common(s_enc, enc.common);
  s_enc->add_option("--nouns", enc.nouns, "JSON array of nouns");
  s_enc->add_option("--captions", enc.captions, "JSONL caption dataset");
  s_enc->add_option("--embeddings", enc.embeddings, "existing embeddings file to normalize and copy");
  s_enc->add_option("--dim", enc.dim, "embedding dim (overrides config)");

  DetectArgs det;
  auto* s_det = app.add_subcommand("detect", "run the offline-vocabulary detector on one image");
  add_common(s_det, det.common);
  s_det->add_option("--image", det.image, "[H x W x 3] tensor JSON; random image from --seed if omitted");
  s_det->add_option("--vocab", det.vocab, "embeddings file")->required();
  s_det->add_option("--params", det.params, "model params JSON; random from --seed if omitted");
  s_det->add_option("--image-id", det.image_id, "id written to the output");

  VerifyArgs ver;
  auto* s_ver = app.add_subcommand("reparam-verify", "check the folded deployment path against the fusion path");
  add_common(s_ver, ver.common);
  s_ver->add_option("--vocab", ver.vocab, "embeddings file")->required();
  s_ver->add_option("--params", ver.params, "model params JSON; random from --seed if omitted");
  s_ver->add_option("--trials", ver.trials, "number of random pyramids");
  s_ver->add_option("--tol", ver.tol, "relative tolerance");
  s_ver->add_option("--inject-fault", ver.inject_fault, "corrupt one folded site (td4, td3, bu4, bu5)");
  s_ver->add_option("--fault-size", ver.fault_size, "size of the injected perturbation");

  LabelArgs lab;
  auto* s_lab = app.add_subcommand("label", "pseudo-label a caption dataset");
  add_common(s_lab, lab.common);
  s_lab->add_option("--dataset", lab.dataset, "JSONL caption dataset")->required();
  s_lab->add_option("--detector", lab.detector, "detector fixture JSON")->required();
  s_lab->add_option("--scorer", lab.scorer, "scorer fixture JSON")->required();
  s_lab->add_option("--report", lab.report, "report file (stdout when omitted)");
  s_lab->add_flag("--relabel", lab.relabel, "replace region texts by the scorer's best noun");

  GradArgs grad;
  auto* s_grad = app.add_subcommand("grad-check", "finite-difference check of analytic gradients");
  add_common(s_grad, grad.common);
  s_grad->add_option("--ops", grad.ops, "ops to check (default: all registered)")->delimiter(',');
  s_grad->add_option("--seeds", grad.seeds, "instances per op, starting at --seed");
  s_grad->add_option("--eps", grad.eps, "central difference step");

  Common init;
  auto* s_init = app.add_subcommand("init-params", "write seeded random model params");
  add_common(s_init, init);

  std::vector<char*> argv;
  std::vector<std::string> owned(args.begin(), args.end());
  if (owned.empty()) owned.emplace_back("ovw");
  for (auto& a : owned) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ovw: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (s_enc->parsed()) return cmd_encode_vocab(enc, out);
    if (s_det->parsed()) return cmd_detect(det, out);
    if (s_ver->parsed()) return cmd_reparam_verify(ver, out);
    if (s_lab->parsed()) return cmd_label(lab, out);
    if (s_grad->parsed()) return cmd_grad_check(grad, out);
    if (s_init->parsed()) return cmd_init_params(init, out);
  } catch (const std::exception& e) {
    err << "ovw: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ovw::cli
