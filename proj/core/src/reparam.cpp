#include "ovw/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ovw/errors.hpp"
#include "ovw/parallel.hpp"

namespace ovw::reparam {
namespace {

constexpr std::array<pan::Site, 2> kTopDownSites = {pan::Site::kTopDown4, pan::Site::kTopDown3};
constexpr std::array<pan::Site, 2> kBottomUpSites = {pan::Site::kBottomUp4, pan::Site::kBottomUp5};

Tensor attention_via_conv(const Tensor& branch, const FoldedConv& folded) {
  return reparam_tcsp_forward(branch, folded);
}

pan::FeaturePyramid random_pyramid(std::size_t dim, std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> extent(3, 5);
  const std::size_t h5 = extent(gen), w5 = extent(gen);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::array<Tensor, pan::kLevelCount> levels;
  for (std::size_t l = 0; l < pan::kLevelCount; ++l) {
    const std::size_t f = std::size_t{1} << (2 - l);
    std::vector<double> d(h5 * f * w5 * f * dim);
    for (double& v : d) v = u(gen);
    levels[l] = Tensor({h5 * f, w5 * f, dim}, std::move(d));
  }
  return pan::FeaturePyramid(std::move(levels));
}

void accumulate(CheckStats& stats, const Tensor& got, const Tensor& want) {
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double a = got.data()[i], b = want.data()[i];
    stats.max_abs = std::max(stats.max_abs, std::abs(a - b));
    stats.max_rel = std::max(stats.max_rel, relative_deviation(a, b));
  }
}

void merge(CheckStats& into, const CheckStats& from) {
  into.max_abs = std::max(into.max_abs, from.max_abs);
  into.max_rel = std::max(into.max_rel, from.max_rel);
  into.passed = into.passed && from.passed;
}

nlohmann::json stats_json(const CheckStats& s) {
  return {{"max_abs", s.max_abs}, {"max_rel", s.max_rel}, {"pass", s.passed}};
}

}  // namespace

FoldedConv fold_tcsp(const Tensor& text) {
  if (text.rank() != 2) throw DimensionError("fold_tcsp: expected [C x D], got " + shape_string(text.shape()));
  return {text.reshaped({text.extent(0), text.extent(1), 1, 1})};
}

FoldedConv fold_tcsp(const text::TextEmbeddings& emb) { return fold_tcsp(emb.matrix()); }

Tensor unfold(const FoldedConv& folded) {
  return folded.kernel.reshaped({folded.out_channels(), folded.in_channels()});
}

Tensor to_chw(const Tensor& hwc) {
  if (hwc.rank() != 3) throw DimensionError("to_chw: expected rank 3, got " + shape_string(hwc.shape()));
  const std::size_t h = hwc.extent(0), w = hwc.extent(1), d = hwc.extent(2);
  std::vector<double> out(hwc.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < d; ++c) out[(c * h + y) * w + x] = hwc(y, x, c);
  return Tensor({d, h, w}, std::move(out));
}

Tensor to_hwc(const Tensor& chw) {
  if (chw.rank() != 3) throw DimensionError("to_hwc: expected rank 3, got " + shape_string(chw.shape()));
  const std::size_t d = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
  std::vector<double> out(chw.size());
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(y * w + x) * d + c] = chw(c, y, x);
  return Tensor({h, w, d}, std::move(out));
}

Tensor conv1x1(const Tensor& chw, const FoldedConv& folded) {
  const std::size_t d = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
  if (folded.in_channels() != d) {
    throw DimensionError("conv1x1: kernel expects " + std::to_string(folded.in_channels()) + " channels, map has " +
                         std::to_string(d));
  }
  const std::size_t oc = folded.out_channels(), plane = h * w;
  const auto k = folded.kernel.data();
  const auto in = chw.data();
  std::vector<double> out(oc * plane, 0.0);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t c = 0; c < d; ++c) {
      const double weight = k[o * d + c];
      for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += weight * in[c * plane + p];
    }
  return Tensor({oc, h, w}, std::move(out));
}

Tensor reparam_tcsp_forward(const Tensor& x, const FoldedConv& folded) {
  const Tensor chw = to_chw(x);
  const Tensor response = conv1x1(chw, folded);
  const std::size_t d = chw.extent(0), plane = chw.extent(1) * chw.extent(2);
  std::vector<double> gate(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    double m = response.data()[p];
    for (std::size_t o = 1; o < folded.out_channels(); ++o) m = std::max(m, response.data()[o * plane + p]);
    gate[p] = sigmoid(m);
  }
  std::vector<double> out(chw.values());
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] *= gate[p];
  return to_hwc(Tensor(chw.shape(), std::move(out)));
}

Tensor pool_tokens(const pan::FeaturePyramid& pyramid) {
  constexpr std::size_t g = pan::kPoolGrid;
  const std::size_t d = pyramid.dim();
  std::vector<double> out(pan::kPooledTokens * d);
  for (std::size_t l = 0; l < pan::kLevelCount; ++l) {
    const Tensor chw = to_chw(pyramid.level(l));
    const std::size_t h = chw.extent(1), w = chw.extent(2);
    if (h < g || w < g) {
      throw DimensionError("pool_tokens: level " + std::to_string(l + 3) + " is smaller than " + std::to_string(g) +
                           "x" + std::to_string(g));
    }
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t cy = 0; cy < g; ++cy) {
        const CellRange ry = grid_cell_range(h, g, cy);
        for (std::size_t cx = 0; cx < g; ++cx) {
          const CellRange rx = grid_cell_range(w, g, cx);
          double m = chw(c, ry.begin, rx.begin);
          for (std::size_t y = ry.begin; y < ry.end; ++y)
            for (std::size_t x = rx.begin; x < rx.end; ++x) m = std::max(m, chw(c, y, x));
          out[(l * g * g + cy * g + cx) * d + c] = m;
        }
      }
  }
  return Tensor({pan::kPooledTokens, d}, std::move(out));
}

Tensor reparam_text_update(const Tensor& text, const Tensor& tokens) {
  if (text.rank() != 2 || tokens.rank() != 2 || text.cols() != tokens.cols()) {
    throw DimensionError("reparam_text_update: " + shape_string(text.shape()) + " vs " +
                         shape_string(tokens.shape()));
  }
  const Tensor weights = softmax_lastdim(matmul_transposed(text, tokens));
  return add(text, hadamard(matmul(weights, tokens), text));
}

ReparamBundle build_bundle(const pan::FusionParams& params, const Tensor& text) {
  params.validate();
  if (text.rank() != 2 || text.cols() != params.dim) {
    throw DimensionError("build_bundle: text " + shape_string(text.shape()) + " does not have dim " +
                         std::to_string(params.dim));
  }
  ReparamBundle b;
  for (std::size_t i = 0; i < 2; ++i) {
    b.top_down[i] = fold_tcsp(pan::guided_text(text, params.layer(kTopDownSites[i])));
    b.bottom_up_guides[i] = params.layer(kBottomUpSites[i]).text_guide;
  }
  b.text = text;
  return b;
}

pan::PanOutput reparam_forward(const pan::FeaturePyramid& in, const ReparamBundle& bundle,
                               const pan::FusionParams& params, pan::PanTrace* trace) {
  auto run = [&](pan::Site site, const Tensor& x, const FoldedConv& folded) {
    const auto i = static_cast<std::size_t>(site);
    const pan::TCspParams& layer = params.layer(site);
    const Tensor branch = pan::bottleneck_branch(x, layer);
    Tensor y = pan::cross_stage_merge(attention_via_conv(branch, folded), x, layer);
    if (trace) {
      trace->layer_inputs[i] = x;
      trace->attention_inputs[i] = branch;
      trace->guided_texts[i] = unfold(folded);
      trace->layer_outputs[i] = y;
    }
    return y;
  };

  const Tensor& c3 = in.level(0);
  const Tensor& c4 = in.level(1);
  const Tensor& c5 = in.level(2);
  const Tensor n4 = run(pan::Site::kTopDown4, add(c4, pan::upsample2x(c5)), bundle.top_down[0]);
  const Tensor p3 = run(pan::Site::kTopDown3, add(c3, pan::upsample2x(n4)), bundle.top_down[1]);

  const Tensor tokens = pool_tokens(pan::FeaturePyramid({p3, n4, c5}));
  if (trace) trace->tokens = tokens;
  Tensor updated = pan::attend_text(bundle.text, tokens, params.attention);

  Tensor p4 = run(pan::Site::kBottomUp4, add(n4, pan::downsample2x(p3)),
                  fold_tcsp(matmul(updated, bundle.bottom_up_guides[0])));
  Tensor p5 = run(pan::Site::kBottomUp5, add(c5, pan::downsample2x(p4)),
                  fold_tcsp(matmul(updated, bundle.bottom_up_guides[1])));
  return {pan::FeaturePyramid({p3, std::move(p4), std::move(p5)}), std::move(updated)};
}

bool EquivalenceReport::passed() const {
  return tokens.passed && std::all_of(tcsp.begin(), tcsp.end(), [](const CheckStats& s) { return s.passed; });
}

double relative_deviation(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

EquivalenceReport verify_equivalence(const pan::FusionParams& params, const Tensor& text,
                                     const EquivalenceOptions& opts, const std::optional<ReparamBundle>& bundle) {
  if (opts.trials == 0) throw InputError("verify_equivalence: trials must be >= 1");
  if (!(opts.tol > 0.0)) throw InputError("verify_equivalence: tol must be positive");
  params.validate();
  const ReparamBundle folded = bundle ? *bundle : build_bundle(params, text);

  struct TrialResult {
    std::array<CheckStats, pan::kSiteCount> tcsp;
    CheckStats tokens;
    CheckStats gap;
  };
  std::vector<TrialResult> results(opts.trials);
  parallel_for(opts.trials, opts.threads, [&](std::size_t t) {
    std::mt19937_64 gen(opts.seed * 0x9e3779b97f4a7c15ULL + t);
    const pan::FeaturePyramid pyramid = random_pyramid(params.dim, gen);
    pan::PanTrace reference, deployed;
    pan::repvlpan_forward(pyramid, text, params, &reference);
    reparam_forward(pyramid, folded, params, &deployed);

    TrialResult& r = results[t];
    for (std::size_t s = 0; s < pan::kSiteCount; ++s) {
      accumulate(r.tcsp[s], deployed.layer_outputs[s], reference.layer_outputs[s]);
      r.tcsp[s].passed = r.tcsp[s].max_rel <= opts.tol;
    }

    const auto& outs = reference.layer_outputs;
    const pan::FeaturePyramid mid({outs[static_cast<std::size_t>(pan::Site::kTopDown3)],
                                   outs[static_cast<std::size_t>(pan::Site::kTopDown4)], pyramid.level(2)});
    const Tensor tokens = pool_tokens(mid);
    accumulate(r.tokens, tokens, reference.tokens);
    r.tokens.passed = tokens == reference.tokens;

    accumulate(r.gap, reparam_text_update(text, reference.tokens),
               pan::attend_text(text, reference.tokens, params.attention));
  });

  EquivalenceReport report;
  report.trials = opts.trials;
  report.tol = opts.tol;
  for (const TrialResult& r : results) {
    for (std::size_t s = 0; s < pan::kSiteCount; ++s) merge(report.tcsp[s], r.tcsp[s]);
    merge(report.tokens, r.tokens);
    merge(report.text_update_gap, r.gap);
  }
  for (std::size_t s = 0; s < pan::kSiteCount; ++s) {
    if (!report.tcsp[s].passed) {
      report.failing_layer = std::string(pan::site_name(static_cast<pan::Site>(s)));
      break;
    }
  }
  return report;
}

nlohmann::json report_to_json(const EquivalenceReport& report) {
  nlohmann::json layers = nlohmann::json::object();
  for (std::size_t s = 0; s < pan::kSiteCount; ++s) {
    layers[std::string(pan::site_name(static_cast<pan::Site>(s)))] = stats_json(report.tcsp[s]);
  }
  nlohmann::json j = {
      {"trials", report.trials},
      {"tol", report.tol},
      {"checks",
       {{"tcsp_equivalence", layers},
        {"pooled_tokens", stats_json(report.tokens)},
        {"text_update_gap", {{"max_abs", report.text_update_gap.max_abs}, {"max_rel", report.text_update_gap.max_rel}}}}},
      {"pass", report.passed()}};
  j["failing_layer"] = report.failing_layer ? nlohmann::json(*report.failing_layer) : nlohmann::json(nullptr);
  return j;
}

}  // namespace ovw::reparam
