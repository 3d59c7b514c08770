#include "ovw/repvl_pan.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ovw/errors.hpp"
#include "ovw/io.hpp"

namespace ovw::pan {
namespace {

constexpr std::array<std::string_view, kSiteCount> kSiteNames = {"td4", "td3", "bu4", "bu5"};

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected) {
    throw DimensionError(what + ": expected " + shape_string(expected) + ", got " + shape_string(t.shape()));
  }
}

// [H x W x D] -> [H*W x D] and back.
Tensor flatten_spatial(const Tensor& x) { return x.reshaped({x.extent(0) * x.extent(1), x.extent(2)}); }
Tensor unflatten_spatial(const Tensor& m, std::size_t h, std::size_t w) { return m.reshaped({h, w, m.cols()}); }

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> d(rows * cols);
  for (double& v : d) v = u(gen);
  return Tensor({rows, cols}, std::move(d));
}

Tensor truncating_identity(std::size_t rows, std::size_t cols) {
  std::vector<double> d(rows * cols, 0.0);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) d[i * cols + i] = 1.0;
  return Tensor({rows, cols}, std::move(d));
}

void require_spatial(const Tensor& x, const char* what) {
  if (x.rank() != 3) throw DimensionError(std::string(what) + ": expected [H x W x D], got " + shape_string(x.shape()));
}

}  // namespace

FeaturePyramid::FeaturePyramid(std::array<Tensor, kLevelCount> levels) : levels_(std::move(levels)) {
  for (const Tensor& l : levels_) {
    if (l.rank() != 3) throw DimensionError("pyramid level must be [H x W x D], got " + shape_string(l.shape()));
  }
  const std::size_t d = levels_[0].extent(2);
  for (std::size_t i = 1; i < kLevelCount; ++i) {
    const Tensor& prev = levels_[i - 1];
    const Tensor& cur = levels_[i];
    if (cur.extent(2) != d) throw DimensionError("pyramid levels disagree on channel dim");
    if (prev.extent(0) != 2 * cur.extent(0) || prev.extent(1) != 2 * cur.extent(1)) {
      throw DimensionError("pyramid level " + std::to_string(i + 3) + " " + shape_string(cur.shape()) +
                           " is not half of " + shape_string(prev.shape()));
    }
  }
}

std::string_view site_name(Site site) { return kSiteNames[static_cast<std::size_t>(site)]; }

std::optional<Site> site_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSiteCount; ++i)
    if (kSiteNames[i] == name) return static_cast<Site>(i);
  return std::nullopt;
}

void FusionParams::validate() const {
  if (dim == 0 || dim % 2 != 0) throw DimensionError("fusion dim must be even, got " + std::to_string(dim));
  if (attention.heads == 0 || dim % attention.heads != 0) {
    throw DimensionError("head count " + std::to_string(attention.heads) + " does not divide dim " +
                         std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    const std::string name(kSiteNames[i]);
    require_shape(layers[i].bottleneck, {half, half}, name + ".bottleneck");
    require_shape(layers[i].text_guide, {dim, half}, name + ".text_guide");
    require_shape(layers[i].mix, {dim, dim}, name + ".mix");
  }
  require_shape(attention.query, {dim, dim}, "attention.query");
  require_shape(attention.key, {dim, dim}, "attention.key");
  require_shape(attention.value, {dim, dim}, "attention.value");
  require_shape(attention.output, {dim, dim}, "attention.output");
}

FusionParams FusionParams::identity(std::size_t dim, std::size_t heads) {
  if (dim == 0 || dim % 2 != 0) throw DimensionError("fusion dim must be even, got " + std::to_string(dim));
  FusionParams p;
  p.dim = dim;
  for (auto& l : p.layers) {
    l.bottleneck = Tensor::identity(dim / 2);
    l.text_guide = truncating_identity(dim, dim / 2);
    l.mix = Tensor::identity(dim);
  }
  p.attention = {heads, Tensor::identity(dim), Tensor::identity(dim), Tensor::identity(dim), Tensor::identity(dim)};
  p.validate();
  return p;
}

FusionParams FusionParams::random(std::size_t dim, std::size_t heads, std::uint64_t seed) {
  if (dim == 0 || dim % 2 != 0) throw DimensionError("fusion dim must be even, got " + std::to_string(dim));
  std::mt19937_64 gen(seed);
  FusionParams p;
  p.dim = dim;
  for (auto& l : p.layers) {
    l.bottleneck = random_matrix(dim / 2, dim / 2, gen);
    l.text_guide = random_matrix(dim, dim / 2, gen);
    l.mix = random_matrix(dim, dim, gen);
  }
  p.attention.heads = heads;
  p.attention.query = random_matrix(dim, dim, gen);
  p.attention.key = random_matrix(dim, dim, gen);
  p.attention.value = random_matrix(dim, dim, gen);
  p.attention.output = random_matrix(dim, dim, gen);
  p.validate();
  return p;
}

nlohmann::json fusion_params_to_json(const FusionParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    layers.push_back({{"site", kSiteNames[i]},
                      {"bottleneck", tensor_to_json(p.layers[i].bottleneck)},
                      {"text_guide", tensor_to_json(p.layers[i].text_guide)},
                      {"mix", tensor_to_json(p.layers[i].mix)}});
  }
  return {{"dim", p.dim},
          {"layers", layers},
          {"attention",
           {{"heads", p.attention.heads},
            {"query", tensor_to_json(p.attention.query)},
            {"key", tensor_to_json(p.attention.key)},
            {"value", tensor_to_json(p.attention.value)},
            {"output", tensor_to_json(p.attention.output)}}}};
}

FusionParams fusion_params_from_json(const nlohmann::json& j) {
  try {
    FusionParams p;
    p.dim = j.at("dim").get<std::size_t>();
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != kSiteCount) throw LoadError("fusion params need 4 layers");
    std::array<bool, kSiteCount> seen{};
    for (const auto& l : layers) {
      const auto site = site_from_name(l.at("site").get<std::string>());
      if (!site) throw LoadError("unknown T-CSPLayer site " + l.at("site").dump());
      const auto idx = static_cast<std::size_t>(*site);
      if (seen[idx]) throw LoadError("duplicate T-CSPLayer site " + l.at("site").dump());
      seen[idx] = true;
      p.layers[idx] = {tensor_from_json(l.at("bottleneck")), tensor_from_json(l.at("text_guide")),
                       tensor_from_json(l.at("mix"))};
    }
    const auto& a = j.at("attention");
    p.attention = {a.at("heads").get<std::size_t>(), tensor_from_json(a.at("query")), tensor_from_json(a.at("key")),
                   tensor_from_json(a.at("value")), tensor_from_json(a.at("output"))};
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("fusion params: ") + e.what());
  } catch (const DimensionError& e) {
    throw LoadError(std::string("fusion params: ") + e.what());
  }
}

FeaturePyramid toy_backbone(const Tensor& image, std::size_t dim, std::uint64_t seed) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw DimensionError("toy_backbone: expected [H x W x 3] image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.extent(0), w = image.extent(1);
  if (h % 32 != 0 || w % 32 != 0) {
    throw DimensionError("toy_backbone: image extents " + shape_string(image.shape()) + " not divisible by 32");
  }
  if (dim == 0) throw DimensionError("toy_backbone: dim must be positive");
  constexpr std::size_t kDescriptor = 12;
  std::mt19937_64 gen(seed);
  std::array<Tensor, kLevelCount> levels;
  for (std::size_t l = 0; l < kLevelCount; ++l) {
    const Tensor proj = random_matrix(kDescriptor, dim, gen);
    const std::size_t s = kStrides[l], half = s / 2;
    const std::size_t gh = h / s, gw = w / s;
    std::vector<double> desc(gh * gw * kDescriptor, 0.0);
    const double inv = 1.0 / static_cast<double>(half * half);
    for (std::size_t cy = 0; cy < gh; ++cy) {
      for (std::size_t cx = 0; cx < gw; ++cx) {
        double* out = &desc[(cy * gw + cx) * kDescriptor];
        for (std::size_t q = 0; q < 4; ++q) {
          const std::size_t y0 = cy * s + (q / 2) * half, x0 = cx * s + (q % 2) * half;
          for (std::size_t y = y0; y < y0 + half; ++y)
            for (std::size_t x = x0; x < x0 + half; ++x)
              for (std::size_t c = 0; c < 3; ++c) out[q * 3 + c] += image(y, x, c) * inv;
        }
      }
    }
    levels[l] = unflatten_spatial(matmul(Tensor({gh * gw, kDescriptor}, std::move(desc)), proj), gh, gw);
  }
  return FeaturePyramid(std::move(levels));
}

Tensor max_sigmoid_gate(const Tensor& x, const Tensor& text) {
  require_spatial(x, "max_sigmoid_attention");
  if (text.rank() != 2) throw InputError("max_sigmoid_attention: text must be a [C x D] matrix");
  if (text.cols() != x.extent(2)) {
    throw DimensionError("max_sigmoid_attention: text dim " + std::to_string(text.cols()) +
                         " vs feature dim " + std::to_string(x.extent(2)));
  }
  const Tensor logits = matmul_transposed(flatten_spatial(x), text);
  std::vector<double> gate(logits.rows());
  for (std::size_t p = 0; p < gate.size(); ++p) {
    const auto r = logits.row(p);
    gate[p] = sigmoid(*std::max_element(r.begin(), r.end()));
  }
  return Tensor({x.extent(0), x.extent(1)}, std::move(gate));
}

Tensor max_sigmoid_attention(const Tensor& x, const Tensor& text) {
  const Tensor gate = max_sigmoid_gate(x, text);
  const std::size_t d = x.extent(2);
  std::vector<double> out(x.values());
  for (std::size_t p = 0; p < gate.size(); ++p)
    for (std::size_t c = 0; c < d; ++c) out[p * d + c] *= gate.data()[p];
  return Tensor(x.shape(), std::move(out));
}

Tensor guided_text(const Tensor& text, const TCspParams& layer) { return matmul(text, layer.text_guide); }

Tensor bottleneck_branch(const Tensor& x, const TCspParams& layer) {
  require_spatial(x, "t_csplayer");
  const std::size_t d = x.extent(2);
  if (d % 2 != 0) throw DimensionError("t_csplayer: channel dim must be even, got " + std::to_string(d));
  const Tensor x1 = slice_last(flatten_spatial(x), 0, d / 2);
  return unflatten_spatial(matmul(x1, layer.bottleneck), x.extent(0), x.extent(1));
}

Tensor cross_stage_merge(const Tensor& attended, const Tensor& x, const TCspParams& layer) {
  const std::size_t d = x.extent(2);
  const Tensor x2 = slice_last(flatten_spatial(x), d / 2, d);
  const Tensor joined = concat_last(flatten_spatial(attended), x2);
  return unflatten_spatial(matmul(joined, layer.mix), x.extent(0), x.extent(1));
}

Tensor t_csplayer(const Tensor& x, const Tensor& text, const TCspParams& layer) {
  const Tensor branch = bottleneck_branch(x, layer);
  return cross_stage_merge(max_sigmoid_attention(branch, guided_text(text, layer)), x, layer);
}

Tensor pooled_tokens(const FeaturePyramid& pyramid) {
  std::array<Tensor, kLevelCount> parts;
  for (std::size_t l = 0; l < kLevelCount; ++l) parts[l] = max_pool_grid(pyramid.level(l), kPoolGrid);
  return concat_rows(parts);
}

Tensor attend_text(const Tensor& text, const Tensor& tokens, const AttentionParams& p) {
  const std::size_t d = text.cols();
  if (tokens.cols() != d) throw DimensionError("attend_text: token dim differs from text dim");
  if (p.heads == 0 || d % p.heads != 0) throw DimensionError("attend_text: heads must divide dim");
  const Tensor q = matmul(text, p.query);
  const Tensor k = matmul(tokens, p.key);
  const Tensor v = matmul(tokens, p.value);
  const std::size_t dh = d / p.heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t c = text.rows();
  std::vector<double> merged(c * d, 0.0);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = slice_last(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_last(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_last(v, h * dh, (h + 1) * dh);
    const Tensor weights = softmax_lastdim(scale(matmul_transposed(qh, kh), scale_factor));
    const Tensor oh = matmul(weights, vh);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < dh; ++j) merged[i * d + h * dh + j] = oh(i, j);
  }
  return add(text, matmul(Tensor({c, d}, std::move(merged)), p.output));
}

Tensor image_pooling_attention(const Tensor& text, const FeaturePyramid& pyramid, const AttentionParams& p) {
  return attend_text(text, pooled_tokens(pyramid), p);
}

Tensor upsample2x(const Tensor& x) {
  require_spatial(x, "upsample2x");
  const std::size_t h = x.extent(0), w = x.extent(1), d = x.extent(2);
  std::vector<double> out(4 * h * w * d);
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t xx = 0; xx < 2 * w; ++xx)
      for (std::size_t c = 0; c < d; ++c) out[(y * 2 * w + xx) * d + c] = x(y / 2, xx / 2, c);
  return Tensor({2 * h, 2 * w, d}, std::move(out));
}

Tensor downsample2x(const Tensor& x) {
  require_spatial(x, "downsample2x");
  const std::size_t h = x.extent(0), w = x.extent(1), d = x.extent(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("downsample2x: odd extents " + shape_string(x.shape()));
  std::vector<double> out(h / 2 * w / 2 * d);
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t xx = 0; xx < w / 2; ++xx)
      for (std::size_t c = 0; c < d; ++c) {
        out[(y * (w / 2) + xx) * d + c] = std::max(std::max(x(2 * y, 2 * xx, c), x(2 * y, 2 * xx + 1, c)),
                                                   std::max(x(2 * y + 1, 2 * xx, c), x(2 * y + 1, 2 * xx + 1, c)));
      }
  return Tensor({h / 2, w / 2, d}, std::move(out));
}

PanOutput repvlpan_forward(const FeaturePyramid& in, const Tensor& text, const FusionParams& params,
                           PanTrace* trace) {
  params.validate();
  if (in.dim() != params.dim) {
    throw DimensionError("pyramid dim " + std::to_string(in.dim()) + " vs params dim " + std::to_string(params.dim));
  }
  if (text.rank() != 2 || text.cols() != params.dim) {
    throw DimensionError("text matrix " + shape_string(text.shape()) + " does not have dim " +
                         std::to_string(params.dim));
  }

  auto run = [&](Site site, const Tensor& x, const Tensor& w) {
    const auto i = static_cast<std::size_t>(site);
    const TCspParams& layer = params.layer(site);
    const Tensor guide = guided_text(w, layer);
    const Tensor branch = bottleneck_branch(x, layer);
    Tensor y = cross_stage_merge(max_sigmoid_attention(branch, guide), x, layer);
    if (trace) {
      trace->layer_inputs[i] = x;
      trace->attention_inputs[i] = branch;
      trace->guided_texts[i] = guide;
      trace->layer_outputs[i] = y;
    }
    return y;
  };

  const Tensor& c3 = in.level(0);
  const Tensor& c4 = in.level(1);
  const Tensor& c5 = in.level(2);

  const Tensor n4 = run(Site::kTopDown4, add(c4, upsample2x(c5)), text);
  const Tensor p3 = run(Site::kTopDown3, add(c3, upsample2x(n4)), text);

  const FeaturePyramid mid({p3, n4, c5});
  const Tensor tokens = pooled_tokens(mid);
  if (trace) trace->tokens = tokens;
  Tensor updated = attend_text(text, tokens, params.attention);

  Tensor p4 = run(Site::kBottomUp4, add(n4, downsample2x(p3)), updated);
  Tensor p5 = run(Site::kBottomUp5, add(c5, downsample2x(p4)), updated);
  return {FeaturePyramid({p3, std::move(p4), std::move(p5)}), std::move(updated)};
}

}  // namespace ovw::pan
