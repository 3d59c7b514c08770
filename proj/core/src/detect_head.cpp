#include "ovw/detect_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ovw/errors.hpp"
#include "ovw/io.hpp"

namespace ovw::head {
namespace {

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected) {
    throw DimensionError(what + ": expected " + shape_string(expected) + ", got " + shape_string(t.shape()));
  }
}

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> d(rows * cols);
  for (double& v : d) v = u(gen);
  return Tensor({rows, cols}, std::move(d));
}

// x [N x D] * w [D x M] + bias [M]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const Tensor y = matmul(x, w);
  std::vector<double> out(y.values());
  const std::size_t m = y.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % m];
  return Tensor(y.shape(), std::move(out));
}

}  // namespace

SimilarityMatrix contrastive_similarity(const Tensor& embeddings, const Tensor& text, double alpha, double beta) {
  if (embeddings.rank() != 2 || text.rank() != 2 || embeddings.cols() != text.cols()) {
    throw DimensionError("contrastive_similarity: " + shape_string(embeddings.shape()) + " vs " +
                         shape_string(text.shape()));
  }
  const Tensor cosine = matmul_transposed(l2_normalize(embeddings), l2_normalize(text));
  std::vector<double> s(cosine.values());
  for (double& v : s) v = alpha * v + beta;
  return {Tensor(cosine.shape(), std::move(s)), alpha, beta};
}

void HeadParams::validate() const {
  if (bins < 2) throw DimensionError("head needs at least 2 offset bins");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::string name = "head.level" + std::to_string(l + 3);
    require_shape(levels[l].embed, {dim, dim}, name + ".embed");
    require_shape(levels[l].embed_bias, {dim}, name + ".embed_bias");
    require_shape(levels[l].box, {dim, 4 * bins}, name + ".box");
    require_shape(levels[l].box_bias, {4 * bins}, name + ".box_bias");
  }
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw NonFiniteError("head alpha/beta must be finite");
}

HeadParams HeadParams::random(std::size_t dim, std::size_t bins, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  HeadParams p;
  p.dim = dim;
  p.bins = bins;
  for (auto& l : p.levels) {
    l.embed = random_matrix(dim, dim, gen);
    l.embed_bias = Tensor::zeros({dim});
    l.box = random_matrix(dim, 4 * bins, gen);
    l.box_bias = Tensor::zeros({4 * bins});
  }
  p.validate();
  return p;
}

nlohmann::json head_params_to_json(const HeadParams& p) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : p.levels) {
    levels.push_back({{"embed", tensor_to_json(l.embed)},
                      {"embed_bias", tensor_to_json(l.embed_bias)},
                      {"box", tensor_to_json(l.box)},
                      {"box_bias", tensor_to_json(l.box_bias)}});
  }
  return {{"dim", p.dim}, {"bins", p.bins}, {"alpha", p.alpha}, {"beta", p.beta}, {"levels", levels}};
}

HeadParams head_params_from_json(const nlohmann::json& j) {
  try {
    HeadParams p;
    p.dim = j.at("dim").get<std::size_t>();
    p.bins = j.at("bins").get<std::size_t>();
    p.alpha = j.at("alpha").get<double>();
    p.beta = j.at("beta").get<double>();
    const auto& levels = j.at("levels");
    if (!levels.is_array() || levels.size() != p.levels.size()) throw LoadError("head params need 3 levels");
    for (std::size_t l = 0; l < p.levels.size(); ++l) {
      p.levels[l] = {tensor_from_json(levels[l].at("embed")), tensor_from_json(levels[l].at("embed_bias")),
                     tensor_from_json(levels[l].at("box")), tensor_from_json(levels[l].at("box_bias"))};
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("head params: ") + e.what());
  } catch (const DimensionError& e) {
    throw LoadError(std::string("head params: ") + e.what());
  }
}

Anchors make_anchors(const pan::FeaturePyramid& pyramid) {
  Anchors a;
  std::vector<double> pts;
  for (std::size_t l = 0; l < pan::kLevelCount; ++l) {
    const Tensor& level = pyramid.level(l);
    const double s = static_cast<double>(pan::kStrides[l]);
    for (std::size_t y = 0; y < level.extent(0); ++y)
      for (std::size_t x = 0; x < level.extent(1); ++x) {
        pts.push_back((static_cast<double>(x) + 0.5) * s);
        pts.push_back((static_cast<double>(y) + 0.5) * s);
        a.strides.push_back(s);
      }
  }
  a.points = Tensor({a.strides.size(), 2}, std::move(pts));
  a.image_width = static_cast<double>(pyramid.level(0).extent(1) * pan::kStrides[0]);
  a.image_height = static_cast<double>(pyramid.level(0).extent(0) * pan::kStrides[0]);
  return a;
}

HeadOutput head_forward(const pan::FeaturePyramid& pyramid, const HeadParams& params) {
  params.validate();
  if (pyramid.dim() != params.dim) {
    throw DimensionError("head dim " + std::to_string(params.dim) + " vs pyramid dim " +
                         std::to_string(pyramid.dim()));
  }
  std::array<Tensor, pan::kLevelCount> embeds, dists;
  for (std::size_t l = 0; l < pan::kLevelCount; ++l) {
    const Tensor& level = pyramid.level(l);
    const Tensor cells = level.reshaped({level.extent(0) * level.extent(1), level.extent(2)});
    embeds[l] = affine(cells, params.levels[l].embed, params.levels[l].embed_bias);
    dists[l] = affine(cells, params.levels[l].box, params.levels[l].box_bias);
  }
  HeadOutput out;
  out.embeddings = concat_rows(embeds);
  const Tensor dist = concat_rows(dists);
  out.box_dist = dist.reshaped({dist.rows(), 4, params.bins});
  out.anchors = make_anchors(pyramid);
  out.boxes = decode_boxes(out.box_dist, out.anchors);
  return out;
}

Tensor decode_boxes(const Tensor& box_dist, const Anchors& anchors) {
  if (box_dist.rank() != 3 || box_dist.extent(1) != 4 || box_dist.extent(2) < 2) {
    throw DimensionError("decode_boxes: expected [K x 4 x bins>=2], got " + shape_string(box_dist.shape()));
  }
  const std::size_t k = box_dist.extent(0);
  if (anchors.points.shape() != Shape{k, 2} || anchors.strides.size() != k) {
    throw DimensionError("decode_boxes: anchors do not match " + std::to_string(k) + " predictions");
  }
  const Tensor probs = softmax_lastdim(box_dist);
  const std::size_t bins = box_dist.extent(2);
  std::vector<double> out(k * 4);
  for (std::size_t i = 0; i < k; ++i) {
    std::array<double, 4> off{};
    for (std::size_t side = 0; side < 4; ++side) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += static_cast<double>(b) * probs(i, side, b);
      off[side] = e * anchors.strides[i];
    }
    const double cx = anchors.points(i, 0), cy = anchors.points(i, 1);
    out[i * 4 + 0] = std::clamp(cx - off[0], 0.0, anchors.image_width);
    out[i * 4 + 1] = std::clamp(cy - off[1], 0.0, anchors.image_height);
    out[i * 4 + 2] = std::clamp(cx + off[2], 0.0, anchors.image_width);
    out[i * 4 + 3] = std::clamp(cy + off[3], 0.0, anchors.image_height);
  }
  return Tensor({k, 4}, std::move(out));
}

std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_thresh) {
  if (!(iou_thresh >= 0.0 && iou_thresh <= 1.0)) throw InputError("nms: iou threshold must lie in [0, 1]");
  for (const auto& d : dets) {
    require_well_formed(d.box, "nms");
    if (!std::isfinite(d.score)) throw InputError("nms: non-finite score");
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t later = pos + 1; later < order.size(); ++later) {
      const std::size_t j = order[later];
      if (!suppressed[j] && dets[j].text_id == dets[i].text_id && iou(dets[i].box, dets[j].box) > iou_thresh) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

}  // namespace ovw::head
