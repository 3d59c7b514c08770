#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovw/box.hpp"
#include "ovw/repvl_pan.hpp"
#include "ovw/tensor.hpp"

namespace ovw::head {

inline constexpr std::size_t kDefaultBins = 16;

// s[k][j] = alpha * <e_k / |e_k|, w_j / |w_j|> + beta.
struct SimilarityMatrix {
  Tensor values;  // [K x C]
  double alpha = 1.0;
  double beta = 0.0;
};

SimilarityMatrix contrastive_similarity(const Tensor& embeddings, const Tensor& text, double alpha, double beta);

// Per-level linear projections applied to each cell's channel vector.
struct LevelHeadParams {
  Tensor embed;       // [D x D]
  Tensor embed_bias;  // [D]
  Tensor box;         // [D x 4*bins]
  Tensor box_bias;    // [4*bins]
};

struct HeadParams {
  std::size_t dim = 32;
  std::size_t bins = kDefaultBins;
  double alpha = 1.0;
  double beta = 0.0;
  std::array<LevelHeadParams, pan::kLevelCount> levels;

  void validate() const;
  // Seeded weights, zero biases, alpha = 1, beta = 0.
  static HeadParams random(std::size_t dim, std::size_t bins, std::uint64_t seed);
};

nlohmann::json head_params_to_json(const HeadParams& p);
HeadParams head_params_from_json(const nlohmann::json& j);

// One anchor point per cell per level, at the cell center in pixels; level 3
// cells first, row-major within a level.
struct Anchors {
  Tensor points;                // [K x 2] (cx, cy)
  std::vector<double> strides;  // K entries
  double image_width = 0;
  double image_height = 0;
};

Anchors make_anchors(const pan::FeaturePyramid& pyramid);

struct HeadOutput {
  Tensor boxes;       // [K x 4] decoded (x1, y1, x2, y2)
  Tensor embeddings;  // [K x D]
  Tensor box_dist;    // [K x 4 x bins] offset logits, sides ordered l, t, r, b
  Anchors anchors;
};

HeadOutput head_forward(const pan::FeaturePyramid& pyramid, const HeadParams& params);

// Expected offset per side, sum_i i * softmax(logits)_i * stride, turned
// into a box around the anchor and clamped to the image.
Tensor decode_boxes(const Tensor& box_dist, const Anchors& anchors);

struct Detection {
  Box box;
  std::size_t text_id = 0;
  double score = 0.0;
};

// Greedy NMS within each text group. Candidates are visited by score
// descending (ties by input index); a candidate is dropped when its IoU with
// an already kept box of the same text exceeds iou_thresh. Returns kept input
// indices in visiting order.
std::vector<std::size_t> nms(const std::vector<Detection>& dets, double iou_thresh);

}  // namespace ovw::head
