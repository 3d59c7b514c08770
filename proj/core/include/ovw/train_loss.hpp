#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovw/annotations.hpp"
#include "ovw/box.hpp"
#include "ovw/detect_head.hpp"
#include "ovw/tensor.hpp"

namespace ovw::loss {

struct GroundTruthBox {
  Box box;
  std::size_t text_index = 0;
  bool box_accurate = true;
};

struct GroundTruth {
  DataSource source = DataSource::kDetection;
  std::vector<GroundTruthBox> boxes;
};

// Maps annotation texts onto vocabulary indices; throws InputError for a
// text missing from the vocabulary.
GroundTruth to_ground_truth(const AnnotatedImage& img, const std::vector<std::string>& vocabulary);

struct AssignConfig {
  std::size_t top_k = 10;
  double alpha = 1.0;  // exponent on the classification term
  double beta = 6.0;   // exponent on the IoU term
};

struct Positive {
  std::size_t gt_index = 0;
  std::size_t text_index = 0;
  double metric = 0.0;
};

struct Assignment {
  std::vector<std::optional<Positive>> labels;  // one per prediction

  std::size_t positive_count() const;
};

// Alignment metric of prediction k for ground truth i:
//   sigmoid(s[k][t_i])^alpha * IoU(pred_k, B_i)^beta
double alignment_metric(double similarity, double overlap, const AssignConfig& cfg);

// Task-aligned assignment. Candidates for a ground truth are predictions whose
// anchor center lies strictly inside its box; the top_k candidates by metric
// (ties by prediction index) become positive. A prediction claimed by several
// ground truths keeps the one with the larger metric (ties by lower index).
Assignment task_aligned_assign(const head::SimilarityMatrix& sim, const Tensor& pred_boxes,
                               const Tensor& anchor_points, const GroundTruth& gt, const AssignConfig& cfg = {});

// Mean cross-entropy of softmax(s_k) against the assigned text over positive
// predictions; 0 without positives.
double region_text_contrastive_loss(const head::SimilarityMatrix& sim, const Assignment& assign);

// 1 - IoU(pred, gt), computed as (union - intersection) / union.
double iou_loss(const Box& pred, const Box& gt);

// Distribution focal loss for one prediction: logits [4 x bins], targets in
// bin units with 0 <= y < bins - 1. Mean over the four sides.
double dfl_loss(const Tensor& logits, std::span<const double, 4> targets);

// Offsets (l, t, r, b) from an anchor to the ground-truth edges in bin units,
// clamped to [0, bins - 1.01].
std::array<double, 4> regression_targets(double cx, double cy, double stride, const Box& gt, std::size_t bins);

struct LossSample {
  head::SimilarityMatrix sim;
  Tensor box_dist;  // [K x 4 x bins]
  Tensor pred_boxes;
  head::Anchors anchors;
  GroundTruth gt;
  AssignConfig assign;
};

struct LossBreakdown {
  double contrastive = 0.0;
  double iou = 0.0;
  double dfl = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::size_t positives = 0;
  std::size_t regression_terms = 0;
};

// L = L_con + lambda * (L_iou + L_dfl), lambda = 0 for image-text data. The
// regression terms average over positives whose ground truth box is accurate.
LossBreakdown total_loss(const LossSample& sample);

}  // namespace ovw::loss
