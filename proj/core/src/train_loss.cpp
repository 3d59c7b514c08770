#include "ovw/train_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ovw/errors.hpp"

namespace ovw::loss {
namespace {

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double overlap_or_zero(const Box& pred, const Box& gt) { return pred.well_formed() ? iou(pred, gt) : 0.0; }

}  // namespace

GroundTruth to_ground_truth(const AnnotatedImage& img, const std::vector<std::string>& vocabulary) {
  GroundTruth gt;
  gt.source = img.source;
  for (const auto& a : img.annotations) {
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), a.text);
    if (it == vocabulary.end()) throw InputError("annotation text \"" + a.text + "\" is not in the vocabulary");
    gt.boxes.push_back({a.box, static_cast<std::size_t>(it - vocabulary.begin()), a.box_accurate});
  }
  return gt;
}

std::size_t Assignment::positive_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }));
}

double alignment_metric(double similarity, double overlap, const AssignConfig& cfg) {
  return std::pow(sigmoid(similarity), cfg.alpha) * std::pow(overlap, cfg.beta);
}

Assignment task_aligned_assign(const head::SimilarityMatrix& sim, const Tensor& pred_boxes,
                               const Tensor& anchor_points, const GroundTruth& gt, const AssignConfig& cfg) {
  const std::size_t k = sim.values.rows();
  const std::size_t c = sim.values.cols();
  if (sim.values.rank() != 2 || pred_boxes.shape() != Shape{k, 4} || anchor_points.shape() != Shape{k, 2}) {
    throw DimensionError("task_aligned_assign: similarity " + shape_string(sim.values.shape()) + ", boxes " +
                         shape_string(pred_boxes.shape()) + ", anchors " + shape_string(anchor_points.shape()));
  }
  for (const auto& g : gt.boxes) {
    require_well_formed(g.box, "ground truth");
    if (g.text_index >= c) throw InputError("ground truth text index out of vocabulary range");
  }

  Assignment out;
  out.labels.resize(k);
  for (std::size_t gi = 0; gi < gt.boxes.size(); ++gi) {
    const GroundTruthBox& g = gt.boxes[gi];
    std::vector<std::pair<double, std::size_t>> candidates;
    for (std::size_t p = 0; p < k; ++p) {
      const double cx = anchor_points(p, 0), cy = anchor_points(p, 1);
      if (!(cx > g.box.x1 && cx < g.box.x2 && cy > g.box.y1 && cy < g.box.y2)) continue;
      const double overlap = overlap_or_zero(Box::from_span(pred_boxes.row(p)), g.box);
      candidates.emplace_back(alignment_metric(sim.values(p, g.text_index), overlap, cfg), p);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    candidates.resize(std::min(candidates.size(), cfg.top_k));
    for (const auto& [metric, p] : candidates) {
      // Ground truths are visited in index order, so only a strictly larger
      // metric displaces an earlier claim.
      auto& label = out.labels[p];
      if (!label || metric > label->metric) label = Positive{gi, g.text_index, metric};
    }
  }
  return out;
}

double region_text_contrastive_loss(const head::SimilarityMatrix& sim, const Assignment& assign) {
  if (assign.labels.size() != sim.values.rows()) {
    throw DimensionError("contrastive loss: assignment covers " + std::to_string(assign.labels.size()) +
                         " predictions, similarity has " + std::to_string(sim.values.rows()));
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < assign.labels.size(); ++p) {
    if (!assign.labels[p]) continue;
    const auto row = sim.values.row(p);
    const std::size_t t = assign.labels[p]->text_index;
    if (t >= row.size()) throw InputError("contrastive loss: text index out of range");
    total += log_sum_exp(row) - row[t];
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// (union - inter) / union rather than 1 - inter / union: same value, one
// rounding fewer, so simple fractions come out exact.
double iou_loss(const Box& pred, const Box& gt) {
  require_well_formed(pred, "iou_loss");
  require_well_formed(gt, "iou_loss");
  const double inter = intersection_area(pred, gt);
  const double uni = pred.area() + gt.area() - inter;
  return (uni - inter) / uni;
}

double dfl_loss(const Tensor& logits, std::span<const double, 4> targets) {
  if (logits.rank() != 2 || logits.extent(0) != 4 || logits.extent(1) < 2) {
    throw DimensionError("dfl_loss: expected [4 x bins], got " + shape_string(logits.shape()));
  }
  const std::size_t bins = logits.extent(1);
  double total = 0.0;
  for (std::size_t side = 0; side < 4; ++side) {
    const double y = targets[side];
    if (!(y >= 0.0 && y < static_cast<double>(bins - 1))) {
      throw InputError("dfl_loss: target " + std::to_string(y) + " outside [0, " + std::to_string(bins - 1) + ")");
    }
    const auto row = logits.row(side);
    const double lse = log_sum_exp(row);
    const auto left = static_cast<std::size_t>(std::floor(y));
    const double w_left = static_cast<double>(left + 1) - y;
    const double w_right = y - static_cast<double>(left);
    double side_loss = w_left * (lse - row[left]);
    if (w_right > 0.0) side_loss += w_right * (lse - row[left + 1]);
    total += side_loss;
  }
  return total / 4.0;
}

std::array<double, 4> regression_targets(double cx, double cy, double stride, const Box& gt, std::size_t bins) {
  const double hi = static_cast<double>(bins) - 1.01;
  auto clampt = [&](double v) { return std::clamp(v / stride, 0.0, hi); };
  return {clampt(cx - gt.x1), clampt(cy - gt.y1), clampt(gt.x2 - cx), clampt(gt.y2 - cy)};
}

LossBreakdown total_loss(const LossSample& sample) {
  LossBreakdown out;
  const Assignment assign =
      task_aligned_assign(sample.sim, sample.pred_boxes, sample.anchors.points, sample.gt, sample.assign);
  out.positives = assign.positive_count();
  out.contrastive = region_text_contrastive_loss(sample.sim, assign);
  out.lambda = sample.gt.source == DataSource::kImageText ? 0.0 : 1.0;
  if (out.lambda == 0.0) {
    out.total = out.contrastive;
    return out;
  }

  const std::size_t k = assign.labels.size();
  if (sample.box_dist.rank() != 3 || sample.box_dist.extent(0) != k || sample.box_dist.extent(1) != 4) {
    throw DimensionError("total_loss: box distribution " + shape_string(sample.box_dist.shape()) +
                         " does not match " + std::to_string(k) + " predictions");
  }
  const std::size_t bins = sample.box_dist.extent(2);
  double iou_sum = 0.0, dfl_sum = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    if (!assign.labels[p]) continue;
    const GroundTruthBox& g = sample.gt.boxes[assign.labels[p]->gt_index];
    if (!g.box_accurate) continue;
    const Box pred = Box::from_span(sample.pred_boxes.row(p));
    iou_sum += pred.well_formed() ? iou_loss(pred, g.box) : 1.0;
    const auto targets = regression_targets(sample.anchors.points(p, 0), sample.anchors.points(p, 1),
                                            sample.anchors.strides[p], g.box, bins);
    const auto slab = sample.box_dist.data().subspan(p * 4 * bins, 4 * bins);
    dfl_sum += dfl_loss(Tensor({4, bins}, std::vector<double>(slab.begin(), slab.end())), targets);
    ++out.regression_terms;
  }
  if (out.regression_terms) {
    out.iou = iou_sum / static_cast<double>(out.regression_terms);
    out.dfl = dfl_sum / static_cast<double>(out.regression_terms);
  }
  out.total = out.contrastive + out.lambda * (out.iou + out.dfl);
  return out;
}

}  // namespace ovw::loss
