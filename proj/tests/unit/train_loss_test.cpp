#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "brute_force.hpp"
#include "oracle_values.hpp"
#include "ovw/errors.hpp"
#include "ovw/train_loss.hpp"
#include "test_support.hpp"

namespace ovw::loss {
namespace {

using testing::random_tensor;

head::SimilarityMatrix sim_of(const Tensor& t) { return {t, 1.0, 0.0}; }

Assignment labels_for(std::vector<std::optional<std::size_t>> texts) {
  Assignment a;
  for (std::size_t i = 0; i < texts.size(); ++i)
    a.labels.push_back(texts[i] ? std::optional<Positive>(Positive{0, *texts[i], 1.0}) : std::nullopt);
  return a;
}

TEST(Assign, ExactPredictionWithTopSimilarityIsPositive) {
  const Tensor sim = Tensor::from_rows({{5.0, -1.0}, {-1.0, -1.0}});
  const Tensor boxes = Tensor::from_rows({{10, 10, 50, 50}, {0, 0, 5, 5}});
  const Tensor anchors = Tensor::from_rows({{30, 30}, {35, 35}});
  GroundTruth gt{DataSource::kDetection, {{{10, 10, 50, 50}, 0, true}}};
  const auto a = task_aligned_assign(sim_of(sim), boxes, anchors, gt, {1, 1.0, 6.0});
  ASSERT_TRUE(a.labels[0].has_value());
  EXPECT_EQ(a.labels[0]->text_index, 0u);
  EXPECT_FALSE(a.labels[1].has_value());
}

TEST(Assign, GroundTruthWithoutInteriorAnchorGetsNothing) {
  const Tensor sim = Tensor::from_rows({{1.0}, {1.0}});
  const Tensor boxes = Tensor::from_rows({{10, 10, 50, 50}, {10, 10, 50, 50}});
  const Tensor anchors = Tensor::from_rows({{5, 5}, {10, 30}});  // second sits on the edge
  GroundTruth gt{DataSource::kDetection, {{{10, 10, 50, 50}, 0, true}}};
  EXPECT_EQ(task_aligned_assign(sim_of(sim), boxes, anchors, gt, {}).positive_count(), 0u);
}

TEST(Assign, MatchesBruteForceOracle) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> pos(0, 100);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 10, c = 4;
    const Tensor sim = random_tensor({k, c}, gen, -2, 2);
    std::vector<double> b, an;
    for (std::size_t i = 0; i < k; ++i) {
      const Box r = testing::random_box(gen);
      b.insert(b.end(), {r.x1, r.y1, r.x2, r.y2});
      an.insert(an.end(), {pos(gen), pos(gen)});
    }
    GroundTruth gt;
    for (int g = 0; g < 3; ++g) gt.boxes.push_back({testing::random_box(gen, 80), gen() % c, true});
    const AssignConfig cfg{1 + static_cast<std::size_t>(t % 4), 1.0, 6.0};
    const Tensor boxes({k, 4}, b), anchors({k, 2}, an);
    const auto got = task_aligned_assign(sim_of(sim), boxes, anchors, gt, cfg);
    const auto want = testing::brute_force_assign(sim, boxes, anchors, gt, cfg);
    for (std::size_t p = 0; p < k; ++p) {
      ASSERT_EQ(got.labels[p].has_value(), want[p].has_value()) << "trial " << t << " pred " << p;
      if (want[p]) EXPECT_EQ(got.labels[p]->gt_index, *want[p]);
    }
  }
}

TEST(Assign, RejectsBadGroundTruth) {
  const Tensor sim = Tensor::from_rows({{1.0}});
  const Tensor boxes = Tensor::from_rows({{0, 0, 1, 1}});
  const Tensor anchors = Tensor::from_rows({{0.5, 0.5}});
  GroundTruth bad_box{DataSource::kDetection, {{{3, 3, 1, 1}, 0, true}}};
  GroundTruth bad_text{DataSource::kDetection, {{{0, 0, 1, 1}, 5, true}}};
  EXPECT_THROW(task_aligned_assign(sim_of(sim), boxes, anchors, bad_box, {}), InputError);
  EXPECT_THROW(task_aligned_assign(sim_of(sim), boxes, anchors, bad_text, {}), InputError);
}

TEST(ContrastiveLoss, UniformRowGivesLogC) {
  for (std::size_t c : {2u, 80u, 1203u}) {
    const Tensor sim = Tensor::full({1, c}, 0.37);
    EXPECT_NEAR(region_text_contrastive_loss(sim_of(sim), labels_for({0})), std::log(static_cast<double>(c)), 1e-9);
  }
}

TEST(ContrastiveLoss, DominantLogitGivesZero) {
  const Tensor sim = Tensor::from_rows({{-500.0, 500.0, -500.0}});
  EXPECT_LT(region_text_contrastive_loss(sim_of(sim), labels_for({1})), 1e-300);
}

TEST(ContrastiveLoss, TwoPositivesMatchScalarOracle) {
  const Tensor sim = Tensor::from_rows({{0.2, 0.7, -0.1}, {0.5, -0.4, 0.9}, {0.0, 0.0, 0.0}});
  EXPECT_NEAR(region_text_contrastive_loss(sim_of(sim), labels_for({1, 2, std::nullopt})),
              oracle::kContrastiveTwoPositives, 1e-9);
}

TEST(ContrastiveLoss, NoPositivesIsZero) {
  EXPECT_EQ(region_text_contrastive_loss(sim_of(Tensor::zeros({2, 3})), labels_for({std::nullopt, std::nullopt})), 0.0);
}

TEST(IouLoss, KnownValues) {
  EXPECT_EQ(iou_loss({0, 0, 2, 2}, {0, 0, 2, 2}), 0.0);
  EXPECT_EQ(iou_loss({0, 0, 2, 2}, {5, 5, 6, 6}), 1.0);
  EXPECT_EQ(iou_loss({0, 0, 2, 2}, {1, 0, 3, 2}), 2.0 / 3.0);
  EXPECT_THROW(iou_loss({0, 0, 0, 2}, {1, 0, 3, 2}), InputError);
}

TEST(IouLoss, SymmetricAndBounded) {
  std::mt19937_64 gen(2);
  for (int t = 0; t < 200; ++t) {
    const Box a = testing::random_box(gen), b = testing::random_box(gen);
    const double l = iou_loss(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    EXPECT_NEAR(l, iou_loss(b, a), 1e-15);
  }
}

Tensor one_hot_logits(std::size_t bins, std::size_t at) {
  std::vector<double> v(4 * bins, -1000.0);
  for (std::size_t s = 0; s < 4; ++s) v[s * bins + at] = 1000.0;
  return Tensor({4, bins}, v);
}

TEST(Dfl, ExactHitIsZero) {
  const std::array<double, 4> y = {3, 3, 3, 3};
  EXPECT_EQ(dfl_loss(one_hot_logits(8, 3), y), 0.0);
}

TEST(Dfl, UniformIsLogBins) {
  const std::array<double, 4> y = {1, 2, 0, 5};
  EXPECT_NEAR(dfl_loss(Tensor::zeros({4, 8}), y), std::log(8.0), 1e-12);
}

const Tensor kDflLogits = Tensor::from_rows({{0.1, 0.5, -0.3, 1.2, 0.0},
                                             {1.0, 0.0, 0.0, 0.0, 0.0},
                                             {-0.5, 0.25, 0.75, 0.5, -1.0},
                                             {0.3, 0.3, 0.9, 0.1, 0.2}});

TEST(Dfl, FractionalTargetsMatchScalarOracle) {
  const std::array<double, 4> half = {2.5, 2.5, 2.5, 2.5};
  const std::array<double, 4> mixed = {2.5, 0.0, 1.25, 3.75};
  EXPECT_NEAR(dfl_loss(kDflLogits, half), oracle::kDflHalfTargets, 1e-12);
  EXPECT_NEAR(dfl_loss(kDflLogits, mixed), oracle::kDflMixedTargets, 1e-12);
}

TEST(Dfl, TargetOutOfRangeThrows) {
  const std::array<double, 4> y = {4.0, 0, 0, 0};
  EXPECT_THROW(dfl_loss(kDflLogits, y), InputError);
}

TEST(RegressionTargets, ClampedIntoBinRange) {
  const auto t = regression_targets(20, 20, 8, {4, 4, 500, 36}, 16);
  EXPECT_EQ(t[0], 2.0);
  EXPECT_EQ(t[3], 2.0);
  EXPECT_DOUBLE_EQ(t[2], 14.99);
}

// One anchor at (20, 20), stride 8, inside a [4, 4, 36, 36] gt: targets are 2.
LossSample single_anchor_sample(DataSource source, const Box& pred, const Tensor& dist_row) {
  LossSample s;
  s.sim = sim_of(Tensor::from_rows({{0.9, -0.2, 0.1}}));
  s.box_dist = dist_row.reshaped({1, 4, dist_row.extent(1)});
  s.pred_boxes = Tensor({1, 4}, {pred.x1, pred.y1, pred.x2, pred.y2});
  s.anchors.points = Tensor({1, 2}, {20, 20});
  s.anchors.strides = {8};
  s.anchors.image_width = s.anchors.image_height = 64;
  s.gt = {source, {{{4, 4, 36, 36}, 0, source == DataSource::kDetection}}};
  return s;
}

TEST(TotalLoss, ImageTextSampleIsContrastiveOnly) {
  const auto s = single_anchor_sample(DataSource::kImageText, {0, 0, 30, 30}, Tensor::zeros({4, 16}));
  const auto l = total_loss(s);
  EXPECT_EQ(l.lambda, 0.0);
  EXPECT_EQ(l.total, l.contrastive);
  EXPECT_EQ(l.positives, 1u);
  EXPECT_EQ(l.regression_terms, 0u);
}

TEST(TotalLoss, PerfectBoxesAddNothing) {
  const auto l = total_loss(single_anchor_sample(DataSource::kDetection, {4, 4, 36, 36}, one_hot_logits(16, 2)));
  EXPECT_EQ(l.regression_terms, 1u);
  EXPECT_EQ(l.total, l.contrastive);
}

TEST(TotalLoss, MixedCaseIsSumOfComponents) {
  const auto s = single_anchor_sample(DataSource::kDetection, {6, 2, 30, 33}, kDflLogits.reshaped({4, 5}));
  auto mod = s;
  mod.gt.boxes[0].box = {4, 4, 28, 30};  // targets 2, 2, 1, 1.25
  const auto l = total_loss(mod);
  const std::array<double, 4> y = {2, 2, 1, 1.25};
  const Assignment a = labels_for({0});
  const double want = region_text_contrastive_loss(mod.sim, a) + iou_loss({6, 2, 30, 33}, {4, 4, 28, 30}) +
                      dfl_loss(kDflLogits, y);
  EXPECT_NEAR(l.total, want, 1e-12);
  EXPECT_GT(l.iou, 0.0);
  EXPECT_GT(l.dfl, 0.0);
}

TEST(TotalLoss, InaccurateBoxesSkipRegression) {
  auto s = single_anchor_sample(DataSource::kGrounding, {6, 2, 30, 33}, kDflLogits.reshaped({4, 5}));
  s.gt.boxes[0].box_accurate = false;
  const auto l = total_loss(s);
  EXPECT_EQ(l.lambda, 1.0);
  EXPECT_EQ(l.regression_terms, 0u);
  EXPECT_EQ(l.total, l.contrastive);
}

TEST(GroundTruthConversion, MapsTextsToVocabulary) {
  AnnotatedImage img{"x", DataSource::kGrounding, {{{0, 0, 1, 1}, "cat", false, std::nullopt}}};
  const auto gt = to_ground_truth(img, {"dog", "cat"});
  EXPECT_EQ(gt.boxes[0].text_index, 1u);
  EXPECT_FALSE(gt.boxes[0].box_accurate);
  EXPECT_THROW(to_ground_truth(img, {"dog"}), InputError);
}

}  // namespace
}  // namespace ovw::loss
