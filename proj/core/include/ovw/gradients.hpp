#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ovw/box.hpp"
#include "ovw/repvl_pan.hpp"
#include "ovw/tensor.hpp"
#include "ovw/train_loss.hpp"

namespace ovw::loss {

// Analytic vector-Jacobian products. `upstream` is dL/d(output); each function
// returns dL/d(input) with the input's shape.

// y = a * b, gradient with respect to a.
Tensor matmul_grad_lhs(const Tensor& upstream, const Tensor& b);

struct SimilarityGrads {
  Tensor embeddings;  // [K x D]
  Tensor text;        // [C x D]
};
SimilarityGrads contrastive_similarity_grad(const Tensor& embeddings, const Tensor& text, double alpha,
                                            const Tensor& upstream);

// Gradient of max_sigmoid_attention with respect to the features x. The max
// routes gradient to the single best-matching text row.
Tensor max_sigmoid_attention_grad(const Tensor& x, const Tensor& text, const Tensor& upstream);

struct AttentionGrads {
  Tensor text;    // [C x D]
  Tensor tokens;  // [T x D]
};
AttentionGrads attend_text_grad(const Tensor& text, const Tensor& tokens, const pan::AttentionParams& p,
                                const Tensor& upstream);

// dL_con / d(similarity values).
Tensor contrastive_loss_grad(const head::SimilarityMatrix& sim, const Assignment& assign);

// d(1 - IoU) / d(pred x1, y1, x2, y2).
std::array<double, 4> iou_loss_grad(const Box& pred, const Box& gt);

// d dfl_loss / d logits, [4 x bins].
Tensor dfl_loss_grad(const Tensor& logits, std::span<const double, 4> targets);

struct GradCheckResult {
  std::string op;
  std::uint64_t seed = 0;
  double eps = 0.0;
  std::size_t components = 0;
  double max_rel_error = 0.0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Operators with a registered analytic gradient:
// matmul, eq1, eq2, eq3, contrastive, iou, dfl.
const std::vector<std::string>& registered_gradient_ops();

// Builds a seeded random instance of `op`, reduces its output to a scalar
// with seeded random weights, and compares the analytic gradient with central
// finite differences. Relative error per component uses the denominator
// max(|analytic|, |numeric|, 1e-8). Throws InputError for an unknown op or
// eps outside [1e-7, 1e-3].
GradCheckResult grad_check(std::string_view op, std::uint64_t seed, double eps);

}  // namespace ovw::loss
