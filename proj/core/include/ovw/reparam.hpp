#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ovw/repvl_pan.hpp"
#include "ovw/tensor.hpp"
#include "ovw/text_embed.hpp"

namespace ovw::reparam {

// Text embeddings laid out as the weights of a 1x1 convolution with C output
// channels: kernel shape [C x D x 1 x 1].
struct FoldedConv {
  Tensor kernel;

  std::size_t out_channels() const { return kernel.extent(0); }
  std::size_t in_channels() const { return kernel.extent(1); }
};

FoldedConv fold_tcsp(const Tensor& text);
FoldedConv fold_tcsp(const text::TextEmbeddings& emb);
Tensor unfold(const FoldedConv& folded);

// Channel-first layout conversion, [H x W x D] <-> [D x H x W].
Tensor to_chw(const Tensor& hwc);
Tensor to_hwc(const Tensor& chw);

// 1x1 convolution of a [D x H x W] map, producing [C x H x W].
Tensor conv1x1(const Tensor& chw, const FoldedConv& folded);

// X' = X * sigmoid(max over output channels of Conv(X, W)), evaluated in
// channel-first layout. Input and output are [H x W x D].
Tensor reparam_tcsp_forward(const Tensor& x, const FoldedConv& folded);

// 27 x D pooled tokens computed from channel-first maps.
Tensor pool_tokens(const pan::FeaturePyramid& pyramid);

// Projection-free text update used at deployment:
//   A  = softmax(W * X~^T)          [C x 27], row-wise
//   W' = W + (A * X~) (.) W          elementwise gate by W
// This differs from the multi-head update in the network; the gap is
// measured by verify_equivalence, never assumed to be zero.
Tensor reparam_text_update(const Tensor& text, const Tensor& tokens);

// Weights baked from an offline vocabulary.
struct ReparamBundle {
  // Top-down T-CSPLayers attend with the offline text, so their convs are
  // folded once: fold(W * text_guide).
  std::array<FoldedConv, 2> top_down;
  // Bottom-up T-CSPLayers attend with the image-updated text; their convs are
  // folded per image from these guides.
  std::array<Tensor, 2> bottom_up_guides;
  std::size_t grid = pan::kPoolGrid;
  std::array<std::size_t, pan::kLevelCount> levels = {3, 4, 5};
  Tensor text;  // W, the score and value weights of the simplified update

  std::size_t vocabulary_size() const { return text.rows(); }
};

ReparamBundle build_bundle(const pan::FusionParams& params, const Tensor& text);

// Deployment forward pass: same aggregation structure as the fusion network,
// with every text attention evaluated through folded 1x1 convs.
pan::PanOutput reparam_forward(const pan::FeaturePyramid& in, const ReparamBundle& bundle,
                               const pan::FusionParams& params, pan::PanTrace* trace = nullptr);

struct CheckStats {
  double max_abs = 0.0;
  double max_rel = 0.0;
  bool passed = true;
};

struct EquivalenceOptions {
  std::size_t trials = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EquivalenceReport {
  std::size_t trials = 0;
  double tol = 0.0;
  std::array<CheckStats, pan::kSiteCount> tcsp;  // check (a), per site
  CheckStats tokens;                             // check (b), must be bit-identical
  CheckStats text_update_gap;                    // check (c), reported only
  std::optional<std::string> failing_layer;      // first site failing (a)

  bool passed() const;
};

// Relative deviation used by the checks: |a - b| / max(|a|, |b|, 1e-8).
double relative_deviation(double a, double b);

// Runs `trials` seeded random pyramids through the fusion network and the
// folded path. A caller-supplied bundle lets tests inject faults.
EquivalenceReport verify_equivalence(const pan::FusionParams& params, const Tensor& text,
                                     const EquivalenceOptions& opts,
                                     const std::optional<ReparamBundle>& bundle = std::nullopt);

nlohmann::json report_to_json(const EquivalenceReport& report);

}  // namespace ovw::reparam
