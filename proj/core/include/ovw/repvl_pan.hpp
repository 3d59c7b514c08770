#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ovw/tensor.hpp"

namespace ovw::pan {

inline constexpr std::size_t kLevelCount = 3;
inline constexpr std::array<std::size_t, kLevelCount> kStrides = {8, 16, 32};
inline constexpr std::size_t kPoolGrid = 3;
inline constexpr std::size_t kPooledTokens = kLevelCount * kPoolGrid * kPoolGrid;  // 27

// Three [H_l x W_l x D] maps for levels 3, 4, 5 (index 0, 1, 2). Each level
// halves the spatial extents of the previous one.
class FeaturePyramid {
 public:
  explicit FeaturePyramid(std::array<Tensor, kLevelCount> levels);

  const Tensor& level(std::size_t index) const { return levels_.at(index); }
  const std::array<Tensor, kLevelCount>& levels() const noexcept { return levels_; }
  std::size_t dim() const noexcept { return levels_[0].extent(2); }

  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;

 private:
  std::array<Tensor, kLevelCount> levels_;
};

// Where each T-CSPLayer sits in the aggregation network.
enum class Site : std::size_t { kTopDown4 = 0, kTopDown3 = 1, kBottomUp4 = 2, kBottomUp5 = 3 };
inline constexpr std::size_t kSiteCount = 4;
std::string_view site_name(Site site);
std::optional<Site> site_from_name(std::string_view name);

// One T-CSPLayer. The input [x1 | x2] is split into channel halves; x1 goes
// through the bottleneck then text attention, x2 is the cross-stage part.
struct TCspParams {
  Tensor bottleneck;  // [D/2 x D/2]
  Tensor text_guide;  // [D x D/2], projects text embeddings to the half width
  Tensor mix;         // [D x D], applied to the concatenated halves
};

// Multi-head attention used to update text embeddings from pooled image
// tokens. Projections are right-multiplied: Q = W * query.
struct AttentionParams {
  std::size_t heads = 4;
  Tensor query;   // [D x D]
  Tensor key;     // [D x D]
  Tensor value;   // [D x D]
  Tensor output;  // [D x D]
};

struct FusionParams {
  std::size_t dim = 32;
  std::array<TCspParams, kSiteCount> layers;
  AttentionParams attention;

  const TCspParams& layer(Site site) const { return layers[static_cast<std::size_t>(site)]; }

  // Throws DimensionError unless D is even, heads divides D and every
  // projection has the shape listed above.
  void validate() const;

  // Identity bottleneck and mix, text guide keeping the first D/2
  // coordinates, identity attention projections.
  static FusionParams identity(std::size_t dim, std::size_t heads);
  // Seeded uniform weights scaled by 1/sqrt(fan_in).
  static FusionParams random(std::size_t dim, std::size_t heads, std::uint64_t seed);
};

nlohmann::json fusion_params_to_json(const FusionParams& p);
FusionParams fusion_params_from_json(const nlohmann::json& j);

// Seeded linear stand-in for the image encoder. Each stride-s cell is
// summarized by per-channel means of its four s/2 x s/2 quadrants (12
// values) and projected to D channels without bias. H and W must be
// multiples of 32.
FeaturePyramid toy_backbone(const Tensor& image, std::size_t dim, std::uint64_t seed);

// X' = X * sigmoid(max_j <x, w_j>) at every spatial position.
Tensor max_sigmoid_attention(const Tensor& x, const Tensor& text);

// The per-position sigmoid gate of max_sigmoid_attention, shape [H x W].
Tensor max_sigmoid_gate(const Tensor& x, const Tensor& text);

// The text matrix a T-CSPLayer attends with: text * text_guide.
Tensor guided_text(const Tensor& text, const TCspParams& layer);

// Bottleneck branch input to the attention, i.e. x1 * bottleneck.
Tensor bottleneck_branch(const Tensor& x, const TCspParams& layer);

// Combines the attended half with the untouched half and mixes.
Tensor cross_stage_merge(const Tensor& attended, const Tensor& x, const TCspParams& layer);

Tensor t_csplayer(const Tensor& x, const Tensor& text, const TCspParams& layer);

// 27 x D tokens: 3x3 max pooling of each level, levels in order 3, 4, 5.
Tensor pooled_tokens(const FeaturePyramid& pyramid);

// W' = W + MultiHeadAttention(W, tokens, tokens).
Tensor attend_text(const Tensor& text, const Tensor& tokens, const AttentionParams& p);
Tensor image_pooling_attention(const Tensor& text, const FeaturePyramid& pyramid, const AttentionParams& p);

Tensor upsample2x(const Tensor& x);
Tensor downsample2x(const Tensor& x);

// Intermediate values of one forward pass, indexed by Site.
struct PanTrace {
  std::array<Tensor, kSiteCount> layer_inputs;
  std::array<Tensor, kSiteCount> attention_inputs;
  std::array<Tensor, kSiteCount> layer_outputs;
  std::array<Tensor, kSiteCount> guided_texts;
  Tensor tokens;
};

struct PanOutput {
  FeaturePyramid pyramid;
  Tensor text;  // [C x D] updated embeddings, not re-normalized
};

// Top-down pass (C5 -> C4 -> C3, nearest 2x upsampling, additive merge,
// T-CSPLayer) with the input text; then one text update by image pooling
// attention over {P3_td, P4_td, C5}; then bottom-up pass (stride-2 max
// pooling, additive merge, T-CSPLayer) with the updated text.
PanOutput repvlpan_forward(const FeaturePyramid& in, const Tensor& text, const FusionParams& params,
                           PanTrace* trace = nullptr);

}  // namespace ovw::pan
