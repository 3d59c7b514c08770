#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovw/tensor.hpp"

namespace ovw::text {

// Per-noun text embeddings W: C unique nouns and a [C x D] matrix with unit
// rows. C >= 1.
class TextEmbeddings {
 public:
  // Rows are re-normalized; throws InputError on duplicate nouns and
  // DegenerateInputError on zero rows.
  TextEmbeddings(std::vector<std::string> nouns, const Tensor& matrix);

  const std::vector<std::string>& nouns() const noexcept { return nouns_; }
  const Tensor& matrix() const noexcept { return matrix_; }
  std::size_t size() const noexcept { return nouns_.size(); }
  std::size_t dim() const noexcept { return matrix_.cols(); }

  // Index of `noun`, or size() when absent.
  std::size_t index_of(const std::string& noun) const;

 private:
  std::vector<std::string> nouns_;
  Tensor matrix_;
};

// Deterministic stand-in for a frozen text encoder: the noun's bytes are
// hashed together with `seed`, the hash seeds a generator that draws D
// components uniformly in [-1, 1), and the vector is normalized.
TextEmbeddings toy_encode(const std::vector<std::string>& nouns, std::size_t dim, std::uint64_t seed);

// Embeddings JSON: {"dim": D, "entries": [{"noun": str, "vec": [...]}, ...]}
nlohmann::json embeddings_to_json(const TextEmbeddings& emb);
TextEmbeddings embeddings_from_json(const nlohmann::json& j);
TextEmbeddings load_embeddings(const std::filesystem::path& path);
// Writes the offline vocabulary consumed at inference time.
void bake_offline_vocabulary(const TextEmbeddings& emb, const std::filesystem::path& path);

enum class NounOrigin { kPositive, kNegative };

struct Vocabulary {
  std::size_t m = 80;
  std::vector<std::string> entries;
  std::vector<NounOrigin> origins;
  // Positives beyond the first M that did not fit.
  std::size_t truncated_positives = 0;
};

inline constexpr std::size_t kDefaultVocabularySize = 80;

// Online training vocabulary: all positives (first M if there are more),
// then negatives sampled uniformly without replacement from the pool until
// M entries exist or the pool is exhausted.
Vocabulary build_online_vocabulary(const std::vector<std::string>& positives,
                                   const std::vector<std::string>& negative_pool, std::size_t m,
                                   std::uint64_t seed);

// {"m": M, "entries": [{"noun": str, "origin": "positive"|"negative"}, ...]}
nlohmann::json vocabulary_to_json(const Vocabulary& vocab);

}  // namespace ovw::text
