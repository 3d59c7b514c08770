#include "ovw/text_embed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "ovw/errors.hpp"
#include "ovw/io.hpp"

namespace ovw::text {
namespace {

// 64-bit FNV-1a.
std::uint64_t hash_bytes(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9e3779b97f4a7c15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> dedup_in_order(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : in)
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

}  // namespace

TextEmbeddings::TextEmbeddings(std::vector<std::string> nouns, const Tensor& matrix)
    : nouns_(std::move(nouns)), matrix_(matrix) {
  if (nouns_.empty()) throw InputError("text embeddings need at least one noun");
  if (matrix.rank() != 2 || matrix.extent(0) != nouns_.size()) {
    throw DimensionError("embedding matrix " + shape_string(matrix.shape()) + " does not match " +
                         std::to_string(nouns_.size()) + " nouns");
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : nouns_) {
    if (!seen.insert(n).second) throw InputError("duplicate noun \"" + n + "\"");
  }
  matrix_ = l2_normalize(matrix);
}

std::size_t TextEmbeddings::index_of(const std::string& noun) const {
  return static_cast<std::size_t>(std::find(nouns_.begin(), nouns_.end(), noun) - nouns_.begin());
}

TextEmbeddings toy_encode(const std::vector<std::string>& nouns, std::size_t dim, std::uint64_t seed) {
  if (dim < 2) throw InputError("toy_encode: dim must be >= 2");
  if (nouns.empty()) throw InputError("toy_encode: no nouns");
  std::vector<double> data;
  data.reserve(nouns.size() * dim);
  for (const auto& noun : nouns) {
    std::mt19937_64 gen(hash_bytes(noun, seed));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < dim; ++i) data.push_back(u(gen));
  }
  return TextEmbeddings(nouns, Tensor({nouns.size(), dim}, std::move(data)));
}

nlohmann::json embeddings_to_json(const TextEmbeddings& emb) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const auto row = emb.matrix().row(i);
    entries.push_back({{"noun", emb.nouns()[i]}, {"vec", std::vector<double>(row.begin(), row.end())}});
  }
  return {{"dim", emb.dim()}, {"entries", entries}};
}

TextEmbeddings embeddings_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_unsigned() || !j.contains("entries") ||
      !j["entries"].is_array()) {
    throw LoadError("embeddings JSON needs \"dim\" (positive integer) and \"entries\" (array)");
  }
  const auto dim = j["dim"].get<std::size_t>();
  if (dim == 0) throw LoadError("embeddings dim must be positive");
  if (j["entries"].empty()) throw LoadError("embeddings file has no entries");
  std::vector<std::string> nouns;
  std::vector<double> data;
  for (const auto& e : j["entries"]) {
    if (!e.is_object() || !e.contains("noun") || !e["noun"].is_string() || !e.contains("vec") ||
        !e["vec"].is_array()) {
      throw LoadError("embedding entry needs \"noun\" (string) and \"vec\" (array)");
    }
    if (e["vec"].size() != dim) {
      throw LoadError("embedding for \"" + e["noun"].get<std::string>() + "\" has " +
                      std::to_string(e["vec"].size()) + " components, expected " + std::to_string(dim));
    }
    nouns.push_back(e["noun"].get<std::string>());
    for (const auto& v : e["vec"]) {
      if (!v.is_number()) throw LoadError("embedding components must be numbers");
      data.push_back(v.get<double>());
    }
  }
  try {
    return TextEmbeddings(std::move(nouns), Tensor({j["entries"].size(), dim}, std::move(data)));
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("invalid embeddings: ") + e.what());
  }
}

TextEmbeddings load_embeddings(const std::filesystem::path& path) {
  return embeddings_from_json(read_json_file(path));
}

void bake_offline_vocabulary(const TextEmbeddings& emb, const std::filesystem::path& path) {
  write_json_file(path, embeddings_to_json(emb));
}

Vocabulary build_online_vocabulary(const std::vector<std::string>& positives,
                                   const std::vector<std::string>& negative_pool, std::size_t m,
                                   std::uint64_t seed) {
  if (m == 0) throw InputError("vocabulary size M must be >= 1");
  const auto pos = dedup_in_order(positives);
  auto pool = dedup_in_order(negative_pool);
  if (pos.empty() && pool.empty()) throw InputError("no positives and no negatives to build a vocabulary");
  const std::unordered_set<std::string> pos_set(pos.begin(), pos.end());
  for (const auto& n : pool) {
    if (pos_set.count(n)) throw InputError("noun \"" + n + "\" is both positive and negative");
  }

  Vocabulary vocab;
  vocab.m = m;
  const std::size_t kept = std::min(pos.size(), m);
  vocab.truncated_positives = pos.size() - kept;
  for (std::size_t i = 0; i < kept; ++i) {
    vocab.entries.push_back(pos[i]);
    vocab.origins.push_back(NounOrigin::kPositive);
  }

  // Partial Fisher-Yates: the first `slots` pool entries become the sample.
  const std::size_t slots = std::min(m - kept, pool.size());
  std::mt19937_64 gen(seed);
  for (std::size_t i = 0; i < slots; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(gen)]);
    vocab.entries.push_back(pool[i]);
    vocab.origins.push_back(NounOrigin::kNegative);
  }
  return vocab;
}

nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < vocab.entries.size(); ++i) {
    entries.push_back({{"noun", vocab.entries[i]},
                       {"origin", vocab.origins[i] == NounOrigin::kPositive ? "positive" : "negative"}});
  }
  return {{"m", vocab.m}, {"entries", entries}};
}

}  // namespace ovw::text
