#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcvh/embedding.hpp"
#include "dcvh/labels.hpp"
#include "dcvh/tensor.hpp"
#include "dcvh/trainer.hpp"

namespace dcvh {

// Paired image features, token lists and labels for n instances.
struct Corpus {
  std::size_t feature_dim = 0;
  std::size_t max_words = 0;
  std::size_t embed_dim = 0;
  std::vector<std::uint64_t> ids;
  Tensor features;  // n × feature_dim
  std::vector<std::vector<std::string>> tokens;
  LabelMatrix labels;

  std::size_t size() const { return ids.size(); }
  std::size_t categories() const { return labels.categories(); }

  // Shapes agree with the header, ids are unique, every instance has a label.
  void validate() const;
  Corpus subset(std::span<const std::size_t> rows) const;
  // Row index of each id; IngestionError for unknown ids.
  std::vector<std::size_t> rows_of(std::span<const std::uint64_t> ids) const;

  // "DCVC", version byte, header, then per instance: id, features, tokens,
  // LSB-first label bytes.
  std::vector<std::uint8_t> serialize() const;
  static Corpus deserialize(std::vector<std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Corpus load(const std::filesystem::path& path);
};

struct SyntheticParams {
  std::size_t n = 2500;
  std::size_t categories = 8;
  std::size_t feature_dim = 64;
  std::size_t embed_dim = 16;
  std::size_t max_words = 8;
  std::size_t vocab_per_class = 20;
  std::size_t max_labels = 3;
  double noise = 0.5;        // feature noise standard deviation
  double tag_noise = 0.1;    // chance a token comes from an unrelated category
  double stopword_rate = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Corpus corpus;
  GloveTable glove;
};

// Each instance draws 1..max_labels distinct categories; its features are the
// sum of per-category anchors plus Gaussian noise and its tokens come from the
// vocabularies of its categories. Word vectors cluster around per-category
// centres. Deterministic in the seed.
SyntheticCorpus generate_synthetic(const SyntheticParams& params);

struct SplitSpec {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> query_ids;
  std::vector<std::uint64_t> database_ids;
  std::vector<std::uint64_t> train_ids;

  std::string to_json() const;
  static SplitSpec from_json(const std::string& text);
};

// Uniformly samples n_query queries; the rest forms the database. The training
// pool is the database, or n_train rows sampled from it when n_train > 0.
SplitSpec make_split(const Corpus& corpus, std::size_t n_query, std::uint64_t seed, std::size_t n_train = 0);

// Image features, concatenated word vectors and labels for every instance.
PairedData paired_views(const Corpus& corpus, const GloveTable& glove, OovPolicy oov = OovPolicy::kSkip);

// Drops every word the corpus never uses.
GloveTable restrict_vocabulary(const GloveTable& glove, const Corpus& corpus);

}  // namespace dcvh
