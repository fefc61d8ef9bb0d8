#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dcvh {

// Word vectors of a fixed dimension keyed by unique token. Immutable after load.
class GloveTable {
 public:
  GloveTable() = default;
  explicit GloveTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }

  // Throws ParseError on a duplicate token or a vector of the wrong length.
  void insert(std::string token, std::span<const float> vec);
  std::optional<std::span<const float>> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// GloVe text format: "<token> <f1> ... <fd>" per line, space separated, no header.
GloveTable load_glove(const std::filesystem::path& path);
GloveTable parse_glove(std::string_view text);
std::string format_glove(const GloveTable& table);
void save_glove(const GloveTable& table, const std::filesystem::path& path);

// Lowercase and strip surrounding ASCII punctuation.
std::string normalize_token(std::string_view token);

enum class OovPolicy { kSkip, kZero };

struct TextVector {
  std::vector<double> data;  // dim * max_words, zero padded
  std::size_t used_words = 0;
};

// Concatenates the vectors of the first max_words resolved tokens in order.
TextVector vectorize(std::span<const std::string> tokens, const GloveTable& table,
                     std::size_t max_words, OovPolicy oov = OovPolicy::kSkip);

}  // namespace dcvh
