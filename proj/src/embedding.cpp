#include "dcvh/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "dcvh/binary_io.hpp"
#include "dcvh/error.hpp"

namespace dcvh {

void GloveTable::insert(std::string token, std::span<const float> vec) {
  if (vec.size() != dim_) {
    throw ParseError("vector for '" + token + "' has " + std::to_string(vec.size()) +
                     " components, expected " + std::to_string(dim_));
  }
  if (index_.contains(token)) throw ParseError("duplicate token '" + token + "'");
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  data_.insert(data_.end(), vec.begin(), vec.end());
}

std::optional<std::span<const float>> GloveTable::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(data_).subspan(it->second * dim_, dim_);
}

GloveTable parse_glove(std::string_view text) {
  GloveTable table;
  bool have_dim = false;
  std::vector<float> vec;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(' ') == std::string_view::npos) continue;

    const std::size_t sp = line.find(' ');
    if (sp == 0 || sp == std::string_view::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected a token followed by floats");
    }
    std::string token(line.substr(0, sp));
    vec.clear();
    std::size_t pos = sp;
    while (pos < line.size()) {
      while (pos < line.size() && line[pos] == ' ') ++pos;
      if (pos >= line.size()) break;
      float v = 0.0f;
      auto [end, ec] = std::from_chars(line.data() + pos, line.data() + line.size(), v);
      if (ec != std::errc() || (end != line.data() + line.size() && *end != ' ')) {
        throw ParseError("line " + std::to_string(line_no) + ": malformed number");
      }
      vec.push_back(v);
      pos = static_cast<std::size_t>(end - line.data());
    }
    if (!have_dim) {
      if (vec.empty()) throw ParseError("line " + std::to_string(line_no) + ": no vector components");
      table = GloveTable(vec.size());
      have_dim = true;
    } else if (vec.size() != table.dim()) {
      throw ParseError("line " + std::to_string(line_no) + ": " + std::to_string(vec.size()) +
                       " components, expected " + std::to_string(table.dim()));
    }
    try {
      table.insert(std::move(token), vec);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_dim) throw FormatError("GloVe file contains no vectors");
  return table;
}

GloveTable load_glove(const std::filesystem::path& path) { return parse_glove(io::read_text(path)); }

std::string format_glove(const GloveTable& table) {
  std::string out;
  char buf[64];
  for (const std::string& token : table.tokens()) {
    out += token;
    const std::span<const float> vec = *table.find(token);
    for (float v : vec) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out += ' ';
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

void save_glove(const GloveTable& table, const std::filesystem::path& path) {
  io::write_text(path, format_glove(table));
}

std::string normalize_token(std::string_view token) {
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (!token.empty() && is_punct(token.front())) token.remove_prefix(1);
  while (!token.empty() && is_punct(token.back())) token.remove_suffix(1);
  std::string out(token);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

TextVector vectorize(std::span<const std::string> tokens, const GloveTable& table,
                     std::size_t max_words, OovPolicy oov) {
  if (max_words == 0) throw ArgumentError("vectorize: max_words must be at least 1");
  const std::size_t dim = table.dim();
  TextVector out{std::vector<double>(dim * max_words, 0.0), 0};
  for (const std::string& raw : tokens) {
    if (out.used_words == max_words) break;
    const std::string key = normalize_token(raw);
    auto vec = key.empty() ? std::nullopt : table.find(key);
    if (!vec) {
      if (oov == OovPolicy::kZero) ++out.used_words;
      continue;
    }
    std::copy(vec->begin(), vec->end(), out.data.begin() + static_cast<std::ptrdiff_t>(out.used_words * dim));
    ++out.used_words;
  }
  return out;
}

}  // namespace dcvh
