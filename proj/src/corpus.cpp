#include "dcvh/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "dcvh/binary_io.hpp"
#include "dcvh/error.hpp"

namespace dcvh {

namespace {

constexpr char kCorpusMagic[] = "DCVC";
constexpr std::uint8_t kCorpusVersion = 1;

const char* const kStopwords[] = {"the", "a", "of", "and", "with", "on", "in", "at"};

std::size_t label_bytes(std::size_t categories) { return (categories + 7) / 8; }

}  // namespace

void Corpus::validate() const {
  const std::size_t n = ids.size();
  require_rank(features, 2, "corpus features");
  if (features.dim(0) != n || tokens.size() != n || labels.rows() != n) {
    throw IngestionError("corpus columns disagree: " + std::to_string(n) + " ids, " +
                         std::to_string(features.dim(0)) + " feature rows, " + std::to_string(tokens.size()) +
                         " token lists, " + std::to_string(labels.rows()) + " label rows");
  }
  if (features.dim(1) != feature_dim) {
    throw IngestionError("feature width " + std::to_string(features.dim(1)) + " does not match header " +
                         std::to_string(feature_dim));
  }
  if (categories() == 0) throw IngestionError("corpus has no categories");
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(ids[i]).second) throw IngestionError("duplicate instance id " + std::to_string(ids[i]));
    if (labels.positives(i) == 0) throw IngestionError("instance " + std::to_string(ids[i]) + " has no labels");
  }
  if (!features.all_finite()) throw IngestionError("corpus features contain non-finite values");
}

Corpus Corpus::subset(std::span<const std::size_t> rows) const {
  Corpus out;
  out.feature_dim = feature_dim;
  out.max_words = max_words;
  out.embed_dim = embed_dim;
  out.features = gather_rows(features, rows);
  out.labels = labels.subset(rows);
  for (std::size_t r : rows) {
    out.ids.push_back(ids.at(r));
    out.tokens.push_back(tokens.at(r));
  }
  return out;
}

std::vector<std::size_t> Corpus::rows_of(std::span<const std::uint64_t> wanted) const {
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(wanted.size());
  for (std::uint64_t id : wanted) {
    auto it = index.find(id);
    if (it == index.end()) throw IngestionError("id " + std::to_string(id) + " is not in the corpus");
    rows.push_back(it->second);
  }
  return rows;
}

std::vector<std::uint8_t> Corpus::serialize() const {
  validate();
  io::ByteWriter w;
  w.magic(kCorpusMagic);
  w.u8(kCorpusVersion);
  w.u64(size());
  w.u32(static_cast<std::uint32_t>(feature_dim));
  w.u32(static_cast<std::uint32_t>(categories()));
  w.u32(static_cast<std::uint32_t>(max_words));
  w.u32(static_cast<std::uint32_t>(embed_dim));
  std::vector<std::uint8_t> packed(label_bytes(categories()));
  for (std::size_t i = 0; i < size(); ++i) {
    w.u64(ids[i]);
    for (std::size_t j = 0; j < feature_dim; ++j) w.f64(features.at(i, j));
    w.u32(static_cast<std::uint32_t>(tokens[i].size()));
    for (const auto& t : tokens[i]) w.str(t);
    std::fill(packed.begin(), packed.end(), 0);
    for (std::size_t p = 0; p < categories(); ++p)
      if (labels.get(i, p)) packed[p / 8] |= static_cast<std::uint8_t>(1u << (p % 8));
    w.bytes(packed);
  }
  return w.buffer();
}

Corpus Corpus::deserialize(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCorpusMagic, "corpus");
  const std::uint8_t version = r.u8();
  if (version != kCorpusVersion) throw FormatError("unsupported corpus version " + std::to_string(version));
  Corpus c;
  const std::uint64_t n = r.u64();
  c.feature_dim = r.u32();
  const std::size_t cats = r.u32();
  c.max_words = r.u32();
  c.embed_dim = r.u32();
  // each instance takes at least id + features + token count + labels
  const std::size_t min_row = 8 + 8 * c.feature_dim + 4 + label_bytes(cats);
  if (n > r.remaining() / min_row) throw FormatError("corpus header claims more instances than the file holds");

  c.features = Tensor({n, c.feature_dim});
  c.labels = LabelMatrix(n, cats);
  c.ids.resize(n);
  c.tokens.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.ids[i] = r.u64();
    for (std::size_t j = 0; j < c.feature_dim; ++j) c.features.at(i, j) = r.f64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t t = 0; t < count; ++t) c.tokens[i].push_back(r.str());
    auto packed = r.bytes(label_bytes(cats));
    for (std::size_t p = 0; p < cats; ++p) c.labels.set(i, p, (packed[p / 8] >> (p % 8)) & 1u);
    if (cats % 8 && (packed.back() >> (cats % 8)) != 0) throw FormatError("nonzero label padding bits");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after corpus");
  c.validate();
  return c;
}

void Corpus::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

Corpus Corpus::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

void SyntheticParams::validate() const {
  if (n < 1) throw ArgumentError("synthetic corpus needs n >= 1");
  if (categories < 2) throw ArgumentError("synthetic corpus needs at least 2 categories");
  if (feature_dim == 0 || embed_dim == 0 || max_words == 0 || vocab_per_class == 0) {
    throw ArgumentError("synthetic corpus dimensions must be positive");
  }
  if (max_labels < 1) throw ArgumentError("max_labels must be at least 1");
  if (noise < 0 || tag_noise < 0 || tag_noise > 1 || stopword_rate < 0 || stopword_rate > 1) {
    throw ArgumentError("noise rates out of range");
  }
}

SyntheticCorpus generate_synthetic(const SyntheticParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  SyntheticCorpus out;
  Corpus& c = out.corpus;
  c.feature_dim = p.feature_dim;
  c.max_words = p.max_words;
  c.embed_dim = p.embed_dim;

  const Tensor anchors = Tensor::normal({p.categories, p.feature_dim}, 1.0, rng);

  out.glove = GloveTable(p.embed_dim);
  std::vector<std::vector<std::string>> vocab(p.categories);
  std::vector<float> vec(p.embed_dim);
  for (std::size_t k = 0; k < p.categories; ++k) {
    std::vector<double> centre(p.embed_dim);
    for (double& v : centre) v = unit(rng);
    for (std::size_t w = 0; w < p.vocab_per_class; ++w) {
      for (std::size_t j = 0; j < p.embed_dim; ++j) vec[j] = static_cast<float>(centre[j] + 0.35 * unit(rng));
      vocab[k].push_back("c" + std::to_string(k) + "w" + std::to_string(w));
      out.glove.insert(vocab[k].back(), vec);
    }
  }
  for (const char* s : kStopwords) {
    for (float& v : vec) v = static_cast<float>(0.5 * unit(rng));
    out.glove.insert(s, vec);
  }

  const std::size_t max_labels = std::min(p.max_labels, p.categories);
  std::vector<std::size_t> order(p.categories);
  c.features = Tensor({p.n, p.feature_dim});
  c.labels = LabelMatrix(p.n, p.categories);
  c.tokens.resize(p.n);
  for (std::size_t i = 0; i < p.n; ++i) {
    c.ids.push_back(i);
    const std::size_t count = 1 + rng() % max_labels;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> cats(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(cats.begin(), cats.end());
    for (std::size_t k : cats) c.labels.set(i, k);

    for (std::size_t j = 0; j < p.feature_dim; ++j) {
      double v = 0.0;
      for (std::size_t k : cats) v += anchors.at(k, j);
      c.features.at(i, j) = v;
    }
    if (p.noise > 0)
      for (std::size_t j = 0; j < p.feature_dim; ++j) c.features.at(i, j) += p.noise * unit(rng);

    const std::size_t lo = std::max<std::size_t>(2, p.max_words / 2), hi = p.max_words + 2;
    const std::size_t words = lo + rng() % (hi - lo + 1);
    for (std::size_t w = 0; w < words; ++w) {
      if (coin(rng) < p.stopword_rate) {
        c.tokens[i].emplace_back(kStopwords[rng() % std::size(kStopwords)]);
        continue;
      }
      const std::size_t k = coin(rng) < p.tag_noise ? rng() % p.categories : cats[rng() % cats.size()];
      c.tokens[i].push_back(vocab[k][rng() % p.vocab_per_class]);
    }
  }
  return out;
}

std::string SplitSpec::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["query_ids"] = query_ids;
  j["database_ids"] = database_ids;
  j["train_ids"] = train_ids;
  return j.dump() + "\n";
}

SplitSpec SplitSpec::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.query_ids = j.at("query_ids").get<std::vector<std::uint64_t>>();
    s.database_ids = j.at("database_ids").get<std::vector<std::uint64_t>>();
    s.train_ids = j.at("train_ids").get<std::vector<std::uint64_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split file: ") + e.what());
  }
}

SplitSpec make_split(const Corpus& corpus, std::size_t n_query, std::uint64_t seed, std::size_t n_train) {
  const std::size_t n = corpus.size();
  if (n_query >= n) {
    throw ArgumentError("query count " + std::to_string(n_query) + " must be below the corpus size " +
                        std::to_string(n));
  }
  if (n_train > n - n_query) {
    throw ArgumentError("training count " + std::to_string(n_train) + " exceeds the database size " +
                        std::to_string(n - n_query));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::shuffle(rows.begin(), rows.end(), rng);

  SplitSpec s;
  s.seed = seed;
  for (std::size_t i = 0; i < n; ++i) (i < n_query ? s.query_ids : s.database_ids).push_back(corpus.ids[rows[i]]);
  std::sort(s.query_ids.begin(), s.query_ids.end());
  std::sort(s.database_ids.begin(), s.database_ids.end());
  if (n_train == 0) {
    s.train_ids = s.database_ids;
  } else {
    s.train_ids.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_query),
                       rows.begin() + static_cast<std::ptrdiff_t>(n_query + n_train));
    for (auto& r : s.train_ids) r = corpus.ids[r];
    std::sort(s.train_ids.begin(), s.train_ids.end());
  }
  return s;
}

PairedData paired_views(const Corpus& corpus, const GloveTable& glove, OovPolicy oov) {
  if (glove.dim() != corpus.embed_dim) {
    throw DimensionError("word vectors have dimension " + std::to_string(glove.dim()) + ", corpus expects " +
                         std::to_string(corpus.embed_dim));
  }
  const std::size_t n = corpus.size(), width = corpus.embed_dim * corpus.max_words;
  PairedData d{corpus.features, Tensor({n, width}), corpus.labels};
  for (std::size_t i = 0; i < n; ++i) {
    auto tv = vectorize(corpus.tokens[i], glove, corpus.max_words, oov);
    std::copy(tv.data.begin(), tv.data.end(), d.text.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return d;
}

GloveTable restrict_vocabulary(const GloveTable& glove, const Corpus& corpus) {
  std::unordered_set<std::string> used;
  for (const auto& list : corpus.tokens)
    for (const auto& t : list) used.insert(normalize_token(t));
  GloveTable out(glove.dim());
  for (const auto& tok : glove.tokens())
    if (used.count(tok)) out.insert(tok, *glove.find(tok));
  return out;
}

}  // namespace dcvh
