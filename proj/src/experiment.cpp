#include "dcvh/experiment.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <json.hpp>

#include "dcvh/binary_io.hpp"
#include "dcvh/error.hpp"

namespace dcvh {

using nlohmann::json;
using nlohmann::ordered_json;

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.model = ModelConfig::full_scale();
  c.train = TrainConfig::full_scale();
  c.data.embed_dim = 300;
  c.data.max_words = 20;
  c.split.queries = 1000;
  return c;
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  if (split.queries >= data.n) throw ConfigError("split.queries must be below data.n");
  if (split.train > data.n - split.queries) throw ConfigError("split.train exceeds the database size");
  if (eval.top_k == 0 || eval.top_k > data.categories) throw ConfigError("eval.top_k must lie in [1, categories]");
  if (model.code_bits == 0) throw ConfigError("model.code_bits must be positive");
}

std::string oov_name(OovPolicy oov) { return oov == OovPolicy::kSkip ? "skip" : "zero"; }

OovPolicy parse_oov(const std::string& name) {
  if (name == "skip") return OovPolicy::kSkip;
  if (name == "zero") return OovPolicy::kZero;
  throw ConfigError("unknown oov policy '" + name + "' (expected skip or zero)");
}

namespace {

ordered_json schedule_json(const LrSchedule& s) {
  return {{"base_rate", s.base_rate}, {"decay_factor", s.decay_factor}, {"decay_every", s.decay_every}};
}

// Visits each key of a JSON object; unknown keys are errors.
class Reader {
 public:
  Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <class T>
  Reader& field(const char* key, T& out) {
    known_.push_back(key);
    if (auto it = obj_.find(key); it != obj_.end()) {
      try {
        out = it->template get<T>();
      } catch (const json::exception&) {
        throw ConfigError(path(key) + " has the wrong type");
      }
    }
    return *this;
  }

  template <class F>
  Reader& nested(const char* key, F&& read) {
    known_.push_back(key);
    if (auto it = obj_.find(key); it != obj_.end()) read(Reader(*it, path(key)));
    return *this;
  }

  void done() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end()) {
        throw ConfigError("unknown configuration key " + path(it.key().c_str()));
      }
  }

 private:
  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  const json& obj_;
  std::string where_;
  std::vector<std::string> known_;
};

void read_schedule(Reader r, LrSchedule& s) {
  r.field("base_rate", s.base_rate).field("decay_factor", s.decay_factor).field("decay_every", s.decay_every).done();
}

}  // namespace

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["data"] = {{"n", data.n},
               {"categories", data.categories},
               {"feature_dim", data.feature_dim},
               {"embed_dim", data.embed_dim},
               {"max_words", data.max_words},
               {"vocab_per_class", data.vocab_per_class},
               {"max_labels", data.max_labels},
               {"noise", data.noise},
               {"tag_noise", data.tag_noise},
               {"stopword_rate", data.stopword_rate},
               {"seed", data.seed}};
  j["split"] = {{"queries", split.queries}, {"train", split.train}, {"seed", split.seed}};
  j["model"] = {{"code_bits", model.code_bits},
                {"image_hidden", model.image_hidden},
                {"conv1_kernels", model.conv1_kernels},
                {"conv2_kernels", model.conv2_kernels},
                {"text_fc", model.text_fc},
                {"init_range", model.init_range}};
  j["train"] = {{"lambda", train.lambda},
                {"pretrain_rate", schedule_json(train.pretrain_rate)},
                {"joint_rate", schedule_json(train.joint_rate)},
                {"batch_size", train.batch_size},
                {"pretrain_iters_image", train.pretrain_iters_image},
                {"pretrain_iters_text", train.pretrain_iters_text},
                {"joint_iters", train.joint_iters},
                {"seed", train.seed},
                {"log_every", train.log_every}};
  j["eval"] = {{"top_k", eval.top_k}, {"oov", oov_name(eval.oov)}, {"baseline_seed", eval.baseline_seed}};
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  std::string oov = oov_name(c.eval.oov);
  Reader(j, "")
      .nested("data",
              [&](Reader r) {
                r.field("n", c.data.n)
                    .field("categories", c.data.categories)
                    .field("feature_dim", c.data.feature_dim)
                    .field("embed_dim", c.data.embed_dim)
                    .field("max_words", c.data.max_words)
                    .field("vocab_per_class", c.data.vocab_per_class)
                    .field("max_labels", c.data.max_labels)
                    .field("noise", c.data.noise)
                    .field("tag_noise", c.data.tag_noise)
                    .field("stopword_rate", c.data.stopword_rate)
                    .field("seed", c.data.seed)
                    .done();
              })
      .nested("split",
              [&](Reader r) {
                r.field("queries", c.split.queries).field("train", c.split.train).field("seed", c.split.seed).done();
              })
      .nested("model",
              [&](Reader r) {
                r.field("code_bits", c.model.code_bits)
                    .field("image_hidden", c.model.image_hidden)
                    .field("conv1_kernels", c.model.conv1_kernels)
                    .field("conv2_kernels", c.model.conv2_kernels)
                    .field("text_fc", c.model.text_fc)
                    .field("init_range", c.model.init_range)
                    .done();
              })
      .nested("train",
              [&](Reader r) {
                r.field("lambda", c.train.lambda)
                    .nested("pretrain_rate", [&](Reader s) { read_schedule(std::move(s), c.train.pretrain_rate); })
                    .nested("joint_rate", [&](Reader s) { read_schedule(std::move(s), c.train.joint_rate); })
                    .field("batch_size", c.train.batch_size)
                    .field("pretrain_iters_image", c.train.pretrain_iters_image)
                    .field("pretrain_iters_text", c.train.pretrain_iters_text)
                    .field("joint_iters", c.train.joint_iters)
                    .field("seed", c.train.seed)
                    .field("log_every", c.train.log_every)
                    .done();
              })
      .nested("eval",
              [&](Reader r) {
                r.field("top_k", c.eval.top_k).field("oov", oov).field("baseline_seed", c.eval.baseline_seed).done();
              })
      .done();
  c.eval.oov = parse_oov(oov);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return from_json(io::read_text(path));
}

std::string Metrics::to_json() const {
  ordered_json j;
  j["lambda"] = lambda;
  j["code_bits"] = code_bits;
  j["map_i2t"] = map_i2t;
  j["map_t2i"] = map_t2i;
  j["map_i2i"] = map_i2i;
  j["map_t2t"] = map_t2t;
  j["baseline_i2t"] = baseline_i2t;
  j["baseline_t2i"] = baseline_t2i;
  j["o_p"] = o_p;
  j["o_r"] = o_r;
  j["o_f1"] = o_f1;
  j["mean_paired_hamming"] = mean_paired_hamming;
  j["initial_loss"] = initial_loss;
  j["final_loss"] = final_loss;
  return j.dump();
}

double permutation_baseline_map(const PackedCodeSet& queries, const PackedCodeSet& database,
                                const LabelMatrix& query_labels, const LabelMatrix& database_labels,
                                std::uint64_t seed) {
  std::vector<std::size_t> perm(database_labels.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const LabelMatrix shuffled = database_labels.subset(perm);
  return mean_average_precision(queries, database, RelevanceRule(query_labels, shuffled));
}

namespace {

constexpr char kCodeMagic[] = "DCVZ";
constexpr std::uint8_t kCodeVersion = 1;

}  // namespace

std::vector<std::uint8_t> CodeFile::serialize() const {
  require_rank(z, 2, "code file");
  if (z.dim(0) != ids.size()) throw DimensionError("code file has " + std::to_string(ids.size()) + " ids for " +
                                                   std::to_string(z.dim(0)) + " rows");
  io::ByteWriter w;
  w.magic(kCodeMagic);
  w.u8(kCodeVersion);
  w.u8(view == View::kImage ? 0 : 1);
  w.u64(ids.size());
  w.u32(static_cast<std::uint32_t>(z.dim(1)));
  for (auto id : ids) w.u64(id);
  for (double v : z.data()) w.f64(v);
  return w.buffer();
}

CodeFile CodeFile::deserialize(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCodeMagic, "code file");
  if (const auto v = r.u8(); v != kCodeVersion) throw FormatError("unsupported code file version " + std::to_string(v));
  CodeFile f;
  const auto view = r.u8();
  if (view > 1) throw FormatError("code file names unknown view " + std::to_string(view));
  f.view = view == 0 ? View::kImage : View::kText;
  const std::uint64_t n = r.u64();
  const std::uint32_t bits = r.u32();
  if (n > r.remaining() / (8 + 8 * std::max<std::uint64_t>(bits, 1))) throw FormatError("code file is truncated");
  f.ids.resize(n);
  for (auto& id : f.ids) id = r.u64();
  f.z = Tensor({n, bits});
  for (double& v : f.z.data()) v = r.f64();
  if (!r.at_end()) throw FormatError("trailing bytes after code file");
  return f;
}

void CodeFile::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

CodeFile CodeFile::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

PackedCodeSet CodeFile::pack() const { return PackedCodeSet::pack(binarize(z), ids); }

CodeFile encode_corpus(ViewModel& view, const Corpus& corpus, const GloveTable& glove, OovPolicy oov) {
  const PairedData d = paired_views(corpus, glove, oov);
  return {view.view(), corpus.ids, encode(view, view.view() == View::kImage ? d.image : d.text)};
}

Metrics evaluate(TwoViewModel& model, const Corpus& queries, const Corpus& database, const GloveTable& glove,
                 const EvalOptions& options) {
  const CodeFile qi = encode_corpus(model.image, queries, glove, options.oov);
  const CodeFile qt = encode_corpus(model.text, queries, glove, options.oov);
  const CodeFile di = encode_corpus(model.image, database, glove, options.oov);
  const CodeFile dt = encode_corpus(model.text, database, glove, options.oov);
  const PackedCodeSet pqi = qi.pack(), pqt = qt.pack(), pdi = di.pack(), pdt = dt.pack();
  const RelevanceRule rule(queries.labels, database.labels);

  Metrics m;
  m.code_bits = model.image.code_bits();
  m.map_i2t = mean_average_precision(pqi, pdt, rule);
  m.map_t2i = mean_average_precision(pqt, pdi, rule);
  m.map_i2i = mean_average_precision(pqi, pdi, rule);
  m.map_t2t = mean_average_precision(pqt, pdt, rule);
  m.baseline_i2t = permutation_baseline_map(pqi, pdt, queries.labels, database.labels, options.baseline_seed);
  m.baseline_t2i = permutation_baseline_map(pqt, pdi, queries.labels, database.labels, options.baseline_seed);

  const BitMatrix qbits = binarize(qi.z);
  Tensor binary({qbits.rows(), qbits.cols()});
  for (std::size_t r = 0; r < qbits.rows(); ++r)
    for (std::size_t c = 0; c < qbits.cols(); ++c) binary.at(r, c) = qbits.get(r, c) ? 1.0 : 0.0;
  const OverallPrf prf = overall_prf(annotate_topk(binary, model.image.classifier, options.top_k), queries.labels);
  m.o_p = prf.precision;
  m.o_r = prf.recall;
  m.o_f1 = prf.f1;

  m.mean_paired_hamming = alignment_exact(binarize(di.z), binarize(dt.z));
  return m;
}

ExperimentResult run_experiment(const Corpus& corpus, const GloveTable& glove, const SplitSpec& split,
                                const ModelConfig& model, const TrainConfig& train_config, const EvalOptions& eval,
                                const RecordSink& sink) {
  const Corpus queries = corpus.subset(corpus.rows_of(split.query_ids));
  const Corpus database = corpus.subset(corpus.rows_of(split.database_ids));
  const Corpus train_set = corpus.subset(corpus.rows_of(split.train_ids));
  const PairedData data = paired_views(train_set, glove, eval.oov);
  const ModelSpec spec{corpus.feature_dim, corpus.embed_dim, corpus.max_words, corpus.categories(), model};

  const double initial = measure_loss(TwoViewModel::create(spec, train_config.seed), data, train_config.lambda).total;
  ExperimentResult result{train(data, spec, train_config, sink), {}};
  result.metrics = evaluate(result.state.model, queries, database, glove, eval);
  result.metrics.lambda = train_config.lambda;
  result.metrics.initial_loss = initial;
  result.metrics.final_loss = measure_loss(result.state.model, data, train_config.lambda).total;
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RecordSink& sink) {
  config.validate();
  const SyntheticCorpus synth = generate_synthetic(config.data);
  const SplitSpec split = make_split(synth.corpus, config.split.queries, config.split.seed, config.split.train);
  return run_experiment(synth.corpus, synth.glove, split, config.model, config.train, config.eval, sink);
}

std::vector<Metrics> sweep_lambda(const ExperimentConfig& config, std::span<const double> grid) {
  config.validate();
  const SyntheticCorpus synth = generate_synthetic(config.data);
  const SplitSpec split = make_split(synth.corpus, config.split.queries, config.split.seed, config.split.train);
  std::vector<Metrics> out;
  for (double lambda : grid) {
    TrainConfig t = config.train;
    t.lambda = lambda;
    out.push_back(run_experiment(synth.corpus, synth.glove, split, config.model, t, config.eval).metrics);
  }
  return out;
}

}  // namespace dcvh
