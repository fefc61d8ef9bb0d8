// dcvh: data generation, training, indexing, retrieval and evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcvh/binary_io.hpp"
#include "dcvh/corpus.hpp"
#include "dcvh/error.hpp"
#include "dcvh/evaluation.hpp"
#include "dcvh/experiment.hpp"
#include "dcvh/gradient_suite.hpp"
#include "dcvh/models.hpp"
#include "dcvh/retrieval.hpp"
#include "dcvh/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace dcvh;

namespace {

// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    io::write_text(path, text);
  }
}

struct ConfigOptions {
  std::string path;
  std::string preset = "desk";
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", path, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--preset", preset, "Defaults to start from")->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--lambda", lambda, "Override train.lambda");
    cmd->add_option("--seed", seed, "Override train.seed");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = preset == "full" ? ExperimentConfig::full() : ExperimentConfig::desk();
    if (!path.empty()) {
      // a file overrides the preset key by key
      auto base = nlohmann::json::parse(c.to_json());
      auto over = nlohmann::json::parse(io::read_text(path), nullptr, false);
      if (over.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
      base.merge_patch(over);
      c = ExperimentConfig::from_json(base.dump());
    }
    if (lambda) c.train.lambda = *lambda;
    if (seed) c.train.seed = *seed;
    c.validate();
    return c;
  }
};

ordered_json record_json(const TrainRecord& r) {
  return {{"phase", phase_name(r.phase)}, {"iteration", r.iteration}, {"l_image", r.loss.l_image},
          {"l_text", r.loss.l_text},      {"j_align", r.loss.j_align},  {"total", r.loss.total},
          {"rate", r.rate}};
}

// Line-delimited training log; stays closed when no path is given.
class TrainLog {
 public:
  explicit TrainLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::binary | std::ios::trunc);
      if (!out_) throw IngestionError("cannot open log file " + path);
    }
  }
  RecordSink sink() {
    return [this](const TrainRecord& r) {
      if (out_.is_open()) out_ << record_json(r).dump() << '\n';
    };
  }

 private:
  std::ofstream out_;
};

Corpus select(const Corpus& corpus, const std::string& split_path, const std::string& subset) {
  if (subset == "all") return corpus;
  if (split_path.empty()) throw ArgumentError("--subset " + subset + " needs --split");
  const SplitSpec split = SplitSpec::from_json(io::read_text(split_path));
  const auto& ids = subset == "query" ? split.query_ids : subset == "database" ? split.database_ids : split.train_ids;
  return corpus.subset(corpus.rows_of(ids));
}

PackedCodeSet load_codes(const fs::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "DCVZ") {
    return CodeFile::deserialize(bytes).pack();
  }
  return PackedCodeSet::deserialize(bytes);
}

LabelMatrix labels_for(const Corpus& corpus, const PackedCodeSet& set) {
  return corpus.labels.subset(corpus.rows_of(set.ids()));
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("bad lambda value '" + item + "' in --grid");
    }
  }
  if (grid.empty()) throw ArgumentError("--grid is empty");
  for (double l : grid) validate_lambda(l);
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep cross-view hashing: train binary codes for paired images and texts, then search them"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus and matching word vectors");
  ConfigOptions gen_cfg;
  gen->add_option("--config", gen_cfg.path, "Experiment configuration; its data and split sections are used")
      ->check(CLI::ExistingFile);
  std::optional<std::size_t> gen_n, gen_cats, gen_feat, gen_embed, gen_words;
  std::optional<double> gen_noise;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_corpus, gen_glove, gen_split;
  gen->add_option("--n", gen_n, "Instances");
  gen->add_option("--categories", gen_cats, "Categories");
  gen->add_option("--feature-dim", gen_feat, "Image feature width");
  gen->add_option("--embed-dim", gen_embed, "Word vector dimension");
  gen->add_option("--max-words", gen_words, "Words per text vector");
  gen->add_option("--noise", gen_noise, "Feature noise standard deviation");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--corpus", gen_corpus, "Output corpus file")->required();
  gen->add_option("--glove", gen_glove, "Output word-vector file")->required();
  gen->add_option("--split", gen_split, "Also write a query/database split here");

  // split
  auto* split_cmd = app.add_subcommand("split", "Sample a query/database split");
  std::string split_corpus, split_out;
  std::size_t split_queries = 500, split_train = 0;
  std::uint64_t split_seed = 1;
  split_cmd->add_option("--corpus", split_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--queries", split_queries, "Query count");
  split_cmd->add_option("--train", split_train, "Training subset of the database (0: all of it)");
  split_cmd->add_option("--seed", split_seed, "Sampling seed");
  split_cmd->add_option("--out", split_out, "Output split file")->required();

  // import-glove
  auto* import = app.add_subcommand("import-glove", "Validate a GloVe file and keep the corpus vocabulary");
  std::string import_in, import_corpus, import_out;
  import->add_option("--input", import_in, "GloVe text file")->required()->check(CLI::ExistingFile);
  import->add_option("--corpus", import_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  import->add_option("--out", import_out, "Filtered GloVe file")->required();

  // pretrain / train
  struct TrainArgs {
    ConfigOptions cfg;
    std::string corpus, glove, split, out, log, from;
  };
  TrainArgs pre, tr;
  auto add_train_options = [](CLI::App* cmd, TrainArgs& a) {
    a.cfg.add_to(cmd);
    cmd->add_option("--corpus", a.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--glove", a.glove, "Word-vector file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--split", a.split, "Split file; training uses its train ids")->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out, "Output checkpoint")->required();
    cmd->add_option("--log", a.log, "Training log (JSON lines)");
  };
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Classification-only pretraining of both views");
  add_train_options(pretrain_cmd, pre);
  auto* train_cmd = app.add_subcommand("train", "Pretraining followed by joint training");
  add_train_options(train_cmd, tr);
  train_cmd->add_option("--from", tr.from, "Start the joint phase from this checkpoint")->check(CLI::ExistingFile);

  // encode
  auto* enc = app.add_subcommand("encode", "Continuous codes of one view for a corpus subset");
  std::string enc_ckpt, enc_corpus, enc_glove, enc_split, enc_view = "image", enc_subset = "all", enc_out;
  enc->add_option("--checkpoint", enc_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  enc->add_option("--corpus", enc_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  enc->add_option("--glove", enc_glove, "Word-vector file")->required()->check(CLI::ExistingFile);
  enc->add_option("--view", enc_view, "image or text")->check(CLI::IsMember({"image", "text"}));
  enc->add_option("--split", enc_split, "Split file")->check(CLI::ExistingFile);
  enc->add_option("--subset", enc_subset, "Instances to encode")
      ->check(CLI::IsMember({"all", "query", "database", "train"}));
  enc->add_option("--out", enc_out, "Output code file")->required();

  // index
  auto* idx = app.add_subcommand("index", "Binarize continuous codes into a packed index");
  std::string idx_codes, idx_out;
  idx->add_option("--codes", idx_codes, "Code file from encode")->required()->check(CLI::ExistingFile);
  idx->add_option("--out", idx_out, "Output index")->required();

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "Hamming ranking or radius lookup");
  std::string ret_q, ret_db, ret_out;
  std::optional<std::size_t> ret_k, ret_radius;
  std::optional<std::uint64_t> ret_id;
  ret->add_option("--queries", ret_q, "Query codes or index")->required()->check(CLI::ExistingFile);
  ret->add_option("--database", ret_db, "Database codes or index")->required()->check(CLI::ExistingFile);
  auto* k_opt = ret->add_option("--top-k", ret_k, "Return the k nearest codes");
  auto* r_opt = ret->add_option("--radius", ret_radius, "Return every code within this distance");
  k_opt->excludes(r_opt);
  ret->add_option("--query-id", ret_id, "Only this query");
  ret->add_option("--out", ret_out, "Output (JSON lines; default stdout)");

  // eval-map / eval-pr
  std::string em_q, em_db, em_corpus, em_out, ep_q, ep_db, ep_corpus, ep_out;
  auto* emap = app.add_subcommand("eval-map", "Mean average precision of a Hamming ranking");
  emap->add_option("--queries", em_q, "Query codes or index")->required()->check(CLI::ExistingFile);
  emap->add_option("--database", em_db, "Database codes or index")->required()->check(CLI::ExistingFile);
  emap->add_option("--corpus", em_corpus, "Corpus holding the labels")->required()->check(CLI::ExistingFile);
  emap->add_option("--out", em_out, "Metrics output (default stdout)");
  auto* epr = app.add_subcommand("eval-pr", "Precision and recall for every lookup radius");
  epr->add_option("--queries", ep_q, "Query codes or index")->required()->check(CLI::ExistingFile);
  epr->add_option("--database", ep_db, "Database codes or index")->required()->check(CLI::ExistingFile);
  epr->add_option("--corpus", ep_corpus, "Corpus holding the labels")->required()->check(CLI::ExistingFile);
  epr->add_option("--out", ep_out, "CSV output (default stdout)");

  // annotate
  auto* ann = app.add_subcommand("annotate", "Top-k category predictions with overall precision and recall");
  std::string an_ckpt, an_corpus, an_glove, an_split, an_view = "image", an_subset = "query", an_out, an_metrics;
  std::size_t an_k = 3;
  ann->add_option("--checkpoint", an_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ann->add_option("--corpus", an_corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  ann->add_option("--glove", an_glove, "Word-vector file")->required()->check(CLI::ExistingFile);
  ann->add_option("--split", an_split, "Split file")->check(CLI::ExistingFile);
  ann->add_option("--subset", an_subset, "Instances to annotate")
      ->check(CLI::IsMember({"all", "query", "database", "train"}));
  ann->add_option("--view", an_view, "image or text")->check(CLI::IsMember({"image", "text"}));
  ann->add_option("--k", an_k, "Predictions per instance");
  ann->add_option("--out", an_out, "Predictions (JSON lines)");
  ann->add_option("--metrics", an_metrics, "Metrics output (default stdout)");

  // sweep-lambda
  auto* sweep = app.add_subcommand("sweep-lambda", "Train and evaluate once per lambda");
  ConfigOptions sw_cfg;
  sw_cfg.add_to(sweep);
  std::string sw_grid = "0.05,0.2,0.5,0.8,1.0", sw_out;
  sweep->add_option("--grid", sw_grid, "Comma-separated lambda values");
  sweep->add_option("--out", sw_out, "Metrics output (JSON lines; default stdout)");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every differentiable operation");
  int gc_seeds = 20;
  double gc_tol = 1e-5;
  gc->add_option("--seeds", gc_seeds, "Random instances per operation")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", gc_tol, "Largest accepted relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      ExperimentConfig c = gen_cfg.resolve();
      if (gen_n) c.data.n = *gen_n;
      if (gen_cats) c.data.categories = *gen_cats;
      if (gen_feat) c.data.feature_dim = *gen_feat;
      if (gen_embed) c.data.embed_dim = *gen_embed;
      if (gen_words) c.data.max_words = *gen_words;
      if (gen_noise) c.data.noise = *gen_noise;
      if (gen_seed) c.data.seed = *gen_seed;
      const SyntheticCorpus s = generate_synthetic(c.data);
      s.corpus.save(gen_corpus);
      save_glove(s.glove, gen_glove);
      if (!gen_split.empty()) {
        io::write_text(gen_split, make_split(s.corpus, c.split.queries, c.split.seed, c.split.train).to_json());
      }
      std::cout << ordered_json{{"instances", s.corpus.size()}, {"categories", s.corpus.categories()},
                                {"words", s.glove.size()}}.dump()
                << '\n';
    } else if (*split_cmd) {
      const Corpus corpus = Corpus::load(split_corpus);
      io::write_text(split_out, make_split(corpus, split_queries, split_seed, split_train).to_json());
    } else if (*import) {
      const Corpus corpus = Corpus::load(import_corpus);
      const GloveTable glove = load_glove(import_in);
      if (glove.dim() != corpus.embed_dim) {
        throw DimensionError("word vectors have dimension " + std::to_string(glove.dim()) + ", corpus expects " +
                             std::to_string(corpus.embed_dim));
      }
      const GloveTable kept = restrict_vocabulary(glove, corpus);
      save_glove(kept, import_out);
      std::size_t tokens = 0, known = 0;
      for (const auto& list : corpus.tokens)
        for (const auto& t : list) {
          ++tokens;
          known += kept.contains(normalize_token(t));
        }
      std::cout << ordered_json{{"words", glove.size()},
                                {"dim", glove.dim()},
                                {"kept", kept.size()},
                                {"token_coverage", tokens ? static_cast<double>(known) / static_cast<double>(tokens) : 0.0}}
                       .dump()
                << '\n';
    } else if (*pretrain_cmd || *train_cmd) {
      TrainArgs& a = *pretrain_cmd ? pre : tr;
      ExperimentConfig c = a.cfg.resolve();
      if (*pretrain_cmd) c.train.joint_iters = 0;
      const Corpus corpus = Corpus::load(a.corpus);
      const GloveTable glove = load_glove(a.glove);
      const Corpus train_set = select(corpus, a.split, a.split.empty() ? "all" : "train");
      const PairedData data = paired_views(train_set, glove, c.eval.oov);
      TrainLog log(a.log);
      TrainState state;
      if (!a.from.empty()) {
        Checkpoint ck = load_checkpoint(a.from);
        const ModelSpec& s = ck.model.spec;
        if (s.feature_dim != corpus.feature_dim || s.embed_dim != corpus.embed_dim ||
            s.max_words != corpus.max_words || s.categories != corpus.categories()) {
          throw DimensionError("checkpoint " + a.from + " does not match the corpus dimensions");
        }
        state.model = std::move(ck.model);
        joint_phase(state, data, c.train, log.sink());
      } else {
        const ModelSpec spec{corpus.feature_dim, corpus.embed_dim, corpus.max_words, corpus.categories(), c.model};
        state = train(data, spec, c.train, log.sink());
      }
      save_checkpoint(a.out, state.model, c.to_json());
      const LossReport final_loss = measure_loss(state.model, data, c.train.lambda);
      std::cout << ordered_json{{"iterations", state.iteration}, {"l_image", final_loss.l_image},
                                {"l_text", final_loss.l_text},   {"j_align", final_loss.j_align},
                                {"total", final_loss.total}}.dump()
                << '\n';
    } else if (*enc) {
      Checkpoint ck = load_checkpoint(enc_ckpt);
      const ExperimentConfig c = ExperimentConfig::from_json(ck.config_json);
      const Corpus corpus = select(Corpus::load(enc_corpus), enc_split, enc_subset);
      const GloveTable glove = load_glove(enc_glove);
      encode_corpus(ck.model[parse_view(enc_view)], corpus, glove, c.eval.oov).save(enc_out);
    } else if (*idx) {
      CodeFile::load(idx_codes).pack().save(idx_out);
    } else if (*ret) {
      if (!ret_k && !ret_radius) throw ArgumentError("retrieve needs --top-k or --radius");
      const PackedCodeSet q = load_codes(ret_q), db = load_codes(ret_db);
      std::string out;
      for (std::size_t row = 0; row < q.size(); ++row) {
        if (ret_id && q.id(row) != *ret_id) continue;
        ordered_json line{{"query", q.id(row)}};
        if (ret_k) {
          ordered_json hits = ordered_json::array();
          for (const auto& e : rank(q, row, db, *ret_k)) hits.push_back({{"id", e.id}, {"distance", e.distance}});
          line["results"] = std::move(hits);
        } else {
          line["ids"] = lookup(q, row, db, *ret_radius);
        }
        out += line.dump() + '\n';
      }
      if (ret_id && out.empty()) throw ArgumentError("query id " + std::to_string(*ret_id) + " not in " + ret_q);
      emit(ret_out, out);
    } else if (*emap) {
      const Corpus corpus = Corpus::load(em_corpus);
      const PackedCodeSet q = load_codes(em_q), db = load_codes(em_db);
      const LabelMatrix qy = labels_for(corpus, q), dby = labels_for(corpus, db);
      const double map = mean_average_precision(q, db, RelevanceRule(qy, dby));
      emit(em_out, ordered_json{{"map", map}, {"queries", q.size()}, {"database", db.size()}}.dump() + "\n");
    } else if (*epr) {
      const Corpus corpus = Corpus::load(ep_corpus);
      const PackedCodeSet q = load_codes(ep_q), db = load_codes(ep_db);
      const LabelMatrix qy = labels_for(corpus, q), dby = labels_for(corpus, db);
      emit(ep_out, format_pr_csv(pr_curve(q, db, RelevanceRule(qy, dby))));
    } else if (*ann) {
      Checkpoint ck = load_checkpoint(an_ckpt);
      const ExperimentConfig c = ExperimentConfig::from_json(ck.config_json);
      const Corpus corpus = select(Corpus::load(an_corpus), an_split, an_subset);
      const GloveTable glove = load_glove(an_glove);
      ViewModel& view = ck.model[parse_view(an_view)];
      const BitMatrix bits = binarize(encode_corpus(view, corpus, glove, c.eval.oov).z);
      Tensor binary({bits.rows(), bits.cols()});
      for (std::size_t r = 0; r < bits.rows(); ++r)
        for (std::size_t j = 0; j < bits.cols(); ++j) binary.at(r, j) = bits.get(r, j) ? 1.0 : 0.0;
      const Annotations pred = annotate_topk(binary, view.classifier, an_k);
      if (!an_out.empty()) {
        std::string lines;
        for (std::size_t i = 0; i < pred.size(); ++i)
          lines += ordered_json{{"id", corpus.ids[i]}, {"categories", pred[i]}}.dump() + '\n';
        io::write_text(an_out, lines);
      }
      const OverallPrf prf = overall_prf(pred, corpus.labels);
      emit(an_metrics, ordered_json{{"k", an_k}, {"o_p", prf.precision}, {"o_r", prf.recall}, {"o_f1", prf.f1}}.dump() +
                           "\n");
    } else if (*sweep) {
      const ExperimentConfig c = sw_cfg.resolve();
      const std::vector<double> grid = parse_grid(sw_grid);
      std::string lines;
      for (const Metrics& m : sweep_lambda(c, grid)) lines += m.to_json() + '\n';
      emit(sw_out, lines);
    } else if (*gc) {
      bool ok = true;
      for (const auto& e : run_gradient_suite(gc_seeds, gc_tol)) {
        std::printf("%-20s %s  worst rel. error %.3e over %d seeds%s%s\n", e.op.c_str(), e.passed ? "ok  " : "FAIL",
                    e.worst_rel_error, e.seeds, e.worst_param.empty() ? "" : " at ", e.worst_param.c_str());
        ok &= e.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const dcvh::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
