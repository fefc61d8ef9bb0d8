#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcvh/corpus.hpp"
#include "dcvh/evaluation.hpp"
#include "dcvh/models.hpp"
#include "dcvh/trainer.hpp"

namespace dcvh {

struct SplitParams {
  std::size_t queries = 500;
  std::size_t train = 0;  // 0: train on the whole database
  std::uint64_t seed = 1;
};

struct EvalOptions {
  std::size_t top_k = 3;
  OovPolicy oov = OovPolicy::kSkip;
  std::uint64_t baseline_seed = 7;
};

// Everything one run needs: synthetic data, split, architecture, training
// schedule and evaluation settings.
struct ExperimentConfig {
  SyntheticParams data;
  SplitParams split;
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;

  static ExperimentConfig desk();
  // Full-width text CNN, 64 bits and the published schedule.
  static ExperimentConfig full();

  void validate() const;
  std::string to_json() const;
  // Missing keys keep their defaults; unknown keys raise ConfigError.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

std::string oov_name(OovPolicy oov);
OovPolicy parse_oov(const std::string& name);

struct Metrics {
  double lambda = 0.0;
  std::size_t code_bits = 0;
  double map_i2t = 0.0;
  double map_t2i = 0.0;
  double map_i2i = 0.0;
  double map_t2t = 0.0;
  double baseline_i2t = 0.0;  // mAP with database codes shuffled across instances
  double baseline_t2i = 0.0;
  double o_p = 0.0;
  double o_r = 0.0;
  double o_f1 = 0.0;
  double mean_paired_hamming = 0.0;  // fraction of differing bits between paired database codes
  double initial_loss = 0.0;
  double final_loss = 0.0;

  std::string to_json() const;
};

// mAP after shuffling which database instance each code belongs to.
double permutation_baseline_map(const PackedCodeSet& queries, const PackedCodeSet& database,
                                const LabelMatrix& query_labels, const LabelMatrix& database_labels,
                                std::uint64_t seed);

// Continuous codes of one view, keyed by instance id.
struct CodeFile {
  View view = View::kImage;
  std::vector<std::uint64_t> ids;
  Tensor z;  // n × D

  // "DCVZ", version byte, view, n, D, ids, float64 codes.
  std::vector<std::uint8_t> serialize() const;
  static CodeFile deserialize(std::vector<std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static CodeFile load(const std::filesystem::path& path);

  PackedCodeSet pack() const;
};

CodeFile encode_corpus(ViewModel& view, const Corpus& corpus, const GloveTable& glove, OovPolicy oov);

// Retrieval in every direction plus top-k annotation of the query images.
Metrics evaluate(TwoViewModel& model, const Corpus& queries, const Corpus& database, const GloveTable& glove,
                 const EvalOptions& options);

struct ExperimentResult {
  TrainState state;
  Metrics metrics;
};

ExperimentResult run_experiment(const Corpus& corpus, const GloveTable& glove, const SplitSpec& split,
                                const ModelConfig& model, const TrainConfig& train, const EvalOptions& eval,
                                const RecordSink& sink = {});
ExperimentResult run_experiment(const ExperimentConfig& config, const RecordSink& sink = {});

inline constexpr double kLambdaGrid[] = {0.05, 0.2, 0.5, 0.8, 1.0};

// One run per λ on a shared corpus and split.
std::vector<Metrics> sweep_lambda(const ExperimentConfig& config, std::span<const double> grid = kLambdaGrid);

}  // namespace dcvh
