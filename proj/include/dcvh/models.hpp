#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dcvh/ops.hpp"
#include "dcvh/optim.hpp"
#include "dcvh/retrieval.hpp"

namespace dcvh {

// Forward value of a parametrised block. `backward` accumulates parameter
// gradients into the ParamSet it is handed and returns dL/dinput.
struct ModelForward {
  Tensor value;
  std::function<Tensor(const Tensor& upstream, ParamSet& params)> backward;
};

struct ModelConfig {
  std::size_t code_bits = 32;
  std::vector<std::size_t> image_hidden = {128};
  std::size_t conv1_kernels = 64;
  std::size_t conv2_kernels = 64;
  std::size_t text_fc = 128;
  double init_range = 0.05;

  // 1000 kernels on both text conv layers.
  static ModelConfig full_scale();
};

// linear -> batchnorm -> relu -> tanh, producing codes in [0, 1).
class DbeLayer {
 public:
  DbeLayer() = default;
  DbeLayer(ParamSet& params, const std::string& prefix, std::size_t input_dim, std::size_t code_bits,
           double init_range, std::mt19937_64& rng);

  ModelForward forward(const ParamSet& params, const Tensor& x, Mode mode, bool with_grad);

  std::size_t weights = 0, gamma = 0, beta = 0;
  BatchNormState bn;
};

// Linear layer followed by batchnorm and relu; the image MLP's hidden unit
// and the text model's fully-connected layer.
struct DenseBlock {
  DenseBlock() = default;
  DenseBlock(ParamSet& params, const std::string& prefix, std::size_t input_dim, std::size_t width,
             double init_range, std::mt19937_64& rng);

  ModelForward forward(const ParamSet& params, const Tensor& x, Mode mode, bool with_grad);

  std::size_t weights = 0, gamma = 0, beta = 0;
  BatchNormState bn;
};

// Named references to every tensor that defines a model: parameters and
// batchnorm running statistics.
using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

// MLP with DBE head over precomputed image features.
class ImageProjection {
 public:
  ImageProjection() = default;
  ImageProjection(std::size_t feature_dim, const ModelConfig& config, std::mt19937_64& rng);

  ModelForward forward(const Tensor& features, Mode mode, bool with_grad = true);

  std::size_t input_dim() const { return feature_dim_; }
  std::size_t code_bits() const { return code_bits_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  NamedTensors state();

 private:
  std::size_t feature_dim_ = 0;
  std::size_t code_bits_ = 0;
  ParamSet params_;
  std::vector<DenseBlock> hidden_;
  DbeLayer dbe_;
};

// Two-layer text CNN over concatenated word vectors: conv1 with kernels one
// word wide and a one-word stride, conv2 spanning every conv1 position, a
// fully-connected block and a DBE head.
class TextProjection {
 public:
  TextProjection() = default;
  TextProjection(std::size_t embed_dim, std::size_t max_words, const ModelConfig& config,
                 std::mt19937_64& rng);

  ModelForward forward(const Tensor& text, Mode mode, bool with_grad = true);

  std::size_t input_dim() const { return embed_dim_ * max_words_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t max_words() const { return max_words_; }
  std::size_t code_bits() const { return code_bits_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  NamedTensors state();

  std::size_t conv1_index() const { return conv1_; }
  std::size_t conv2_index() const { return conv2_; }

 private:
  std::size_t embed_dim_ = 0;
  std::size_t max_words_ = 0;
  std::size_t code_bits_ = 0;
  ParamSet params_;
  std::size_t conv1_ = 0;  // [K1 × d]
  std::size_t conv2_ = 0;  // [K2 × (K1·max_words)], flattened k-major
  DenseBlock fc_;
  DbeLayer dbe_;
};

// Bias-free linear classifier: logits = Z · W, W[D × C].
class Classifier {
 public:
  Classifier() = default;
  Classifier(std::size_t code_bits, std::size_t categories, double init_range, std::mt19937_64& rng);

  ModelForward forward(const Tensor& codes, bool with_grad = true) const;

  std::size_t categories() const { return params_.value(0).dim(1); }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Tensor& weights() const { return params_.value(0); }

 private:
  ParamSet params_;
};

Tensor classify(const Tensor& codes, const Classifier& classifier);

// Threshold at 0.5: bit = 1 iff z >= 0.5. Entries outside [0,1] are rejected.
BitMatrix binarize(const Tensor& codes);

enum class View { kImage, kText };
const char* view_name(View view);
View parse_view(const std::string& name);

// One view: its projection and its classifier.
struct ViewModel {
  std::variant<ImageProjection, TextProjection> projection;
  Classifier classifier;

  View view() const;
  ModelForward project(const Tensor& input, Mode mode, bool with_grad = true);
  ParamSet& projection_params();
  std::size_t input_dim() const;
  std::size_t code_bits() const;
  NamedTensors state();
};

// Everything needed to rebuild the architecture.
struct ModelSpec {
  std::size_t feature_dim = 0;
  std::size_t embed_dim = 0;
  std::size_t max_words = 0;
  std::size_t categories = 0;
  ModelConfig config;
};

struct TwoViewModel {
  ModelSpec spec;
  ViewModel image;
  ViewModel text;

  // Uniform [-init_range, init_range] weights, gamma = 1, beta = 0.
  static TwoViewModel create(const ModelSpec& spec, std::uint64_t seed);

  ViewModel& operator[](View v) { return v == View::kImage ? image : text; }
  NamedTensors state();
};

// Continuous codes for every row of `inputs` in infer mode, computed in chunks.
Tensor encode(ViewModel& model, const Tensor& inputs, std::size_t chunk = 256);

struct Checkpoint {
  TwoViewModel model;
  std::string config_json;
};

// Binary container: "DCVK", version byte, config echo, architecture, then
// every named tensor (name, rank, dims, float64 data).
std::vector<std::uint8_t> serialize_checkpoint(TwoViewModel& model, const std::string& config_json);
Checkpoint deserialize_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, TwoViewModel& model,
                     const std::string& config_json);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dcvh
