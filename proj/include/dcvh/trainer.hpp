#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dcvh/labels.hpp"
#include "dcvh/models.hpp"
#include "dcvh/objective.hpp"
#include "dcvh/optim.hpp"

namespace dcvh {

// Row-aligned training views: image features, text vectors and labels.
struct PairedData {
  Tensor image;
  Tensor text;
  LabelMatrix labels;

  std::size_t size() const { return labels.rows(); }
  PairedData subset(std::span<const std::size_t> rows) const;
  void validate() const;
};

struct TrainConfig {
  double lambda = 0.2;
  LrSchedule pretrain_rate{0.05, 0.9, 1000};
  LrSchedule joint_rate{0.5, 0.9, 1000};
  std::size_t batch_size = 64;
  std::int64_t pretrain_iters_image = 300;
  std::int64_t pretrain_iters_text = 300;
  std::int64_t joint_iters = 3500;
  std::uint64_t seed = 1;
  std::int64_t log_every = 100;

  // Rates 2e-4 / 1e-4, 10000 / 2000 pretraining and 10000 joint iterations.
  static TrainConfig full_scale();
  void validate() const;
};

// Shuffles once per epoch and yields full batches; the remainder of an epoch
// is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::seed_seq& seed);

  const std::vector<std::size_t>& next();

 private:
  void reshuffle();

  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

enum class Phase { kPretrainImage, kPretrainText, kJoint };
const char* phase_name(Phase phase);

struct TrainRecord {
  Phase phase = Phase::kJoint;
  std::int64_t iteration = 0;
  LossReport loss;
  double rate = 0.0;
};

using RecordSink = std::function<void(const TrainRecord&)>;

// Aborts with DivergenceError when the loss is non-finite or above 1e6.
void check_divergence(double loss, Phase phase, std::int64_t iteration);

// One SGD step on the view's classification loss; both projection and
// classifier move by rate·scale. Returns the batch loss.
double classification_step(ViewModel& view, const Tensor& input, const LabelMatrix& labels,
                           const LrSchedule& schedule, std::int64_t iteration, double scale = 1.0);

struct JointOptions {
  // Treat the alignment term as a constant: J is reported but sends no gradient.
  bool detach_alignment = false;
};

// One simultaneous update of both views. Projections follow the gradient of
// (1-λ)L + λJ; classifiers follow (1-λ) dL/dW only, so λ = 1 leaves them untouched.
LossReport joint_step(TwoViewModel& model, const Tensor& image, const Tensor& text,
                      const LabelMatrix& labels, double lambda, const LrSchedule& schedule,
                      std::int64_t iteration, JointOptions options = {});

// Accumulates the gradient of (1-λ)(L_I + L_T) + λJ into every parameter of
// both views without stepping.
LossReport objective_gradients(TwoViewModel& model, const Tensor& image, const Tensor& text,
                               const LabelMatrix& labels, double lambda);

// Classification-only pretraining of one view. Returns the last batch loss.
double pretrain_view(ViewModel& view, const Tensor& input, const LabelMatrix& labels,
                     const TrainConfig& config, std::vector<TrainRecord>* history = nullptr,
                     const RecordSink& sink = {});

struct TrainState {
  TwoViewModel model;
  std::int64_t iteration = 0;
  std::vector<TrainRecord> history;
};

// config.joint_iters joint steps on top of `state`.
void joint_phase(TrainState& state, const PairedData& data, const TrainConfig& config,
                 const RecordSink& sink = {});

// Pretrain both views, then run the joint phase. Deterministic in config.seed.
TrainState train(const PairedData& data, const ModelSpec& spec, const TrainConfig& config,
                 const RecordSink& sink = {});

// Full-data objective using batch statistics, evaluated on a copy so running
// statistics are left alone.
LossReport measure_loss(const TwoViewModel& model, const PairedData& data, double lambda);

}  // namespace dcvh
