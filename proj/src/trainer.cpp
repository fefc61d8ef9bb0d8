#include "dcvh/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcvh/error.hpp"

namespace dcvh {

PairedData PairedData::subset(std::span<const std::size_t> rows) const {
  return {gather_rows(image, rows), gather_rows(text, rows), labels.subset(rows)};
}

void PairedData::validate() const {
  require_rank(image, 2, "image features");
  require_rank(text, 2, "text vectors");
  if (image.dim(0) != labels.rows() || text.dim(0) != labels.rows()) {
    throw DimensionError("paired data has " + std::to_string(image.dim(0)) + " image rows, " +
                         std::to_string(text.dim(0)) + " text rows and " +
                         std::to_string(labels.rows()) + " label rows");
  }
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    if (labels.positives(r) == 0) throw ContractError("instance at row " + std::to_string(r) + " has no labels");
  }
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.pretrain_rate = {2e-4, 0.9, 1000};
  c.joint_rate = {1e-4, 0.9, 1000};
  c.pretrain_iters_image = 10000;
  c.pretrain_iters_text = 2000;
  c.joint_iters = 10000;
  c.batch_size = 64;
  return c;
}

void TrainConfig::validate() const {
  validate_lambda(lambda);
  pretrain_rate.validate();
  joint_rate.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for batch normalisation");
  if (pretrain_iters_image < 0 || pretrain_iters_text < 0 || joint_iters < 0) {
    throw ConfigError("iteration counts must be non-negative");
  }
  if (log_every < 1) throw ConfigError("log_every must be positive");
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::seed_seq& seed)
    : batch_size_(batch_size), order_(n), rng_(seed) {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (n < batch_size) {
    throw ConfigError("training set of " + std::to_string(n) + " rows is smaller than one batch of " +
                      std::to_string(batch_size));
  }
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

const std::vector<std::size_t>& BatchSampler::next() {
  if (cursor_ + batch_size_ > order_.size()) reshuffle();
  batch_.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return batch_;
}

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kPretrainImage: return "pretrain-image";
    case Phase::kPretrainText: return "pretrain-text";
    case Phase::kJoint: return "joint";
  }
  return "?";
}

void check_divergence(double loss, Phase phase, std::int64_t iteration) {
  if (!std::isfinite(loss) || loss > 1e6) {
    throw DivergenceError(std::string(phase_name(phase)) + " diverged at iteration " +
                          std::to_string(iteration) + " (loss " + std::to_string(loss) + ")");
  }
}

namespace {

Phase pretrain_phase(const ViewModel& view) {
  return view.view() == View::kImage ? Phase::kPretrainImage : Phase::kPretrainText;
}

std::uint64_t phase_salt(Phase phase) { return static_cast<std::uint64_t>(phase) + 100; }

}  // namespace

double classification_step(ViewModel& view, const Tensor& input, const LabelMatrix& labels,
                           const LrSchedule& schedule, std::int64_t iteration, double scale) {
  auto z = view.project(input, Mode::kTrain, true);
  auto logits = view.classifier.forward(z.value, true);
  auto bce = multilabel_bce(logits.value, labels);
  check_divergence(bce.value, pretrain_phase(view), iteration);
  ParamSet& proj = view.projection_params();
  z.backward(logits.backward(bce.grad, view.classifier.params()), proj);
  sgd_step(proj, schedule, iteration, scale);
  sgd_step(view.classifier.params(), schedule, iteration, scale);
  return bce.value;
}

LossReport joint_step(TwoViewModel& model, const Tensor& image, const Tensor& text,
                      const LabelMatrix& labels, double lambda, const LrSchedule& schedule,
                      std::int64_t iteration, JointOptions options) {
  validate_lambda(lambda);
  auto zi = model.image.project(image, Mode::kTrain, true);
  auto zt = model.text.project(text, Mode::kTrain, true);
  auto li = model.image.classifier.forward(zi.value, true);
  auto lt = model.text.classifier.forward(zt.value, true);
  auto bce_i = multilabel_bce(li.value, labels);
  auto bce_t = multilabel_bce(lt.value, labels);
  auto align = alignment_relaxed(zi.value, zt.value);
  const LossReport report = total_loss(bce_i.value, bce_t.value, align.value, lambda);
  check_divergence(report.total, Phase::kJoint, iteration);

  ParamSet& pi = model.image.projection_params();
  ParamSet& pt = model.text.projection_params();
  ParamSet& ci = model.image.classifier.params();
  ParamSet& ct = model.text.classifier.params();

  if (lambda < 1.0) {
    // Backpropagate dL/dZ + λ/(1-λ)·dJ/dZ and step with scale (1-λ); the
    // classification part then matches a (1-λ)-scaled pretraining step exactly.
    Tensor up_i = li.backward(bce_i.grad, ci);
    Tensor up_t = lt.backward(bce_t.grad, ct);
    if (!options.detach_alignment) {
      const double ratio = lambda / (1.0 - lambda);
      align.grad_image *= ratio;
      align.grad_text *= ratio;
      up_i += align.grad_image;
      up_t += align.grad_text;
    }
    zi.backward(up_i, pi);
    zt.backward(up_t, pt);
    const double scale = 1.0 - lambda;
    sgd_step(pi, schedule, iteration, scale);
    sgd_step(pt, schedule, iteration, scale);
    sgd_step(ci, schedule, iteration, scale);
    sgd_step(ct, schedule, iteration, scale);
  } else {
    // Pure alignment: classifiers get no update at all.
    if (!options.detach_alignment) {
      zi.backward(align.grad_image, pi);
      zt.backward(align.grad_text, pt);
    }
    sgd_step(pi, schedule, iteration, 1.0);
    sgd_step(pt, schedule, iteration, 1.0);
  }
  return report;
}

LossReport objective_gradients(TwoViewModel& model, const Tensor& image, const Tensor& text,
                               const LabelMatrix& labels, double lambda) {
  validate_lambda(lambda);
  auto zi = model.image.project(image, Mode::kTrain, true);
  auto zt = model.text.project(text, Mode::kTrain, true);
  auto li = model.image.classifier.forward(zi.value, true);
  auto lt = model.text.classifier.forward(zt.value, true);
  auto bce_i = multilabel_bce(li.value, labels);
  auto bce_t = multilabel_bce(lt.value, labels);
  auto align = alignment_relaxed(zi.value, zt.value);
  bce_i.grad *= 1.0 - lambda;
  bce_t.grad *= 1.0 - lambda;
  align.grad_image *= lambda;
  align.grad_text *= lambda;
  Tensor up_i = li.backward(bce_i.grad, model.image.classifier.params());
  Tensor up_t = lt.backward(bce_t.grad, model.text.classifier.params());
  up_i += align.grad_image;
  up_t += align.grad_text;
  zi.backward(up_i, model.image.projection_params());
  zt.backward(up_t, model.text.projection_params());
  return total_loss(bce_i.value, bce_t.value, align.value, lambda);
}

double pretrain_view(ViewModel& view, const Tensor& input, const LabelMatrix& labels,
                     const TrainConfig& config, std::vector<TrainRecord>* history,
                     const RecordSink& sink) {
  config.validate();
  const Phase phase = pretrain_phase(view);
  const std::int64_t iters =
      phase == Phase::kPretrainImage ? config.pretrain_iters_image : config.pretrain_iters_text;
  if (iters == 0) return 0.0;
  if (input.dim(0) != labels.rows()) throw DimensionError("pretraining inputs and labels differ in rows");

  std::seed_seq seq{config.seed, phase_salt(phase)};
  BatchSampler sampler(labels.rows(), config.batch_size, seq);
  double last = 0.0;
  for (std::int64_t it = 0; it < iters; ++it) {
    const auto& rows = sampler.next();
    last = classification_step(view, gather_rows(input, rows), labels.subset(rows), config.pretrain_rate, it);
    if (it % config.log_every == 0 || it + 1 == iters) {
      TrainRecord rec{phase, it, {}, config.pretrain_rate.rate(it)};
      (phase == Phase::kPretrainImage ? rec.loss.l_image : rec.loss.l_text) = last;
      rec.loss.total = last;
      if (history) history->push_back(rec);
      if (sink) sink(rec);
    }
  }
  return last;
}

void joint_phase(TrainState& state, const PairedData& data, const TrainConfig& config, const RecordSink& sink) {
  config.validate();
  data.validate();
  if (config.joint_iters == 0) return;
  std::seed_seq seq{config.seed, phase_salt(Phase::kJoint)};
  BatchSampler sampler(data.size(), config.batch_size, seq);
  for (std::int64_t it = 0; it < config.joint_iters; ++it) {
    const auto& rows = sampler.next();
    const LossReport rep = joint_step(state.model, gather_rows(data.image, rows), gather_rows(data.text, rows),
                                      data.labels.subset(rows), config.lambda, config.joint_rate, it);
    ++state.iteration;
    if (it % config.log_every == 0 || it + 1 == config.joint_iters) {
      TrainRecord rec{Phase::kJoint, it, rep, config.joint_rate.rate(it)};
      state.history.push_back(rec);
      if (sink) sink(rec);
    }
  }
}

TrainState train(const PairedData& data, const ModelSpec& spec, const TrainConfig& config,
                 const RecordSink& sink) {
  config.validate();
  data.validate();
  if (data.size() == 0) throw ArgumentError("training set is empty");
  TrainState state{TwoViewModel::create(spec, config.seed), 0, {}};
  pretrain_view(state.model.image, data.image, data.labels, config, &state.history, sink);
  pretrain_view(state.model.text, data.text, data.labels, config, &state.history, sink);
  state.iteration = config.pretrain_iters_image + config.pretrain_iters_text;
  joint_phase(state, data, config, sink);
  return state;
}

LossReport measure_loss(const TwoViewModel& model, const PairedData& data, double lambda) {
  TwoViewModel copy = model;
  auto zi = copy.image.project(data.image, Mode::kTrain, false).value;
  auto zt = copy.text.project(data.text, Mode::kTrain, false).value;
  const double li = multilabel_bce(classify(zi, copy.image.classifier), data.labels).value;
  const double lt = multilabel_bce(classify(zt, copy.text.classifier), data.labels).value;
  return total_loss(li, lt, alignment_relaxed(zi, zt).value, lambda);
}

}  // namespace dcvh
