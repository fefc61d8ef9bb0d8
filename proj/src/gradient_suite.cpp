#include "dcvh/gradient_suite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "dcvh/models.hpp"
#include "dcvh/objective.hpp"
#include "dcvh/ops.hpp"
#include "dcvh/optim.hpp"
#include "dcvh/trainer.hpp"

namespace dcvh {

namespace {

double weighted(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// Uniform values kept at least `gap` away from zero, so kinks stay outside
// the finite-difference stencil.
Tensor away_from_zero(Shape shape, double hi, double gap, std::mt19937_64& rng) {
  Tensor t = Tensor::uniform(std::move(shape), -hi, hi, rng);
  for (double& v : t.data())
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  return t;
}

LabelMatrix random_labels(std::size_t rows, std::size_t cats, std::mt19937_64& rng) {
  LabelMatrix y(rows, cats);
  for (std::size_t r = 0; r < rows; ++r) {
    y.set(r, rng() % cats);
    if (rng() % 2) y.set(r, rng() % cats);
  }
  return y;
}

ModelConfig small_model(std::size_t bits) {
  ModelConfig c;
  c.code_bits = bits;
  c.image_hidden = {6};
  c.conv1_kernels = 3;
  c.conv2_kernels = 4;
  c.text_fc = 5;
  c.init_range = 0.5;
  return c;
}

// Shift every batchnorm beta into the active side of the relu.
void lift_betas(ParamSet& params, std::mt19937_64& rng) {
  for (Param& p : params)
    if (p.name.ends_with(".beta")) p.value = Tensor::uniform(p.value.shape(), 0.2, 0.6, rng);
}

using Case = std::function<GradCheckResult(std::mt19937_64&, double eps)>;

GradCheckResult worse(const GradCheckResult& a, const GradCheckResult& b) {
  return b.max_rel_error > a.max_rel_error || std::isnan(b.max_rel_error) ? b : a;
}

GradCheckResult linear_case(std::mt19937_64& rng, double eps) {
  ParamSet ps;
  ps.add("x", Tensor::uniform({4, 3}, -1, 1, rng));
  ps.add("w", Tensor::uniform({3, 5}, -1, 1, rng));
  const Tensor r = Tensor::uniform({4, 5}, -1, 1, rng);
  return grad_check([&](ParamSet& p) {
    auto out = linear(p.value(0), p.value(1), true);
    auto g = out.backward(r);
    p.accumulate(0, g.input);
    p.accumulate(1, g.weights);
    return weighted(out.value, r);
  }, ps, eps);
}

GradCheckResult conv1d_case(std::mt19937_64& rng, double eps) {
  GradCheckResult worst;
  for (std::size_t stride : {1u, 2u, 3u}) {
    ParamSet ps;
    ps.add("x", Tensor::uniform({3, 12}, -1, 1, rng));
    ps.add("kernels", Tensor::uniform({4, 3}, -1, 1, rng));
    const std::size_t positions = conv1d_positions(12, 3, stride);
    const Tensor r = Tensor::uniform({3, 4, positions}, -1, 1, rng);
    worst = worse(worst, grad_check([&](ParamSet& p) {
      auto out = conv1d(p.value(0), p.value(1), stride, true);
      auto g = out.backward(r);
      p.accumulate(0, g.input);
      p.accumulate(1, g.kernels);
      return weighted(out.value, r);
    }, ps, eps));
  }
  return worst;
}

GradCheckResult batchnorm_case(std::mt19937_64& rng, double eps) {
  GradCheckResult worst;
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    ParamSet ps;
    ps.add("x", Tensor::uniform({6, 4}, -2, 2, rng));
    ps.add("gamma", Tensor::uniform({4}, 0.5, 1.5, rng));
    ps.add("beta", Tensor::uniform({4}, -1, 1, rng));
    BatchNormState state(4);
    state.running_mean = Tensor::uniform({4}, -1, 1, rng);
    state.running_var = Tensor::uniform({4}, 0.5, 2, rng);
    const Tensor r = Tensor::uniform({6, 4}, -1, 1, rng);
    worst = worse(worst, grad_check([&](ParamSet& p) {
      BatchNormState s = state;
      auto out = batchnorm(p.value(0), p.value(1), p.value(2), mode, s, true);
      auto g = out.backward(r);
      p.accumulate(0, g.input);
      p.accumulate(1, g.gamma);
      p.accumulate(2, g.beta);
      return weighted(out.value, r);
    }, ps, eps));
  }
  return worst;
}

Case activation_case(Activation kind) {
  return [kind](std::mt19937_64& rng, double eps) {
    ParamSet ps;
    ps.add("x", away_from_zero({5, 4}, 2.0, 1e-3, rng));
    const Tensor r = Tensor::uniform({5, 4}, -1, 1, rng);
    return grad_check([&](ParamSet& p) {
      auto out = activation(p.value(0), kind, true);
      p.accumulate(0, out.backward(r));
      return weighted(out.value, r);
    }, ps, eps);
  };
}

GradCheckResult dbe_case(std::mt19937_64& rng, double eps) {
  ParamSet ps;
  DbeLayer dbe(ps, "dbe", 4, 5, 0.5, rng);
  lift_betas(ps, rng);
  const std::size_t x = ps.add("x", Tensor::uniform({6, 4}, -1, 1, rng));
  const Tensor r = Tensor::uniform({6, 5}, -1, 1, rng);
  return grad_check([&](ParamSet& p) {
    auto out = dbe.forward(p, p.value(x), Mode::kTrain, true);
    p.accumulate(x, out.backward(r, p));
    return weighted(out.value, r);
  }, ps, eps);
}

GradCheckResult image_case(std::mt19937_64& rng, double eps) {
  ImageProjection model(4, small_model(5), rng);
  lift_betas(model.params(), rng);
  const Tensor x = Tensor::uniform({6, 4}, -1, 1, rng);
  const Tensor r = Tensor::uniform({6, 5}, -1, 1, rng);
  return grad_check([&](ParamSet& p) {
    auto out = model.forward(x, Mode::kTrain, true);
    out.backward(r, p);
    return weighted(out.value, r);
  }, model.params(), eps);
}

GradCheckResult text_case(std::mt19937_64& rng, double eps) {
  TextProjection model(3, 3, small_model(5), rng);
  lift_betas(model.params(), rng);
  const Tensor x = Tensor::uniform({6, 9}, -1, 1, rng);
  const Tensor r = Tensor::uniform({6, 5}, -1, 1, rng);
  return grad_check([&](ParamSet& p) {
    auto out = model.forward(x, Mode::kTrain, true);
    out.backward(r, p);
    return weighted(out.value, r);
  }, model.params(), eps);
}

GradCheckResult bce_case(std::mt19937_64& rng, double eps) {
  ParamSet ps;
  ps.add("logits", Tensor::uniform({4, 3}, -4, 4, rng));
  const LabelMatrix y = random_labels(4, 3, rng);
  return grad_check([&](ParamSet& p) {
    auto l = multilabel_bce(p.value(0), y);
    p.accumulate(0, l.grad);
    return l.value;
  }, ps, eps);
}

GradCheckResult alignment_case(std::mt19937_64& rng, double eps) {
  ParamSet ps;
  ps.add("z_image", Tensor::uniform({5, 8}, 0.01, 0.99, rng));
  ps.add("z_text", Tensor::uniform({5, 8}, 0.01, 0.99, rng));
  return grad_check([&](ParamSet& p) {
    auto a = alignment_relaxed(p.value(0), p.value(1));
    p.accumulate(0, a.grad_image);
    p.accumulate(1, a.grad_text);
    return a.value;
  }, ps, eps);
}

GradCheckResult objective_case(std::mt19937_64& rng, double eps) {
  ModelSpec spec{4, 3, 3, 3, small_model(5)};
  auto model = TwoViewModel::create(spec, rng());
  for (ViewModel* v : {&model.image, &model.text}) lift_betas(v->projection_params(), rng);
  const Tensor image = Tensor::uniform({6, 4}, -1, 1, rng);
  const Tensor text = Tensor::uniform({6, 9}, -1, 1, rng);
  const LabelMatrix y = random_labels(6, 3, rng);
  const double lambda = std::uniform_real_distribution<>(0.1, 0.9)(rng);

  GradCheckResult worst;
  ParamSet* sets[] = {&model.image.projection_params(), &model.text.projection_params(),
                      &model.image.classifier.params(), &model.text.classifier.params()};
  for (ParamSet* target : sets) {
    worst = worse(worst, grad_check([&](ParamSet&) {
      for (ParamSet* s : sets)
        if (s != target) s->zero_grad();
      return objective_gradients(model, image, text, y, lambda).total;
    }, *target, eps));
  }
  return worst;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(int seeds, double tolerance, double eps) {
  const std::vector<std::pair<std::string, Case>> cases = {
      {"linear", linear_case},
      {"conv1d", conv1d_case},
      {"batchnorm", batchnorm_case},
      {"relu", activation_case(Activation::kRelu)},
      {"tanh", activation_case(Activation::kTanh)},
      {"sigmoid", activation_case(Activation::kSigmoid)},
      {"dbe", dbe_case},
      {"image_projection", image_case},
      {"text_projection", text_case},
      {"multilabel_bce", bce_case},
      {"alignment_relaxed", alignment_case},
      {"two_view_objective", objective_case},
  };
  std::vector<GradSuiteEntry> out;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradSuiteEntry e{cases[c].first, seeds, 0.0, "", true};
    for (int s = 0; s < seeds; ++s) {
      std::seed_seq seq{static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)};
      std::mt19937_64 rng(seq);
      const GradCheckResult r = cases[c].second(rng, eps);
      if (!(r.max_rel_error <= e.worst_rel_error)) {
        e.worst_rel_error = r.max_rel_error;
        e.worst_param = r.worst_param;
      }
    }
    e.passed = e.worst_rel_error <= tolerance;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace dcvh
