#include "dcvh/ops.hpp"

#include <cmath>

#include "dcvh/error.hpp"

namespace dcvh {

Traced<LinearGrads> linear(const Tensor& x, const Tensor& weights, bool with_grad) {
  require_rank(x, 2, "linear input");
  require_rank(weights, 2, "linear weights");
  if (x.dim(1) != weights.dim(0)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " does not match weights " + shape_string(weights.shape()));
  }
  Traced<LinearGrads> out{matmul(x, weights), {}};
  if (with_grad) {
    out.backward = [x, weights](const Tensor& dy) {
      return LinearGrads{matmul_nt(dy, weights), matmul_tn(x, dy)};
    };
  }
  return out;
}

std::size_t conv1d_positions(std::size_t length, std::size_t width, std::size_t stride) {
  if (stride == 0) throw DimensionError("conv1d: stride must be positive");
  if (width == 0 || width > length) {
    throw DimensionError("conv1d: kernel width " + std::to_string(width) +
                         " exceeds input length " + std::to_string(length));
  }
  return (length - width) / stride + 1;
}

Traced<Conv1dGrads> conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
                           bool with_grad) {
  require_rank(x, 2, "conv1d input");
  require_rank(kernels, 2, "conv1d kernels");
  const std::size_t batch = x.dim(0), length = x.dim(1);
  const std::size_t count = kernels.dim(0), width = kernels.dim(1);
  const std::size_t positions = conv1d_positions(length, width, stride);

  Tensor y({batch, count, positions});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = &x.at(b, 0);
    for (std::size_t k = 0; k < count; ++k) {
      const double* kern = &kernels.at(k, 0);
      double* yk = &y[(b * count + k) * positions];
      for (std::size_t p = 0; p < positions; ++p) {
        const double* xp = xb + p * stride;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += xp[j] * kern[j];
        yk[p] = s;
      }
    }
  }

  Traced<Conv1dGrads> out{std::move(y), {}};
  if (with_grad) {
    out.backward = [x, kernels, stride, positions](const Tensor& dy) {
      const std::size_t batch = x.dim(0), count = kernels.dim(0), width = kernels.dim(1);
      if (dy.shape() != Shape{batch, count, positions}) {
        throw DimensionError("conv1d backward: upstream shape " + shape_string(dy.shape()));
      }
      Conv1dGrads g{Tensor(x.shape()), Tensor(kernels.shape())};
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xb = &x.at(b, 0);
        double* dxb = &g.input.at(b, 0);
        for (std::size_t k = 0; k < count; ++k) {
          const double* kern = &kernels.at(k, 0);
          double* dkern = &g.kernels.at(k, 0);
          const double* dyk = &dy[(b * count + k) * positions];
          for (std::size_t p = 0; p < positions; ++p) {
            const double up = dyk[p];
            const std::size_t off = p * stride;
            for (std::size_t j = 0; j < width; ++j) {
              dxb[off + j] += up * kern[j];
              dkern[j] += up * xb[off + j];
            }
          }
        }
      }
      return g;
    };
  }
  return out;
}

BatchNormState::BatchNormState(std::size_t features)
    : running_mean({features}, 0.0), running_var({features}, 1.0) {}

Traced<BatchNormGrads> batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 Mode mode, BatchNormState& state, bool with_grad) {
  require_rank(x, 2, "batchnorm input");
  const std::size_t batch = x.dim(0), m = x.dim(1);
  if (gamma.shape() != Shape{m} || beta.shape() != Shape{m}) {
    throw DimensionError("batchnorm: gamma/beta must have shape [" + std::to_string(m) + "]");
  }

  Tensor mean({m}), var({m});
  if (mode == Mode::kTrain) {
    if (batch < 2) {
      throw DimensionError("batchnorm: degenerate batch of size " + std::to_string(batch) +
                           " in train mode");
    }
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t c = 0; c < m; ++c) mean[c] += x.at(i, c);
    for (std::size_t c = 0; c < m; ++c) mean[c] /= static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t c = 0; c < m; ++c) {
        const double d = x.at(i, c) - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < m; ++c) var[c] /= static_cast<double>(batch);

    if (!state.populated()) state = BatchNormState(m);
    for (std::size_t c = 0; c < m; ++c) {
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var[c];
    }
  } else {
    if (!state.populated()) {
      throw ContractError("batchnorm: infer mode requires populated running statistics");
    }
    if (state.running_mean.shape() != Shape{m}) {
      throw DimensionError("batchnorm: running statistics do not match feature width");
    }
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor inv_std({m});
  for (std::size_t c = 0; c < m; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);

  Tensor xhat({batch, m}), y({batch, m});
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t c = 0; c < m; ++c) {
      const double h = (x.at(i, c) - mean[c]) * inv_std[c];
      xhat.at(i, c) = h;
      y.at(i, c) = h * gamma[c] + beta[c];
    }

  Traced<BatchNormGrads> out{std::move(y), {}};
  if (!with_grad) return out;

  if (mode == Mode::kTrain) {
    out.backward = [xhat, inv_std, gamma](const Tensor& dy) {
      const std::size_t batch = xhat.dim(0), m = xhat.dim(1);
      if (dy.shape() != xhat.shape()) throw DimensionError("batchnorm backward: upstream shape");
      BatchNormGrads g{Tensor({batch, m}), Tensor({m}), Tensor({m})};
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t c = 0; c < m; ++c) {
          g.beta[c] += dy.at(i, c);
          g.gamma[c] += dy.at(i, c) * xhat.at(i, c);
        }
      const double inv_b = 1.0 / static_cast<double>(batch);
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t c = 0; c < m; ++c) {
          const double dxhat = dy.at(i, c) * gamma[c];
          g.input.at(i, c) = inv_std[c] *
              (dxhat - inv_b * gamma[c] * g.beta[c] - inv_b * xhat.at(i, c) * gamma[c] * g.gamma[c]);
        }
      return g;
    };
  } else {
    out.backward = [xhat, inv_std, gamma](const Tensor& dy) {
      const std::size_t batch = xhat.dim(0), m = xhat.dim(1);
      if (dy.shape() != xhat.shape()) throw DimensionError("batchnorm backward: upstream shape");
      BatchNormGrads g{Tensor({batch, m}), Tensor({m}), Tensor({m})};
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t c = 0; c < m; ++c) {
          g.beta[c] += dy.at(i, c);
          g.gamma[c] += dy.at(i, c) * xhat.at(i, c);
          g.input.at(i, c) = dy.at(i, c) * gamma[c] * inv_std[c];
        }
      return g;
    };
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Traced<Tensor> activation(const Tensor& x, Activation kind, bool with_grad) {
  Tensor y(x.shape());
  Tensor slope(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (kind) {
      case Activation::kRelu:
        y[i] = v > 0.0 ? v : 0.0;
        slope[i] = v > 0.0 ? 1.0 : 0.0;
        break;
      case Activation::kTanh: {
        const double t = std::tanh(v);
        y[i] = t;
        slope[i] = 1.0 - t * t;
        break;
      }
      case Activation::kSigmoid: {
        const double s = sigmoid(v);
        y[i] = s;
        slope[i] = s * (1.0 - s);
        break;
      }
    }
  }
  Traced<Tensor> out{std::move(y), {}};
  if (with_grad) {
    out.backward = [slope = std::move(slope)](const Tensor& dy) {
      if (dy.shape() != slope.shape()) throw DimensionError("activation backward: upstream shape");
      Tensor dx(slope.shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * slope[i];
      return dx;
    };
  }
  return out;
}

}  // namespace dcvh
