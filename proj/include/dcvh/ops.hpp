#pragma once

#include <functional>

#include "dcvh/tensor.hpp"

namespace dcvh {

// Forward value plus a closure mapping the upstream gradient dL/dvalue to the
// gradients of the op's inputs. The closure is empty when built without grad.
template <class Grads>
struct Traced {
  Tensor value;
  std::function<Grads(const Tensor&)> backward;
};

enum class Mode { kTrain, kInfer };

struct LinearGrads {
  Tensor input;
  Tensor weights;
};

// y = x·W, no bias. x[B×n], W[n×m].
Traced<LinearGrads> linear(const Tensor& x, const Tensor& weights, bool with_grad = true);

struct Conv1dGrads {
  Tensor input;
  Tensor kernels;
};

// Single-channel valid convolution: x[B×L], kernels[K×w] -> [B×K×P] with
// P = (L - w) / stride + 1 and out[b,k,p] = sum_j x[b, p*stride + j] * kernels[k,j].
Traced<Conv1dGrads> conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
                           bool with_grad = true);

std::size_t conv1d_positions(std::size_t length, std::size_t width, std::size_t stride);

struct BatchNormState {
  BatchNormState() = default;
  // Running mean 0, running variance 1.
  explicit BatchNormState(std::size_t features);

  bool populated() const { return !running_mean.empty(); }

  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;
};

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

// Per-column normalisation of x[B×m]. Train mode uses batch statistics (biased
// variance) and folds them into the running averages; infer mode uses the
// running averages.
Traced<BatchNormGrads> batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 Mode mode, BatchNormState& state, bool with_grad = true);

enum class Activation { kRelu, kTanh, kSigmoid };

Traced<Tensor> activation(const Tensor& x, Activation kind, bool with_grad = true);

double sigmoid(double x);

}  // namespace dcvh
