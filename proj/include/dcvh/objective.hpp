#pragma once

#include <span>

#include "dcvh/labels.hpp"
#include "dcvh/retrieval.hpp"
#include "dcvh/tensor.hpp"

namespace dcvh {

// A scalar loss and its gradient with respect to the (single) input.
struct ScalarLoss {
  double value = 0.0;
  Tensor grad;
};

// Mean over the batch of per-category sigmoid cross-entropy, positive label
// <-> large positive logit. Gradient is (sigmoid(x) - y) / B.
ScalarLoss multilabel_bce(const Tensor& logits, const LabelMatrix& labels);

double softplus(double x);

struct AlignmentLoss {
  double value = 0.0;
  Tensor grad_image;
  Tensor grad_text;
};

// Relaxed Hamming distance between paired continuous codes in [0,1]:
// (1/(B·D)) Σ z_i(1 - z_t) + (1 - z_i) z_t.
AlignmentLoss alignment_relaxed(const Tensor& image_codes, const Tensor& text_codes);

// (1/(B·D)) Σ popcount(B_i XOR B_t) over packed rows.
double alignment_exact(const BitMatrix& image_bits, const BitMatrix& text_bits);

struct LossReport {
  double l_image = 0.0;
  double l_text = 0.0;
  double j_align = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

void validate_lambda(double lambda);

// (1 - λ)(l_image + l_text) + λ·j, λ ∈ (0, 1].
LossReport total_loss(double l_image, double l_text, double j_align, double lambda);

// (1 - λ) Σ_i L_i + λ Σ_{i<j} J_ij for m ≥ 2 views; `aligns` is the symmetric
// m×m matrix of pairwise alignment terms with a zero diagonal.
double multiview_total(std::span<const double> losses, const Tensor& aligns, double lambda);

}  // namespace dcvh
