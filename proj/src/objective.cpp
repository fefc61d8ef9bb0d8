#include "dcvh/objective.hpp"

#include <cmath>
#include <string>

#include "dcvh/error.hpp"
#include "dcvh/ops.hpp"

namespace dcvh {

std::size_t LabelMatrix::positives(std::size_t r) const {
  std::size_t n = 0;
  for (auto b : row(r)) n += b;
  return n;
}

LabelMatrix LabelMatrix::subset(std::span<const std::size_t> rows) const {
  LabelMatrix out(rows.size(), categories_);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t p = 0; p < categories_; ++p) out.set(i, p, get(rows[i], p));
  return out;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

ScalarLoss multilabel_bce(const Tensor& logits, const LabelMatrix& labels) {
  require_rank(logits, 2, "multilabel_bce logits");
  const std::size_t batch = logits.dim(0), cats = logits.dim(1);
  if (labels.rows() != batch || labels.categories() != cats) {
    throw DimensionError("multilabel_bce: logits " + shape_string(logits.shape()) +
                         " vs labels [" + std::to_string(labels.rows()) + "x" +
                         std::to_string(labels.categories()) + "]");
  }
  ScalarLoss out{0.0, Tensor(logits.shape())};
  if (batch == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t p = 0; p < cats; ++p) {
      const double x = logits.at(i, p);
      const bool y = labels.get(i, p);
      sum += y ? softplus(-x) : softplus(x);
      out.grad.at(i, p) = (sigmoid(x) - (y ? 1.0 : 0.0)) * inv_b;
    }
  }
  out.value = sum * inv_b;
  return out;
}

namespace {

void require_unit_interval(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError(std::string(what) + " has entry " + std::to_string(v) + " outside [0,1]");
    }
  }
}

}  // namespace

AlignmentLoss alignment_relaxed(const Tensor& image_codes, const Tensor& text_codes) {
  require_rank(image_codes, 2, "alignment image codes");
  if (image_codes.shape() != text_codes.shape()) {
    throw DimensionError("alignment: code shapes " + shape_string(image_codes.shape()) + " and " +
                         shape_string(text_codes.shape()) + " differ");
  }
  require_unit_interval(image_codes, "image codes");
  require_unit_interval(text_codes, "text codes");

  const std::size_t count = image_codes.size();
  AlignmentLoss out{0.0, Tensor(image_codes.shape()), Tensor(text_codes.shape())};
  if (count == 0) return out;
  const double norm = static_cast<double>(count);
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double a = image_codes[i], b = text_codes[i];
    sum += a * (1.0 - b) + (1.0 - a) * b;
    out.grad_image[i] = (1.0 - 2.0 * b) / norm;
    out.grad_text[i] = (1.0 - 2.0 * a) / norm;
  }
  out.value = sum / norm;
  return out;
}

double alignment_exact(const BitMatrix& image_bits, const BitMatrix& text_bits) {
  if (image_bits.rows() != text_bits.rows() || image_bits.cols() != text_bits.cols()) {
    throw DimensionError("alignment_exact: bit matrices differ in shape");
  }
  const std::size_t count = image_bits.rows() * image_bits.cols();
  if (count == 0) return 0.0;
  std::vector<std::uint64_t> ids(image_bits.rows());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const auto a = PackedCodeSet::pack(image_bits, ids);
  const auto b = PackedCodeSet::pack(text_bits, std::move(ids));
  std::uint64_t differing = 0;
  for (std::size_t r = 0; r < a.size(); ++r) differing += hamming(a.code(r), b.code(r));
  return static_cast<double>(differing) / static_cast<double>(count);
}

void validate_lambda(double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must lie in (0, 1], got " + std::to_string(lambda));
  }
}

LossReport total_loss(double l_image, double l_text, double j_align, double lambda) {
  validate_lambda(lambda);
  return LossReport{l_image, l_text, j_align,
                    (1.0 - lambda) * (l_image + l_text) + lambda * j_align, lambda};
}

double multiview_total(std::span<const double> losses, const Tensor& aligns, double lambda) {
  validate_lambda(lambda);
  const std::size_t m = losses.size();
  if (m < 2) throw ArgumentError("multiview_total needs at least two views");
  if (aligns.shape() != Shape{m, m}) {
    throw DimensionError("multiview_total: alignment matrix must be " + std::to_string(m) + "x" +
                         std::to_string(m));
  }
  double classification = 0.0, alignment = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    classification += losses[i];
    if (aligns.at(i, i) != 0.0) throw ContractError("multiview_total: non-zero diagonal");
    for (std::size_t j = i + 1; j < m; ++j) {
      if (aligns.at(i, j) != aligns.at(j, i)) {
        throw ContractError("multiview_total: alignment matrix is not symmetric");
      }
      alignment += aligns.at(i, j);
    }
  }
  return (1.0 - lambda) * classification + lambda * alignment;
}

}  // namespace dcvh
