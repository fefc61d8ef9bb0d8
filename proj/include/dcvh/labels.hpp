#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dcvh {

// N×C multilabel indicator; bit (i, p) is set iff instance i carries category p.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t categories)
      : rows_(rows), categories_(categories), bits_(rows * categories, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t categories() const { return categories_; }

  bool get(std::size_t r, std::size_t p) const { return bits_[r * categories_ + p] != 0; }
  void set(std::size_t r, std::size_t p, bool v = true) { bits_[r * categories_ + p] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return std::span<const std::uint8_t>(bits_).subspan(r * categories_, categories_);
  }

  std::size_t positives(std::size_t r) const;
  LabelMatrix subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t categories_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace dcvh
