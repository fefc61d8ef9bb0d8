#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dcvh {

// Dense 0/1 matrix, one byte per bit. Rows are codes.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  bool get(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits_[r * cols_ + c] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t r) const {
    return std::span<const std::uint8_t>(bits_).subspan(r * cols_, cols_);
  }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// n codes of D bits, each stored in ceil(D/8) bytes. Bit j of a code lives in
// byte j/8 at position j%8 (LSB first); unused trailing bits are zero.
class PackedCodeSet {
 public:
  PackedCodeSet() = default;

  static PackedCodeSet pack(const BitMatrix& codes, std::vector<std::uint64_t> ids);
  BitMatrix unpack() const;

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t code_bits() const { return code_bits_; }
  std::size_t bytes_per_code() const { return bytes_per_code_; }

  std::span<const std::uint8_t> code(std::size_t row) const {
    return std::span<const std::uint8_t>(storage_).subspan(row * bytes_per_code_, bytes_per_code_);
  }
  std::uint64_t id(std::size_t row) const { return ids_[row]; }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  const std::vector<std::uint8_t>& storage() const { return storage_; }

  // Binary file: "DCVB", version byte, n (u64), D (u32), n ids (u64), packed rows.
  std::vector<std::uint8_t> serialize() const;
  static PackedCodeSet deserialize(std::vector<std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static PackedCodeSet load(const std::filesystem::path& path);

  friend bool operator==(const PackedCodeSet&, const PackedCodeSet&) = default;

 private:
  std::size_t code_bits_ = 0;
  std::size_t bytes_per_code_ = 0;
  std::vector<std::uint64_t> ids_;
  std::vector<std::uint8_t> storage_;
};

// Popcount of a XOR b over packed bytes.
std::uint32_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct RankedEntry {
  std::uint64_t id = 0;
  std::uint32_t distance = 0;
  std::size_t row = 0;  // row in the database code set

  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

// Ordered by distance, ties by ascending id.
using RankedResult = std::vector<RankedEntry>;

// Top-k of a full linear scan; k >= size returns the whole database sorted.
RankedResult rank(std::span<const std::uint8_t> query, const PackedCodeSet& db, std::size_t k);
RankedResult rank(const PackedCodeSet& queries, std::size_t query_row, const PackedCodeSet& db,
                  std::size_t k);

// Ids within Hamming distance `radius` of the query, in database order.
std::vector<std::uint64_t> lookup(std::span<const std::uint8_t> query, const PackedCodeSet& db,
                                  std::size_t radius);
std::vector<std::uint64_t> lookup(const PackedCodeSet& queries, std::size_t query_row,
                                  const PackedCodeSet& db, std::size_t radius);

}  // namespace dcvh
