#include "dcvh/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>
#include <unordered_set>

#include "dcvh/binary_io.hpp"
#include "dcvh/error.hpp"

namespace dcvh {

namespace {

constexpr char kMagic[] = "DCVB";
constexpr std::uint8_t kVersion = 1;

void require_unique(const std::vector<std::uint64_t>& ids) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(ids.size());
  for (std::uint64_t id : ids) {
    if (!seen.insert(id).second) throw IngestionError("duplicate code id " + std::to_string(id));
  }
}

void require_compatible(const PackedCodeSet& queries, std::size_t row, const PackedCodeSet& db) {
  if (row >= queries.size()) throw ArgumentError("query row out of range");
  if (!db.empty() && queries.code_bits() != db.code_bits()) {
    throw DimensionError("query codes have " + std::to_string(queries.code_bits()) +
                         " bits, database codes " + std::to_string(db.code_bits()));
  }
}

}  // namespace

PackedCodeSet PackedCodeSet::pack(const BitMatrix& codes, std::vector<std::uint64_t> ids) {
  if (ids.size() != codes.rows()) {
    throw DimensionError("pack: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(codes.rows()) + " codes");
  }
  require_unique(ids);
  PackedCodeSet set;
  set.code_bits_ = codes.cols();
  set.bytes_per_code_ = (codes.cols() + 7) / 8;
  set.ids_ = std::move(ids);
  set.storage_.assign(codes.rows() * set.bytes_per_code_, 0);
  for (std::size_t r = 0; r < codes.rows(); ++r) {
    std::uint8_t* out = set.storage_.data() + r * set.bytes_per_code_;
    for (std::size_t j = 0; j < codes.cols(); ++j) {
      if (codes.get(r, j)) out[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
    }
  }
  return set;
}

BitMatrix PackedCodeSet::unpack() const {
  BitMatrix out(size(), code_bits_);
  for (std::size_t r = 0; r < size(); ++r) {
    auto c = code(r);
    for (std::size_t j = 0; j < code_bits_; ++j) out.set(r, j, (c[j / 8] >> (j % 8)) & 1u);
  }
  return out;
}

std::vector<std::uint8_t> PackedCodeSet::serialize() const {
  io::ByteWriter w;
  w.magic(kMagic);
  w.u8(kVersion);
  w.u64(size());
  w.u32(static_cast<std::uint32_t>(code_bits_));
  for (std::uint64_t id : ids_) w.u64(id);
  w.bytes(storage_);
  return w.buffer();
}

PackedCodeSet PackedCodeSet::deserialize(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kMagic, "packed code");
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw FormatError("unsupported packed code version " + std::to_string(version));
  }
  const std::uint64_t n = r.u64();
  const std::uint32_t bits = r.u32();
  PackedCodeSet set;
  set.code_bits_ = bits;
  set.bytes_per_code_ = (bits + 7) / 8;
  if (n > r.remaining() / 8) throw FormatError("packed code file truncated");
  set.ids_.resize(n);
  for (auto& id : set.ids_) id = r.u64();
  auto rows = r.bytes(n * set.bytes_per_code_);
  set.storage_.assign(rows.begin(), rows.end());
  if (!r.at_end()) throw FormatError("trailing bytes after packed codes");
  require_unique(set.ids_);
  if (bits % 8 != 0) {
    const auto mask = static_cast<std::uint8_t>(0xFFu << (bits % 8));
    for (std::size_t i = 0; i < n; ++i) {
      if (set.storage_[i * set.bytes_per_code_ + set.bytes_per_code_ - 1] & mask) {
        throw FormatError("non-zero padding bits in code row " + std::to_string(i));
      }
    }
  }
  return set;
}

void PackedCodeSet::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

PackedCodeSet PackedCodeSet::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

std::uint32_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw DimensionError("hamming: code lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " bytes differ");
  }
  std::uint32_t d = 0;
  std::size_t i = 0;
  for (; i + 8 <= a.size(); i += 8) {
    std::uint64_t x, y;
    std::memcpy(&x, a.data() + i, 8);
    std::memcpy(&y, b.data() + i, 8);
    d += static_cast<std::uint32_t>(std::popcount(x ^ y));
  }
  for (; i < a.size(); ++i) d += static_cast<std::uint32_t>(std::popcount(static_cast<std::uint8_t>(a[i] ^ b[i])));
  return d;
}

RankedResult rank(std::span<const std::uint8_t> query, const PackedCodeSet& db, std::size_t k) {
  if (k == 0) throw ArgumentError("rank: k must be at least 1");
  const std::size_t n = db.size();
  if (n == 0) return {};
  if (query.size() != db.bytes_per_code()) {
    throw DimensionError("rank: query is " + std::to_string(query.size()) +
                         " bytes, database codes are " + std::to_string(db.bytes_per_code()));
  }
  k = std::min(k, n);

  // Distances are bounded by D, so a histogram gives the cutoff distance that
  // admits at least k rows; only rows within it are sorted.
  std::vector<std::uint32_t> dist(n);
  std::vector<std::size_t> histogram(db.code_bits() + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = hamming(query, db.code(i));
    ++histogram[dist[i]];
  }
  std::uint32_t cutoff = 0;
  for (std::size_t seen = 0; cutoff < histogram.size(); ++cutoff) {
    seen += histogram[cutoff];
    if (seen >= k) break;
  }

  RankedResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (dist[i] <= cutoff) out.push_back({db.id(i), dist[i], i});
  }
  std::sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });
  out.resize(k);
  return out;
}

RankedResult rank(const PackedCodeSet& queries, std::size_t query_row, const PackedCodeSet& db,
                  std::size_t k) {
  require_compatible(queries, query_row, db);
  return rank(queries.code(query_row), db, k);
}

std::vector<std::uint64_t> lookup(std::span<const std::uint8_t> query, const PackedCodeSet& db,
                                  std::size_t radius) {
  if (radius > db.code_bits()) {
    throw ArgumentError("lookup: radius " + std::to_string(radius) + " exceeds code length " +
                        std::to_string(db.code_bits()));
  }
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < db.size(); ++i) {
    if (hamming(query, db.code(i)) <= radius) out.push_back(db.id(i));
  }
  return out;
}

std::vector<std::uint64_t> lookup(const PackedCodeSet& queries, std::size_t query_row,
                                  const PackedCodeSet& db, std::size_t radius) {
  require_compatible(queries, query_row, db);
  return lookup(queries.code(query_row), db, radius);
}

}  // namespace dcvh
