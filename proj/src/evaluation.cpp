#include "dcvh/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>

#include "dcvh/error.hpp"

namespace dcvh {

RelevanceRule::RelevanceRule(const LabelMatrix& queries, const LabelMatrix& database)
    : queries_(&queries), database_(&database) {
  if (queries.categories() != database.categories()) {
    throw DimensionError("query labels have " + std::to_string(queries.categories()) +
                         " categories, database labels " + std::to_string(database.categories()));
  }
}

bool RelevanceRule::relevant(std::size_t query_row, std::size_t db_row) const {
  const auto q = queries_->row(query_row), d = database_->row(db_row);
  for (std::size_t p = 0; p < q.size(); ++p)
    if (q[p] && d[p]) return true;
  return false;
}

std::size_t RelevanceRule::relevant_count(std::size_t query_row) const {
  std::size_t n = 0;
  for (std::size_t d = 0; d < database_->rows(); ++d) n += relevant(query_row, d);
  return n;
}

double average_precision(std::span<const RankedEntry> ranked, const RelevanceRule& rule,
                         std::size_t query_row) {
  const std::size_t total = rule.relevant_count(query_row);
  if (total == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!rule.relevant(query_row, ranked[i].row)) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(total);
}

namespace {

void check_sets(const PackedCodeSet& queries, const PackedCodeSet& database, const RelevanceRule& rule) {
  if (queries.size() == 0) throw ArgumentError("query set is empty");
  if (queries.size() != rule.query_count() || database.size() != rule.database_size()) {
    throw DimensionError("code sets and label sets differ in size");
  }
  if (database.size() > 0 && queries.code_bits() != database.code_bits()) {
    throw DimensionError("query codes have " + std::to_string(queries.code_bits()) + " bits, database " +
                         std::to_string(database.code_bits()));
  }
}

}  // namespace

double mean_average_precision(const PackedCodeSet& queries, const PackedCodeSet& database,
                              const RelevanceRule& rule) {
  check_sets(queries, database, rule);
  if (database.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const RankedResult ranked = rank(queries, q, database, database.size());
    sum += average_precision(ranked, rule, q);
  }
  return sum / static_cast<double>(queries.size());
}

PrCurve pr_curve(const PackedCodeSet& queries, const PackedCodeSet& database, const RelevanceRule& rule) {
  check_sets(queries, database, rule);
  const std::size_t bits = database.size() ? database.code_bits() : queries.code_bits();
  std::vector<double> precision_sum(bits + 1, 0.0), recall_sum(bits + 1, 0.0);
  std::vector<std::size_t> precision_n(bits + 1, 0);
  std::size_t recall_n = 0;

  std::vector<std::size_t> all(bits + 1), rel(bits + 1);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::fill(all.begin(), all.end(), 0);
    std::fill(rel.begin(), rel.end(), 0);
    for (std::size_t d = 0; d < database.size(); ++d) {
      const auto dist = hamming(queries.code(q), database.code(d));
      ++all[dist];
      rel[dist] += rule.relevant(q, d);
    }
    const std::size_t total_relevant = std::accumulate(rel.begin(), rel.end(), std::size_t{0});
    if (total_relevant > 0) ++recall_n;
    std::size_t retrieved = 0, hits = 0;
    for (std::size_t r = 0; r <= bits; ++r) {
      retrieved += all[r];
      hits += rel[r];
      if (retrieved > 0) {
        precision_sum[r] += static_cast<double>(hits) / static_cast<double>(retrieved);
        ++precision_n[r];
      }
      if (total_relevant > 0) recall_sum[r] += static_cast<double>(hits) / static_cast<double>(total_relevant);
    }
  }

  PrCurve curve(bits + 1);
  for (std::size_t r = 0; r <= bits; ++r) {
    curve[r].radius = r;
    curve[r].defined = precision_n[r] > 0;
    curve[r].precision = curve[r].defined ? precision_sum[r] / static_cast<double>(precision_n[r]) : 0.0;
    curve[r].recall = recall_n ? recall_sum[r] / static_cast<double>(recall_n) : 0.0;
  }
  return curve;
}

namespace {

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_pr_csv(const PrCurve& curve) {
  std::string out = "radius,precision,recall,defined\n";
  for (const PrPoint& p : curve) {
    out += std::to_string(p.radius) + ',' + (p.defined ? shortest(p.precision) : "nan") + ',' +
           shortest(p.recall) + ',' + (p.defined ? '1' : '0') + '\n';
  }
  return out;
}

Annotations annotate_topk(const Tensor& logits, std::size_t k) {
  require_rank(logits, 2, "annotation logits");
  const std::size_t cats = logits.dim(1);
  if (k == 0 || k > cats) {
    throw ArgumentError("top-k needs 1 <= k <= " + std::to_string(cats) + ", got " + std::to_string(k));
  }
  Annotations out(logits.dim(0));
  std::vector<std::size_t> order(cats);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double la = logits.at(i, a), lb = logits.at(i, b);
                        return la != lb ? la > lb : a < b;
                      });
    out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

Annotations annotate_topk(const Tensor& codes, const Classifier& classifier, std::size_t k) {
  return annotate_topk(classify(codes, classifier), k);
}

OverallPrf overall_prf(const Annotations& predictions, const LabelMatrix& truth) {
  if (predictions.size() != truth.rows()) {
    throw DimensionError(std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(truth.rows()) + " instances");
  }
  std::size_t correct = 0, predicted = 0, actual = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != predictions.front().size()) {
      throw ContractError("every instance needs the same number of predictions");
    }
    for (std::size_t p : predictions[i]) {
      if (p >= truth.categories()) throw DimensionError("predicted category " + std::to_string(p) + " out of range");
      correct += truth.get(i, p);
    }
    predicted += predictions[i].size();
    actual += truth.positives(i);
  }
  OverallPrf r;
  r.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
  r.recall = actual ? static_cast<double>(correct) / static_cast<double>(actual) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace dcvh
