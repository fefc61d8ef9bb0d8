#pragma once

#include <span>
#include <string>
#include <vector>

#include "dcvh/labels.hpp"
#include "dcvh/models.hpp"
#include "dcvh/retrieval.hpp"

namespace dcvh {

// relevant(q, d) iff the query and database rows share at least one category.
class RelevanceRule {
 public:
  RelevanceRule(const LabelMatrix& queries, const LabelMatrix& database);

  bool relevant(std::size_t query_row, std::size_t db_row) const;
  std::size_t relevant_count(std::size_t query_row) const;
  std::size_t query_count() const { return queries_->rows(); }
  std::size_t database_size() const { return database_->rows(); }

 private:
  const LabelMatrix* queries_;
  const LabelMatrix* database_;
};

// (1/R) Σ over relevant hits of precision at that rank, R = relevant items in
// the whole database. 0 when R = 0.
double average_precision(std::span<const RankedEntry> ranked, const RelevanceRule& rule,
                         std::size_t query_row);

// Mean AP over every query, each ranked against the full database.
double mean_average_precision(const PackedCodeSet& queries, const PackedCodeSet& database,
                              const RelevanceRule& rule);

struct PrPoint {
  std::size_t radius = 0;
  double precision = 0.0;
  double recall = 0.0;
  bool defined = false;  // false when no query retrieved anything at this radius
};

using PrCurve = std::vector<PrPoint>;

// Hash-lookup precision and recall for every radius 0..D, macro-averaged over
// the queries for which each value is defined.
PrCurve pr_curve(const PackedCodeSet& queries, const PackedCodeSet& database, const RelevanceRule& rule);

// "radius,precision,recall,defined" rows; undefined precision is written as nan.
std::string format_pr_csv(const PrCurve& curve);

using Annotations = std::vector<std::vector<std::size_t>>;

// Indices of the k largest logits per row, ties broken by ascending category.
Annotations annotate_topk(const Tensor& logits, std::size_t k);
Annotations annotate_topk(const Tensor& codes, const Classifier& classifier, std::size_t k);

struct OverallPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Pooled precision, recall and F1 of top-k predictions against ground truth.
OverallPrf overall_prf(const Annotations& predictions, const LabelMatrix& truth);

}  // namespace dcvh
