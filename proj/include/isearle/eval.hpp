#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "isearle/aspects.hpp"
#include "isearle/backbone.hpp"
#include "isearle/retrieval.hpp"

namespace isearle {

struct QueryResult {
  std::string query_id;
  std::vector<std::string> ranked_ids;
  std::set<std::string> ground_truths;
  std::set<SemanticAspect> aspects;

  // Ground truths nonempty, ranked ids unique.
  void validate() const;
};

// Fraction of queries with at least one ground truth in the top k.
double recall_at_k(std::span<const QueryResult> results, std::size_t k);

// Mean over queries of (1 / min(k, G)) * sum_{i <= k} P@i * rel@i.
double map_at_k(std::span<const QueryResult> results, std::size_t k);

struct AspectBreakdown {
  std::map<SemanticAspect, double> values;
  std::map<SemanticAspect, std::size_t> query_counts;
  std::vector<SemanticAspect> omitted;  // aspects carried by no query
};

AspectBreakdown map_by_aspect(std::span<const QueryResult> results, std::size_t k);

// Arithmetic mean of per-category recalls (FashionIQ-style average).
double average_recall(std::span<const double> per_category);

struct RedundancyQuery {
  std::string reference_id;
  std::string caption;
  std::string target_id;
};

struct RedundancyCurves {
  std::vector<std::size_t> ks;
  std::vector<double> text_to_image;
  std::vector<double> image_to_image;
};

// Recall@K of caption-only and reference-image-only retrieval against the
// single target of each query.
RedundancyCurves modality_redundancy(std::span<const RedundancyQuery> queries, const RetrievalIndex& index,
                                     const Backbone& backbone, std::span<const std::size_t> ks);

struct MissingGtEstimate {
  double estimated_total = 0.0;
  double annotated_fraction = 0.0;
};

// estimated_total = found_via_model / model_recall,
// annotated_fraction = total_annotated / estimated_total.
MissingGtEstimate estimate_missing_gts(std::size_t found_via_model, double model_recall, std::size_t total_annotated);

// JSON lines {query_id, ranked_ids, gts, aspects}.
std::vector<QueryResult> read_results(const std::filesystem::path& path);
void write_results(const std::filesystem::path& path, std::span<const QueryResult> results);

struct MetricReport {
  std::string metric;  // "map" or "recall"
  std::vector<std::size_t> ks;
  std::vector<double> values;
  std::map<std::size_t, AspectBreakdown> by_aspect;  // mAP only

  nlohmann::json to_json() const;
  std::string to_table() const;
};

MetricReport evaluate(std::span<const QueryResult> results, const std::string& metric, std::span<const std::size_t> ks);

}  // namespace isearle
