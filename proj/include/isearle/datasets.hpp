#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "isearle/aspects.hpp"
#include "isearle/eval.hpp"

namespace isearle {

struct CirTriplet {
  std::string query_id;
  std::string reference_id;
  std::vector<std::string> relative_captions;  // one, or two for FashionIQ
  std::string target_id;
  std::optional<std::string> shared_concept;

  bool operator==(const CirTriplet&) const = default;
};

struct MultiGtQuery {
  std::string query_id;
  std::string reference_id;
  std::string relative_caption;
  std::string shared_concept;
  std::string target_id;
  std::vector<std::string> ground_truth_ids;  // unique, contains target_id
  std::set<SemanticAspect> semantic_aspects;

  bool operator==(const MultiGtQuery&) const = default;
};

enum class DatasetSchema { triplet, multi_gt };
std::optional<DatasetSchema> parse_schema(std::string_view name);

struct Dataset {
  DatasetSchema schema = DatasetSchema::multi_gt;
  std::vector<CirTriplet> triplets;
  std::vector<MultiGtQuery> queries;

  std::size_t size() const { return schema == DatasetSchema::triplet ? triplets.size() : queries.size(); }
  bool operator==(const Dataset&) const = default;
};

// Throws ValidationError naming the offending record ("queries[3]: ...").
void validate(const MultiGtQuery& query, const std::string& locus);
void validate(const CirTriplet& triplet, const std::string& locus);

// Canonical interchange JSON: {"queries": [...]}. When `known_images` is
// given every referenced image id must be in it.
Dataset parse_dataset(const nlohmann::json& document, DatasetSchema schema,
                      const std::unordered_set<std::string>* known_images = nullptr);
Dataset load_dataset(const std::filesystem::path& path, DatasetSchema schema,
                     const std::unordered_set<std::string>* known_images = nullptr);
nlohmann::json to_json(const Dataset& dataset);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Adapters from native layouts into the canonical triplet schema.
// CIRR: [{"pairid", "reference", "target_hard", "caption"}, ...]
Dataset from_cirr(const nlohmann::json& native);
// FashionIQ: [{"candidate", "target", "captions": [a, b]}, ...]
Dataset from_fashioniq(const nlohmann::json& native);

struct DatasetStats {
  std::size_t query_count = 0;
  std::size_t gt_total = 0;
  double gt_mean = 0.0;
  std::size_t gt_max = 0;
  std::size_t gt_mode = 0;  // smallest of the most frequent counts
  double caption_mean_words = 0.0;
  std::map<SemanticAspect, double> aspect_coverage;  // fraction of queries

  nlohmann::json to_json() const;
};

DatasetStats dataset_stats(const Dataset& dataset);

// Single-ground-truth view (reference, caption, phase-1 target).
std::vector<RedundancyQuery> single_gt_view(const Dataset& dataset);

}  // namespace isearle
