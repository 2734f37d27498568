#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "isearle/aspects.hpp"
#include "isearle/backbone.hpp"
#include "isearle/datasets.hpp"
#include "isearle/retrieval.hpp"

namespace isearle {

inline constexpr std::array<std::string_view, 12> kSupercategories = {
    "person",     "animal", "sports",    "vehicle", "food",    "accessory",
    "electronic", "kitchen", "furniture", "indoor",  "outdoor", "appliance",
};

// Zero-shot supercategory per index row: argmax cosine against
// "a photo of {supercategory}". Returns indices into kSupercategories.
std::vector<int> assign_supercategories(const RetrievalIndex& index, const Backbone& backbone);

enum class Provenance { visual_similarity, model_retrieval };
std::string_view to_string(Provenance p);

struct GalleryCandidate {
  std::string image_id;
  double similarity = 0.0;  // cosine to the anchor of the first provenance tag
  std::vector<Provenance> provenance;
  bool known_ground_truth = false;

  nlohmann::json to_json() const;
};

struct Gallery {
  std::vector<GalleryCandidate> candidates;
  std::string notice;  // set when fewer than the requested candidates exist
};

// Top `size` images by cosine to the reference, skipping the reference itself
// and near duplicates (similarity > dedup_threshold). Descending order.
Gallery build_target_gallery(const std::string& reference_id, const RetrievalIndex& index, std::size_t size = 50,
                             double dedup_threshold = 0.92);

using Inverter = std::function<PseudoWordToken(const std::string& image_id)>;

// "a photo of {shared concept} S* that {relative caption}"
std::string annotation_prompt(std::string_view label, std::string_view shared_concept, std::string_view caption);

// Union of the top `model_k` results for the annotation prompt and the top
// `visual_k` images most similar to the target. Overlaps are merged into one
// entry carrying both tags; the reference is never offered.
Gallery build_multigt_gallery(const MultiGtQuery& draft, const RetrievalIndex& index, const Inverter& inverter,
                              const Backbone& backbone, std::size_t model_k = 100, std::size_t visual_k = 50);

// Aspect kept iff at least ceil(V / 2) of the V ballots contain it.
std::set<SemanticAspect> majority_aspects(const std::map<std::string, std::set<SemanticAspect>>& ballots);

struct PoolEntry {
  std::string image_id;
  int supercategory = 0;
};

// Supercategory with the fewest completed triplets first (fixed list order on
// ties), then the first available image of it in pool order. nullopt means
// the queue is exhausted.
std::optional<PoolEntry> supercategory_balance(const std::vector<PoolEntry>& pool,
                                               const std::array<std::size_t, 12>& completed,
                                               const std::function<bool(const std::string&)>& available);

enum class ItemPhase { multi_gt, aspects, done };
std::string_view to_string(ItemPhase p);

struct AnnotationItem {
  std::string query_id;
  std::string reference_id;
  std::string target_id;
  std::string shared_concept;
  std::string relative_caption;
  int supercategory = -1;
  std::string author;
  ItemPhase phase = ItemPhase::multi_gt;
  std::vector<std::string> ground_truth_ids;  // target first
  std::map<std::string, std::set<SemanticAspect>> ballots;
  std::optional<std::set<SemanticAspect>> final_aspects;
  std::uint64_t version = 0;

  bool operator==(const AnnotationItem&) const = default;
  nlohmann::json to_json() const;
};

struct TripletSubmission {
  std::string reference_id;
  std::string target_id;
  std::string shared_concept;
  std::string relative_caption;
  bool caption_rule_confirmed = false;
  int supercategory = -1;
};

// Append-only event log with the annotation state machine on top. Every
// mutation is validated, appended to the log and then applied, and opening a
// log replays it, so the in-memory state is always a function of the log.
// Not thread safe; the HTTP layer serializes calls.
class AnnotationStore {
 public:
  using Clock = std::function<std::string()>;

  // Empty path keeps the log in memory only.
  explicit AnnotationStore(std::filesystem::path log_path = {}, std::unordered_set<std::string> known_images = {},
                           Clock clock = {});

  const AnnotationItem& record_triplet(const std::string& annotator, const TripletSubmission& triplet);
  void record_skip(const std::string& annotator, const std::string& reference_id);
  // `selected` are the extra ground truths; the target is always kept.
  const AnnotationItem& record_ground_truths(const std::string& annotator, const std::string& query_id,
                                             const std::vector<std::string>& selected,
                                             std::optional<std::uint64_t> expected_version = std::nullopt);
  // A second ballot from the same annotator replaces the first.
  const AnnotationItem& submit_aspect_votes(const std::string& annotator, const std::string& query_id,
                                            const std::set<SemanticAspect>& aspects,
                                            std::optional<std::uint64_t> expected_version = std::nullopt);
  // Idempotent once done.
  const AnnotationItem& finalize_aspects(const std::string& annotator, const std::string& query_id);

  const AnnotationItem& item(const std::string& query_id) const;  // LookupError
  const std::map<std::string, AnnotationItem>& items() const { return items_; }
  bool reference_consumed(const std::string& image_id) const { return consumed_.contains(image_id); }
  const std::array<std::size_t, 12>& completed_per_supercategory() const { return completed_; }
  const std::vector<nlohmann::json>& events() const { return events_; }

  // Multi-GT dataset with one query per recorded triplet.
  Dataset export_dataset() const;

 private:
  void append(nlohmann::json event);
  void apply(const nlohmann::json& event);
  AnnotationItem& mutable_item(const std::string& query_id);
  void check_version(const AnnotationItem& item, std::optional<std::uint64_t> expected) const;
  void check_known(const std::string& id) const;

  std::filesystem::path log_path_;
  std::ofstream log_;
  std::unordered_set<std::string> known_images_;
  Clock clock_;
  std::vector<nlohmann::json> events_;
  std::map<std::string, AnnotationItem> items_;
  std::vector<std::string> order_;
  std::set<std::string> consumed_;  // references used by a triplet or skipped
  std::array<std::size_t, 12> completed_{};
};

struct AnnotationConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_root = "annotation";  // event log lives here
  std::filesystem::path index_path;
  std::filesystem::path phi_checkpoint;  // either this or token_store
  std::filesystem::path token_store;
  double dedup_threshold = 0.92;
  std::size_t target_gallery_size = 50;
  std::size_t model_k = 100;
  std::size_t visual_k = 50;
  // Bearer token -> annotator id. Empty: the token itself is the id.
  std::map<std::string, std::string> annotators;
};

// HTTP front end. Routes:
//   GET  /next-reference           GET  /gallery/target/{ref}
//   POST /triplet                  POST /skip
//   GET  /gallery/multigt/{query}  POST /ground-truths
//   POST /aspect-votes             POST /finalize/{query}
//   GET  /export                   GET  /health
class AnnotationService {
 public:
  AnnotationService(AnnotationConfig config, const RetrievalIndex& index, const Backbone& backbone,
                    Inverter inverter, std::vector<PoolEntry> pool);
  ~AnnotationService();

  // Blocks until stop(). Returns false when the socket cannot be bound.
  bool listen();
  // Binds to an ephemeral port and serves on a background thread.
  int start_background();
  void stop();

  AnnotationStore& store() { return store_; }

 private:
  struct Impl;
  AnnotationConfig config_;
  const RetrievalIndex& index_;
  const Backbone& backbone_;
  Inverter inverter_;
  std::vector<PoolEntry> pool_;
  AnnotationStore store_;
  std::mutex mutex_;
  std::map<std::string, std::string> leases_;  // annotator -> reference being annotated
  std::unique_ptr<Impl> impl_;
};

}  // namespace isearle
