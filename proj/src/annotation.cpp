#include "isearle/annotation.hpp"

#include <algorithm>
#include <ctime>
#include <unordered_map>

#include "isearle/errors.hpp"

namespace isearle {

namespace {

using nlohmann::json;

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json aspects_json(const std::set<SemanticAspect>& aspects) {
  json out = json::array();
  for (auto a : aspects) out.push_back(std::string(to_string(a)));
  return out;
}

std::set<SemanticAspect> aspects_from_json(const json& j) {
  std::set<SemanticAspect> out;
  for (const auto& a : j) out.insert(*parse_aspect(a.get<std::string>()));
  return out;
}

// Every row of the index ranked by cosine to `query`, best first.
std::vector<SearchHit> rank_all(const RetrievalIndex& index, const Vector& query) {
  return index.search(EmbeddingVector{query, false}, index.size());
}

}  // namespace

std::vector<int> assign_supercategories(const RetrievalIndex& index, const Backbone& backbone) {
  Matrix prompts(static_cast<Eigen::Index>(kSupercategories.size()), backbone.info().embed_dim);
  for (std::size_t i = 0; i < kSupercategories.size(); ++i)
    prompts.row(static_cast<Eigen::Index>(i)) =
        backbone.encode_text("a photo of " + std::string(kSupercategories[i])).as_unit().values.transpose();
  const Matrix scores = index.matrix() * prompts.transpose();
  std::vector<int> out(index.size());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    scores.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::string_view to_string(Provenance p) {
  return p == Provenance::visual_similarity ? "visual_similarity" : "model_retrieval";
}

json GalleryCandidate::to_json() const {
  json tags = json::array();
  for (auto p : provenance) tags.push_back(std::string(to_string(p)));
  return {{"image_id", image_id}, {"similarity", similarity}, {"provenance", tags},
          {"known_ground_truth", known_ground_truth}};
}

Gallery build_target_gallery(const std::string& reference_id, const RetrievalIndex& index, std::size_t size,
                             double dedup_threshold) {
  const Vector anchor = index.row(reference_id);
  Gallery gallery;
  for (auto& hit : rank_all(index, anchor)) {
    if (gallery.candidates.size() == size) break;
    if (hit.id == reference_id || hit.score > dedup_threshold) continue;
    gallery.candidates.push_back({std::move(hit.id), hit.score, {Provenance::visual_similarity}, false});
  }
  if (gallery.candidates.size() < size)
    gallery.notice = "only " + std::to_string(gallery.candidates.size()) + " of " + std::to_string(size) +
                     " requested candidates available";
  return gallery;
}

std::string annotation_prompt(std::string_view label, std::string_view shared_concept, std::string_view caption) {
  if (blank(shared_concept)) throw InputError("annotation prompt requires a shared concept");
  if (blank(caption)) throw InputError("relative caption must be nonempty");
  return "a photo of " + std::string(shared_concept) + " " + std::string(label) + " that " + std::string(caption);
}

Gallery build_multigt_gallery(const MultiGtQuery& draft, const RetrievalIndex& index, const Inverter& inverter,
                              const Backbone& backbone, std::size_t model_k, std::size_t visual_k) {
  const auto token = inverter(draft.reference_id);
  const auto query = backbone.encode_text(annotation_prompt(token.label, draft.shared_concept, draft.relative_caption),
                                          inject(token));
  Gallery gallery;
  std::unordered_map<std::string, std::size_t> slot;
  const auto add = [&](const std::vector<SearchHit>& hits, std::size_t limit, Provenance tag) {
    std::size_t taken = 0;
    for (const auto& hit : hits) {
      if (taken == limit) break;
      if (hit.id == draft.reference_id) continue;
      ++taken;
      if (auto it = slot.find(hit.id); it != slot.end()) {
        gallery.candidates[it->second].provenance.push_back(tag);
        continue;
      }
      slot.emplace(hit.id, gallery.candidates.size());
      gallery.candidates.push_back({hit.id, hit.score, {tag}, hit.id == draft.target_id});
    }
  };
  add(rank_all(index, query.values), model_k, Provenance::model_retrieval);
  add(rank_all(index, index.row(draft.target_id)), visual_k, Provenance::visual_similarity);
  return gallery;
}

std::set<SemanticAspect> majority_aspects(const std::map<std::string, std::set<SemanticAspect>>& ballots) {
  if (ballots.empty()) throw InputError("no aspect votes recorded");
  const std::size_t needed = (ballots.size() + 1) / 2;
  std::map<SemanticAspect, std::size_t> counts;
  for (const auto& [annotator, aspects] : ballots)
    for (auto a : aspects) ++counts[a];
  std::set<SemanticAspect> out;
  for (const auto& [a, n] : counts)
    if (n >= needed) out.insert(a);
  return out;
}

std::optional<PoolEntry> supercategory_balance(const std::vector<PoolEntry>& pool,
                                               const std::array<std::size_t, 12>& completed,
                                               const std::function<bool(const std::string&)>& available) {
  std::array<int, 12> order{};
  for (int i = 0; i < 12; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return completed[static_cast<std::size_t>(a)] < completed[static_cast<std::size_t>(b)];
  });
  for (int category : order)
    for (const auto& entry : pool)
      if (entry.supercategory == category && available(entry.image_id)) return entry;
  return std::nullopt;
}

std::string_view to_string(ItemPhase p) {
  switch (p) {
    case ItemPhase::multi_gt: return "multi_gt";
    case ItemPhase::aspects: return "aspects";
    case ItemPhase::done: return "done";
  }
  return "unknown";
}

json AnnotationItem::to_json() const {
  json ballots_json = json::object();
  for (const auto& [annotator, aspects] : ballots) ballots_json[annotator] = aspects_json(aspects);
  json j = {{"query_id", query_id},
            {"reference_id", reference_id},
            {"target_id", target_id},
            {"shared_concept", shared_concept},
            {"relative_caption", relative_caption},
            {"phase", std::string(to_string(phase))},
            {"ground_truth_ids", ground_truth_ids},
            {"ballots", ballots_json},
            {"version", version}};
  j["semantic_aspects"] = final_aspects ? aspects_json(*final_aspects) : json(nullptr);
  j["supercategory"] = supercategory >= 0 ? json(kSupercategories[static_cast<std::size_t>(supercategory)]) : json(nullptr);
  return j;
}

AnnotationStore::AnnotationStore(std::filesystem::path log_path, std::unordered_set<std::string> known_images,
                                 Clock clock)
    : log_path_(std::move(log_path)), known_images_(std::move(known_images)), clock_(std::move(clock)) {
  if (!clock_) clock_ = utc_now;
  if (log_path_.empty()) return;
  if (std::filesystem::exists(log_path_)) {
    std::ifstream in(log_path_);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (blank(line)) continue;
      json event;
      try {
        event = json::parse(line);
        apply(event);
      } catch (const json::exception& e) {
        throw ParseError(std::string("corrupt annotation log: ") + e.what(), line_no);
      }
      events_.push_back(std::move(event));
    }
  } else if (log_path_.has_parent_path()) {
    std::filesystem::create_directories(log_path_.parent_path());
  }
  log_.open(log_path_, std::ios::app);
  if (!log_) throw IoError("cannot open annotation log " + log_path_.string());
}

void AnnotationStore::append(json event) {
  event["seq"] = events_.size();
  event["ts"] = clock_();
  apply(event);
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("annotation log write failed");
  }
  events_.push_back(std::move(event));
}

void AnnotationStore::apply(const json& e) {
  const auto type = e.at("type").get<std::string>();
  const auto annotator = e.at("annotator").get<std::string>();
  if (type == "skip") {
    consumed_.insert(e.at("reference_id").get<std::string>());
  } else if (type == "triplet") {
    AnnotationItem item;
    item.query_id = std::to_string(order_.size());
    item.reference_id = e.at("reference_id").get<std::string>();
    item.target_id = e.at("target_id").get<std::string>();
    item.shared_concept = e.at("shared_concept").get<std::string>();
    item.relative_caption = e.at("relative_caption").get<std::string>();
    item.supercategory = e.at("supercategory").get<int>();
    item.author = annotator;
    item.ground_truth_ids = {item.target_id};
    item.version = 1;
    consumed_.insert(item.reference_id);
    if (item.supercategory >= 0) ++completed_[static_cast<std::size_t>(item.supercategory)];
    order_.push_back(item.query_id);
    items_.emplace(item.query_id, std::move(item));
  } else if (type == "ground_truths") {
    auto& item = mutable_item(e.at("query_id").get<std::string>());
    item.ground_truth_ids = e.at("ground_truth_ids").get<std::vector<std::string>>();
    item.phase = ItemPhase::aspects;
    ++item.version;
  } else if (type == "aspect_vote") {
    auto& item = mutable_item(e.at("query_id").get<std::string>());
    item.ballots[annotator] = aspects_from_json(e.at("aspects"));
    ++item.version;
  } else if (type == "finalize") {
    auto& item = mutable_item(e.at("query_id").get<std::string>());
    item.final_aspects = aspects_from_json(e.at("aspects"));
    item.phase = ItemPhase::done;
    ++item.version;
  } else {
    throw ParseError("unknown event type '" + type + "'");
  }
}

AnnotationItem& AnnotationStore::mutable_item(const std::string& query_id) {
  auto it = items_.find(query_id);
  if (it == items_.end()) throw LookupError("unknown query '" + query_id + "'");
  return it->second;
}

const AnnotationItem& AnnotationStore::item(const std::string& query_id) const {
  auto it = items_.find(query_id);
  if (it == items_.end()) throw LookupError("unknown query '" + query_id + "'");
  return it->second;
}

void AnnotationStore::check_version(const AnnotationItem& item, std::optional<std::uint64_t> expected) const {
  if (expected && *expected != item.version)
    throw ConflictError("query '" + item.query_id + "' is at version " + std::to_string(item.version) +
                        ", request expected " + std::to_string(*expected));
}

void AnnotationStore::check_known(const std::string& id) const {
  if (!known_images_.empty() && !known_images_.contains(id)) throw InputError("unknown image '" + id + "'");
}

const AnnotationItem& AnnotationStore::record_triplet(const std::string& annotator, const TripletSubmission& t) {
  check_known(t.reference_id);
  check_known(t.target_id);
  if (t.reference_id == t.target_id) throw InputError("target must differ from the reference");
  if (blank(t.shared_concept)) throw InputError("shared concept must be nonempty");
  if (blank(t.relative_caption)) throw InputError("relative caption must be nonempty");
  if (!t.caption_rule_confirmed)
    throw InputError("caption rule not confirmed: the caption must not mention subjects of the shared concept");
  if (t.supercategory < -1 || t.supercategory >= static_cast<int>(kSupercategories.size()))
    throw InputError("supercategory out of range");
  if (consumed_.contains(t.reference_id))
    throw ConflictError("reference '" + t.reference_id + "' was already annotated or skipped");
  append({{"type", "triplet"},
          {"annotator", annotator},
          {"reference_id", t.reference_id},
          {"target_id", t.target_id},
          {"shared_concept", t.shared_concept},
          {"relative_caption", t.relative_caption},
          {"caption_rule_confirmed", true},
          {"supercategory", t.supercategory}});
  return items_.at(order_.back());
}

void AnnotationStore::record_skip(const std::string& annotator, const std::string& reference_id) {
  check_known(reference_id);
  if (consumed_.contains(reference_id))
    throw ConflictError("reference '" + reference_id + "' was already annotated or skipped");
  append({{"type", "skip"}, {"annotator", annotator}, {"reference_id", reference_id}});
}

const AnnotationItem& AnnotationStore::record_ground_truths(const std::string& annotator, const std::string& query_id,
                                                            const std::vector<std::string>& selected,
                                                            std::optional<std::uint64_t> expected_version) {
  const auto& current = item(query_id);
  if (current.phase != ItemPhase::multi_gt)
    throw ConflictError("query '" + query_id + "' is in phase " + std::string(to_string(current.phase)) +
                        ", not multi_gt");
  check_version(current, expected_version);
  std::vector<std::string> ids = {current.target_id};
  for (const auto& id : selected) {
    check_known(id);
    if (id == current.reference_id) throw InputError("the reference image cannot be a ground truth");
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  append({{"type", "ground_truths"}, {"annotator", annotator}, {"query_id", query_id}, {"ground_truth_ids", ids}});
  return items_.at(query_id);
}

const AnnotationItem& AnnotationStore::submit_aspect_votes(const std::string& annotator, const std::string& query_id,
                                                           const std::set<SemanticAspect>& aspects,
                                                           std::optional<std::uint64_t> expected_version) {
  const auto& current = item(query_id);
  if (current.phase != ItemPhase::aspects)
    throw ConflictError("query '" + query_id + "' is in phase " + std::string(to_string(current.phase)) +
                        ", not aspects");
  check_version(current, expected_version);
  append({{"type", "aspect_vote"}, {"annotator", annotator}, {"query_id", query_id}, {"aspects", aspects_json(aspects)}});
  return items_.at(query_id);
}

const AnnotationItem& AnnotationStore::finalize_aspects(const std::string& annotator, const std::string& query_id) {
  const auto& current = item(query_id);
  if (current.phase == ItemPhase::done) return current;
  if (current.phase != ItemPhase::aspects)
    throw ConflictError("query '" + query_id + "' has no ground truths yet");
  const auto final_set = majority_aspects(current.ballots);
  append({{"type", "finalize"}, {"annotator", annotator}, {"query_id", query_id}, {"aspects", aspects_json(final_set)}});
  return items_.at(query_id);
}

Dataset AnnotationStore::export_dataset() const {
  Dataset ds;
  ds.schema = DatasetSchema::multi_gt;
  for (const auto& id : order_) {
    const auto& item = items_.at(id);
    MultiGtQuery q;
    q.query_id = item.query_id;
    q.reference_id = item.reference_id;
    q.relative_caption = item.relative_caption;
    q.shared_concept = item.shared_concept;
    q.target_id = item.target_id;
    q.ground_truth_ids = item.ground_truth_ids;
    if (item.final_aspects) q.semantic_aspects = *item.final_aspects;
    validate(q, "queries[" + id + "]");
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

}  // namespace isearle
