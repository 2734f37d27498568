#include "isearle/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "isearle/errors.hpp"

namespace isearle {

namespace {

using nlohmann::json;

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

std::string id_string(const json& j, const std::string& locus, const char* field) {
  if (!j.contains(field)) throw ValidationError(locus + ": missing '" + field + "'");
  const auto& v = j.at(field);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError(locus + ": '" + field + "' must be a string or integer");
}

std::string text_field(const json& j, const std::string& locus, const char* field) {
  if (!j.contains(field) || !j.at(field).is_string())
    throw ValidationError(locus + ": '" + field + "' must be a string");
  return j.at(field).get<std::string>();
}

void check_known(const std::unordered_set<std::string>* known, const std::string& id, const std::string& locus) {
  if (known && !known->contains(id)) throw ValidationError(locus + ": dangling image id '" + id + "'");
}

std::size_t word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

}  // namespace

std::optional<DatasetSchema> parse_schema(std::string_view name) {
  if (name == "triplet") return DatasetSchema::triplet;
  if (name == "multi_gt") return DatasetSchema::multi_gt;
  return std::nullopt;
}

void validate(const MultiGtQuery& q, const std::string& locus) {
  if (blank(q.relative_caption)) throw ValidationError(locus + ": empty relative caption");
  if (q.reference_id == q.target_id) throw ValidationError(locus + ": reference equals target");
  if (q.ground_truth_ids.empty()) throw ValidationError(locus + ": no ground truths");
  std::set<std::string> seen;
  for (const auto& id : q.ground_truth_ids)
    if (!seen.insert(id).second) throw ValidationError(locus + ": duplicate ground truth '" + id + "'");
  if (!seen.contains(q.target_id)) throw ValidationError(locus + ": target not in ground_truth_ids");
}

void validate(const CirTriplet& t, const std::string& locus) {
  if (t.relative_captions.empty() || t.relative_captions.size() > 2)
    throw ValidationError(locus + ": expected one or two relative captions");
  for (const auto& c : t.relative_captions)
    if (blank(c)) throw ValidationError(locus + ": empty relative caption");
  if (t.reference_id == t.target_id) throw ValidationError(locus + ": reference equals target");
}

Dataset parse_dataset(const json& document, DatasetSchema schema, const std::unordered_set<std::string>* known_images) {
  if (!document.is_object() || !document.contains("queries") || !document["queries"].is_array())
    throw ValidationError("dataset must be an object with a 'queries' array");
  Dataset ds;
  ds.schema = schema;
  std::set<std::string> query_ids;
  const auto& records = document["queries"];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string locus = "queries[" + std::to_string(i) + "]";
    if (!r.is_object()) throw ValidationError(locus + ": record must be an object");
    if (schema == DatasetSchema::multi_gt) {
      MultiGtQuery q;
      q.query_id = id_string(r, locus, "query_id");
      q.reference_id = id_string(r, locus, "reference_id");
      q.relative_caption = text_field(r, locus, "relative_caption");
      q.shared_concept = r.contains("shared_concept") ? text_field(r, locus, "shared_concept") : "";
      q.target_id = id_string(r, locus, "target_id");
      if (!r.contains("ground_truth_ids") || !r["ground_truth_ids"].is_array())
        throw ValidationError(locus + ": 'ground_truth_ids' must be an array");
      for (const auto& g : r["ground_truth_ids"])
        q.ground_truth_ids.push_back(g.is_string() ? g.get<std::string>() : g.dump());
      if (r.contains("semantic_aspects")) {
        for (const auto& a : r["semantic_aspects"]) {
          const auto aspect = a.is_string() ? parse_aspect(a.get<std::string>()) : std::nullopt;
          if (!aspect) throw ValidationError(locus + ": unknown semantic aspect " + a.dump());
          q.semantic_aspects.insert(*aspect);
        }
      }
      validate(q, locus);
      check_known(known_images, q.reference_id, locus);
      for (const auto& g : q.ground_truth_ids) check_known(known_images, g, locus);
      if (!query_ids.insert(q.query_id).second) throw ValidationError(locus + ": duplicate query_id");
      ds.queries.push_back(std::move(q));
    } else {
      CirTriplet t;
      t.query_id = r.contains("query_id") ? id_string(r, locus, "query_id") : std::to_string(i);
      t.reference_id = id_string(r, locus, "reference_id");
      t.target_id = id_string(r, locus, "target_id");
      if (r.contains("relative_captions")) {
        if (!r["relative_captions"].is_array()) throw ValidationError(locus + ": 'relative_captions' must be an array");
        for (const auto& c : r["relative_captions"]) {
          if (!c.is_string()) throw ValidationError(locus + ": captions must be strings");
          t.relative_captions.push_back(c.get<std::string>());
        }
      } else {
        t.relative_captions.push_back(text_field(r, locus, "relative_caption"));
      }
      if (r.contains("shared_concept")) t.shared_concept = text_field(r, locus, "shared_concept");
      validate(t, locus);
      check_known(known_images, t.reference_id, locus);
      check_known(known_images, t.target_id, locus);
      if (!query_ids.insert(t.query_id).second) throw ValidationError(locus + ": duplicate query_id");
      ds.triplets.push_back(std::move(t));
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetSchema schema,
                     const std::unordered_set<std::string>* known_images) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  json document;
  try {
    document = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("dataset is not valid JSON: ") + e.what());
  }
  return parse_dataset(document, schema, known_images);
}

json to_json(const Dataset& dataset) {
  json queries = json::array();
  if (dataset.schema == DatasetSchema::multi_gt) {
    for (const auto& q : dataset.queries) {
      json aspects = json::array();
      for (auto a : q.semantic_aspects) aspects.push_back(std::string(to_string(a)));
      queries.push_back({{"query_id", q.query_id},
                         {"reference_id", q.reference_id},
                         {"relative_caption", q.relative_caption},
                         {"shared_concept", q.shared_concept},
                         {"target_id", q.target_id},
                         {"ground_truth_ids", q.ground_truth_ids},
                         {"semantic_aspects", aspects}});
    }
  } else {
    for (const auto& t : dataset.triplets) {
      json record = {{"query_id", t.query_id},
                     {"reference_id", t.reference_id},
                     {"relative_captions", t.relative_captions},
                     {"target_id", t.target_id}};
      if (t.shared_concept) record["shared_concept"] = *t.shared_concept;
      queries.push_back(std::move(record));
    }
  }
  return {{"queries", queries}};
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out << to_json(dataset).dump(2) << '\n';
}

Dataset from_cirr(const json& native) {
  if (!native.is_array()) throw ValidationError("CIRR annotations must be an array");
  json queries = json::array();
  for (const auto& r : native) {
    json q = {{"reference_id", r.at("reference")}, {"target_id", r.at("target_hard")},
              {"relative_caption", r.at("caption")}};
    q["query_id"] = r.contains("pairid") ? r.at("pairid") : json(std::to_string(queries.size()));
    queries.push_back(std::move(q));
  }
  return parse_dataset({{"queries", queries}}, DatasetSchema::triplet);
}

Dataset from_fashioniq(const json& native) {
  if (!native.is_array()) throw ValidationError("FashionIQ annotations must be an array");
  json queries = json::array();
  for (const auto& r : native) {
    queries.push_back({{"query_id", std::to_string(queries.size())},
                       {"reference_id", r.at("candidate")},
                       {"target_id", r.at("target")},
                       {"relative_captions", r.at("captions")}});
  }
  return parse_dataset({{"queries", queries}}, DatasetSchema::triplet);
}

DatasetStats dataset_stats(const Dataset& dataset) {
  DatasetStats stats;
  std::map<std::size_t, std::size_t> histogram;
  std::size_t caption_words = 0, caption_count = 0;
  std::map<SemanticAspect, std::size_t> aspect_counts;
  const auto add_query = [&](std::size_t gts) {
    ++stats.query_count;
    stats.gt_total += gts;
    stats.gt_max = std::max(stats.gt_max, gts);
    ++histogram[gts];
  };
  if (dataset.schema == DatasetSchema::multi_gt) {
    for (const auto& q : dataset.queries) {
      add_query(q.ground_truth_ids.size());
      caption_words += word_count(q.relative_caption);
      ++caption_count;
      for (auto a : q.semantic_aspects) ++aspect_counts[a];
    }
  } else {
    for (const auto& t : dataset.triplets) {
      add_query(1);
      for (const auto& c : t.relative_captions) {
        caption_words += word_count(c);
        ++caption_count;
      }
    }
  }
  if (stats.query_count == 0) return stats;
  stats.gt_mean = static_cast<double>(stats.gt_total) / static_cast<double>(stats.query_count);
  std::size_t best = 0;
  for (const auto& [count, freq] : histogram)
    if (freq > best) {
      best = freq;
      stats.gt_mode = count;
    }
  stats.caption_mean_words = caption_count ? static_cast<double>(caption_words) / static_cast<double>(caption_count) : 0.0;
  for (auto a : kAllAspects)
    stats.aspect_coverage[a] = static_cast<double>(aspect_counts[a]) / static_cast<double>(stats.query_count);
  return stats;
}

json DatasetStats::to_json() const {
  json coverage = json::object();
  for (const auto& [a, v] : aspect_coverage) coverage[std::string(to_string(a))] = v;
  return {{"query_count", query_count}, {"gt_total", gt_total},   {"gt_mean", gt_mean},
          {"gt_max", gt_max},           {"gt_mode", gt_mode},     {"caption_mean_words", caption_mean_words},
          {"aspect_coverage", coverage}};
}

std::vector<RedundancyQuery> single_gt_view(const Dataset& dataset) {
  std::vector<RedundancyQuery> out;
  if (dataset.schema == DatasetSchema::multi_gt) {
    for (const auto& q : dataset.queries) out.push_back({q.reference_id, q.relative_caption, q.target_id});
  } else {
    for (const auto& t : dataset.triplets) out.push_back({t.reference_id, t.relative_captions.front(), t.target_id});
  }
  return out;
}

}  // namespace isearle
