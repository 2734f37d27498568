#include "isearle/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "isearle/errors.hpp"

namespace isearle {

namespace {

void check_depth(std::span<const QueryResult> results, std::size_t k) {
  if (k == 0) throw InputError("k must be >= 1");
  for (const auto& r : results)
    if (r.ranked_ids.size() < k)
      throw InputError("query '" + r.query_id + "' ranks " + std::to_string(r.ranked_ids.size()) +
                       " ids, fewer than k = " + std::to_string(k));
}

double average_precision(const QueryResult& r, std::size_t k) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (r.ground_truths.contains(r.ranked_ids[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, r.ground_truths.size()));
}

}  // namespace

void QueryResult::validate() const {
  if (ground_truths.empty()) throw ValidationError("query '" + query_id + "' has no ground truths");
  std::unordered_set<std::string> seen;
  for (const auto& id : ranked_ids)
    if (!seen.insert(id).second) throw ValidationError("query '" + query_id + "' ranks '" + id + "' twice");
}

double recall_at_k(std::span<const QueryResult> results, std::size_t k) {
  check_depth(results, k);
  if (results.empty()) return 0.0;
  std::size_t found = 0;
  for (const auto& r : results)
    if (std::any_of(r.ranked_ids.begin(), r.ranked_ids.begin() + static_cast<std::ptrdiff_t>(k),
                    [&](const std::string& id) { return r.ground_truths.contains(id); }))
      ++found;
  return static_cast<double>(found) / static_cast<double>(results.size());
}

double map_at_k(std::span<const QueryResult> results, std::size_t k) {
  check_depth(results, k);
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.ground_truths.empty()) throw ValidationError("query '" + r.query_id + "' has no ground truths");
    sum += average_precision(r, k);
  }
  return sum / static_cast<double>(results.size());
}

AspectBreakdown map_by_aspect(std::span<const QueryResult> results, std::size_t k) {
  AspectBreakdown out;
  for (auto aspect : kAllAspects) {
    std::vector<QueryResult> subset;
    for (const auto& r : results)
      if (r.aspects.contains(aspect)) subset.push_back(r);
    if (subset.empty()) {
      out.omitted.push_back(aspect);
      continue;
    }
    out.values[aspect] = map_at_k(subset, k);
    out.query_counts[aspect] = subset.size();
  }
  return out;
}

double average_recall(std::span<const double> per_category) {
  if (per_category.empty()) throw InputError("no categories to average");
  double s = 0.0;
  for (double v : per_category) s += v;
  return s / static_cast<double>(per_category.size());
}

RedundancyCurves modality_redundancy(std::span<const RedundancyQuery> queries, const RetrievalIndex& index,
                                     const Backbone& backbone, std::span<const std::size_t> ks) {
  RedundancyCurves curves;
  curves.ks.assign(ks.begin(), ks.end());
  if (ks.empty()) return curves;
  const std::size_t depth = *std::max_element(ks.begin(), ks.end());
  std::vector<QueryResult> t2i, i2i;
  for (const auto& q : queries) {
    ComposedQuery cq{q.reference_id, q.caption, std::nullopt, std::nullopt};
    const auto ranked = [&](const EmbeddingVector& v) {
      std::vector<std::string> ids;
      for (auto& hit : index.search(v, depth)) ids.push_back(std::move(hit.id));
      return ids;
    };
    t2i.push_back({q.reference_id, ranked(baseline_query(BaselineMode::text_only, cq, std::nullopt, backbone)),
                   {q.target_id}, {}});
    i2i.push_back({q.reference_id,
                   ranked(baseline_query(BaselineMode::image_only, cq, index.row(q.reference_id), backbone)),
                   {q.target_id}, {}});
  }
  for (auto k : ks) {
    curves.text_to_image.push_back(recall_at_k(t2i, k));
    curves.image_to_image.push_back(recall_at_k(i2i, k));
  }
  return curves;
}

MissingGtEstimate estimate_missing_gts(std::size_t found_via_model, double model_recall, std::size_t total_annotated) {
  if (!(model_recall > 0.0) || model_recall > 1.0) throw InputError("model recall must be in (0, 1]");
  MissingGtEstimate e;
  e.estimated_total = static_cast<double>(found_via_model) / model_recall;
  if (e.estimated_total == 0.0) throw DegenerateInputError("estimated total is zero; annotated fraction undefined");
  e.annotated_fraction = static_cast<double>(total_annotated) / e.estimated_total;
  return e;
}

std::vector<QueryResult> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results " + path.string());
  std::vector<QueryResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QueryResult r;
      r.query_id = j.at("query_id").is_string() ? j.at("query_id").get<std::string>() : j.at("query_id").dump();
      r.ranked_ids = j.at("ranked_ids").get<std::vector<std::string>>();
      for (const auto& g : j.at("gts")) r.ground_truths.insert(g.get<std::string>());
      if (j.contains("aspects"))
        for (const auto& a : j.at("aspects")) {
          const auto aspect = parse_aspect(a.get<std::string>());
          if (!aspect) throw ParseError("unknown aspect '" + a.get<std::string>() + "'", line_no);
          r.aspects.insert(*aspect);
        }
      r.validate();
      results.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed result record: ") + e.what(), line_no);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return results;
}

void write_results(const std::filesystem::path& path, std::span<const QueryResult> results) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write results " + path.string());
  for (const auto& r : results) {
    nlohmann::json aspects = nlohmann::json::array();
    for (auto a : r.aspects) aspects.push_back(std::string(to_string(a)));
    out << nlohmann::json{{"query_id", r.query_id},
                          {"ranked_ids", r.ranked_ids},
                          {"gts", std::vector<std::string>(r.ground_truths.begin(), r.ground_truths.end())},
                          {"aspects", aspects}}
               .dump()
        << '\n';
  }
}

MetricReport evaluate(std::span<const QueryResult> results, const std::string& metric, std::span<const std::size_t> ks) {
  if (metric != "map" && metric != "recall") throw InputError("metric must be 'map' or 'recall'");
  MetricReport report;
  report.metric = metric;
  report.ks.assign(ks.begin(), ks.end());
  for (auto k : ks) {
    if (metric == "map") {
      report.values.push_back(map_at_k(results, k));
      report.by_aspect[k] = map_by_aspect(results, k);
    } else {
      report.values.push_back(recall_at_k(results, k));
    }
  }
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["metric"] = metric;
  j["values"] = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) j["values"][std::to_string(ks[i])] = values[i];
  if (!by_aspect.empty()) {
    j["by_aspect"] = nlohmann::json::object();
    for (const auto& [k, breakdown] : by_aspect) {
      auto& entry = j["by_aspect"][std::to_string(k)];
      entry = nlohmann::json::object();
      for (const auto& [aspect, v] : breakdown.values) entry[std::string(to_string(aspect))] = v;
    }
  }
  return j;
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  const std::string name = metric == "map" ? "mAP" : "Recall";
  out << std::left << std::setw(24) << "metric" << "value (%)\n";
  for (std::size_t i = 0; i < ks.size(); ++i)
    out << std::setw(24) << (name + "@" + std::to_string(ks[i])) << std::fixed << std::setprecision(2)
        << 100.0 * values[i] << '\n';
  for (const auto& [k, breakdown] : by_aspect) {
    for (const auto& [aspect, v] : breakdown.values)
      out << std::setw(24) << (std::string(to_string(aspect)) + "@" + std::to_string(k)) << std::fixed
          << std::setprecision(2) << 100.0 * v << '\n';
  }
  return out.str();
}

}  // namespace isearle
