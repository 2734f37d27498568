#include <doctest.h>

#include <filesystem>

#include "isearle/datasets.hpp"
#include "isearle/errors.hpp"

using namespace isearle;
using nlohmann::json;

namespace {

json two_queries() {
  return json::parse(R"({"queries": [
    {"query_id": "0", "reference_id": "r0", "relative_caption": "has two dogs", "shared_concept": "a dog",
     "target_id": "t0", "ground_truth_ids": ["t0", "g1"], "semantic_aspects": ["cardinality"]},
    {"query_id": 1, "reference_id": 17, "relative_caption": "is at night", "shared_concept": "a street",
     "target_id": 18, "ground_truth_ids": [18], "semantic_aspects": []}
  ]})");
}

}  // namespace

TEST_CASE("load a minimal multi-GT file") {
  const auto ds = parse_dataset(two_queries(), DatasetSchema::multi_gt);
  CHECK(ds.size() == 2);
  CHECK(ds.queries[1].reference_id == "17");
  CHECK(ds.queries[0].semantic_aspects.contains(SemanticAspect::cardinality));
}

TEST_CASE("invariant violations are rejected with a locus") {
  auto doc = two_queries();
  SUBCASE("target missing from ground truths") {
    doc["queries"][1]["ground_truth_ids"] = json::array({"19"});
    CHECK_THROWS_WITH_AS(parse_dataset(doc, DatasetSchema::multi_gt), doctest::Contains("queries[1]"), ValidationError);
  }
  SUBCASE("reference equals target") {
    doc["queries"][0]["reference_id"] = "t0";
    CHECK_THROWS_AS(parse_dataset(doc, DatasetSchema::multi_gt), ValidationError);
  }
  SUBCASE("unknown aspect") {
    doc["queries"][0]["semantic_aspects"] = json::array({"color"});
    CHECK_THROWS_AS(parse_dataset(doc, DatasetSchema::multi_gt), ValidationError);
  }
  SUBCASE("duplicate query id") {
    doc["queries"][1]["query_id"] = "0";
    CHECK_THROWS_AS(parse_dataset(doc, DatasetSchema::multi_gt), ValidationError);
  }
  SUBCASE("dangling image id") {
    const std::unordered_set<std::string> known = {"r0", "t0", "g1", "17"};
    CHECK_THROWS_WITH_AS(parse_dataset(doc, DatasetSchema::multi_gt, &known), doctest::Contains("dangling"),
                         ValidationError);
  }
}

TEST_CASE("save/load round trip") {
  const auto ds = parse_dataset(two_queries(), DatasetSchema::multi_gt);
  const auto path = std::filesystem::temp_directory_path() / "isearle_ds.json";
  save_dataset(path, ds);
  CHECK(load_dataset(path, DatasetSchema::multi_gt) == ds);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset("/nonexistent.json", DatasetSchema::multi_gt), IoError);
}

TEST_CASE("native adapters") {
  const auto cirr = from_cirr(json::parse(
      R"([{"pairid": 12, "reference": "dev-1", "target_hard": "dev-2", "caption": "make it blue"}])"));
  CHECK(cirr.triplets.at(0).query_id == "12");
  CHECK(cirr.triplets[0].relative_captions == std::vector<std::string>{"make it blue"});
  const auto fiq = from_fashioniq(json::parse(
      R"([{"candidate": "B001", "target": "B002", "captions": ["is red", "has short sleeves"]}])"));
  CHECK(fiq.triplets.at(0).relative_captions.size() == 2);
  CHECK_THROWS_AS(from_fashioniq(json::parse(R"([{"candidate": "B1", "target": "B1", "captions": ["x"]}])")),
                  ValidationError);
}

TEST_CASE("dataset_stats") {
  SUBCASE("one query one ground truth") {
    const auto ds = parse_dataset(json::parse(R"({"queries": [{"query_id": "0", "reference_id": "a",
      "relative_caption": "is red", "shared_concept": "x", "target_id": "b", "ground_truth_ids": ["b"],
      "semantic_aspects": ["addition"]}]})"),
                                  DatasetSchema::multi_gt);
    const auto s = dataset_stats(ds);
    CHECK(s.gt_mean == 1.0);
    CHECK(s.aspect_coverage.at(SemanticAspect::addition) == 1.0);
    CHECK(s.aspect_coverage.at(SemanticAspect::negation) == 0.0);
  }
  SUBCASE("fixture mirroring the published aggregates") {
    const auto s = dataset_stats(load_dataset(FIXTURE_DIR "/circo_stats.json", DatasetSchema::multi_gt));
    CHECK(s.query_count == 1020);
    CHECK(s.gt_total == 4624);
    CHECK(std::round(s.gt_mean * 100) / 100 == doctest::Approx(4.53));
    CHECK(s.gt_max == 21);
    CHECK(s.gt_mode == 2);
    CHECK(s.caption_mean_words == doctest::Approx(10.4).epsilon(1e-3));
    CHECK(s.aspect_coverage.at(SemanticAspect::statement_conjunction) == doctest::Approx(0.762).epsilon(1e-3));
  }
  SUBCASE("single-GT view") {
    const auto view = single_gt_view(parse_dataset(two_queries(), DatasetSchema::multi_gt));
    CHECK(view.at(0).target_id == "t0");
  }
}
