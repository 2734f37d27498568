#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "../support/oracles.hpp"
#include "../support/synthetic.hpp"
#include "isearle/errors.hpp"
#include "isearle/eval.hpp"
#include "isearle/retrieval.hpp"

using namespace isearle;

using testing::map_oracle;

namespace {

// Ranked list of `depth` ids with ground truths planted at the 1-based ranks given.
QueryResult planted(const std::string& id, std::initializer_list<int> ranks, std::size_t g, int depth = 20,
                    std::set<SemanticAspect> aspects = {}) {
  QueryResult r;
  r.query_id = id;
  for (int i = 1; i <= depth; ++i) r.ranked_ids.push_back(id + "_n" + std::to_string(i));
  std::size_t planted_count = 0;
  for (int rank : ranks) {
    r.ranked_ids[rank - 1] = id + "_gt" + std::to_string(planted_count);
    r.ground_truths.insert(id + "_gt" + std::to_string(planted_count++));
  }
  while (planted_count < g) r.ground_truths.insert(id + "_gt" + std::to_string(planted_count++));
  r.aspects = std::move(aspects);
  return r;
}

}  // namespace

TEST_CASE("recall_at_k") {
  const std::vector<QueryResult> one = {planted("q", {1}, 1)};
  CHECK(recall_at_k(one, 1) == 1.0);
  const std::vector<QueryResult> late = {planted("q", {6}, 1)};
  CHECK(recall_at_k(late, 5) == 0.0);
  const std::vector<QueryResult> three = {planted("a", {1}, 1), planted("b", {7}, 1), planted("c", {3}, 1)};
  CHECK(recall_at_k(three, 5) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(recall_at_k(three, 21), InputError);
  CHECK_THROWS_AS(recall_at_k(three, 0), InputError);
}

TEST_CASE("map_at_k") {
  const std::vector<QueryResult> a = {planted("q", {1}, 1)};
  CHECK(map_at_k(a, 5) == 1.0);
  const std::vector<QueryResult> b = {planted("q", {1, 3}, 2)};
  CHECK(map_at_k(b, 5) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  const std::vector<QueryResult> c = {planted("q", {9}, 3)};
  CHECK(map_at_k(c, 5) == 0.0);
  const std::vector<QueryResult> d = {planted("q", {2, 4}, 8)};
  CHECK(map_at_k(d, 5) == doctest::Approx((0.5 + 0.5) / 5.0));
}

TEST_CASE("map_at_k matches the literal definition on random instances") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<QueryResult> results;
    const std::size_t n = 1 + uniform_index(rng, 5);
    for (std::size_t q = 0; q < n; ++q) {
      QueryResult r;
      r.query_id = std::to_string(q);
      for (int i = 0; i < 30; ++i) r.ranked_ids.push_back("i" + std::to_string(i));
      std::shuffle(r.ranked_ids.begin(), r.ranked_ids.end(), rng);
      const std::size_t g = 1 + uniform_index(rng, 12);
      for (std::size_t i = 0; i < g; ++i) r.ground_truths.insert("i" + std::to_string(uniform_index(rng, 40)));
      results.push_back(std::move(r));
    }
    for (std::size_t k : {1, 5, 10, 25}) CHECK(std::abs(map_at_k(results, k) - map_oracle(results, k)) < 1e-9);
  }
}

TEST_CASE("map_by_aspect") {
  using A = SemanticAspect;
  SUBCASE("single shared aspect equals the global value") {
    const std::vector<QueryResult> rs = {planted("a", {1, 4}, 3, 20, {A::addition}),
                                         planted("b", {2}, 1, 20, {A::addition})};
    const auto by = map_by_aspect(rs, 10);
    CHECK(by.values.at(A::addition) == doctest::Approx(map_at_k(rs, 10)));
    CHECK(by.values.size() == 1);
    CHECK(by.omitted.size() == 8);
    CHECK_FALSE(by.values.contains(A::viewpoint));
  }
  SUBCASE("disjoint partition reconstructs the global value") {
    const std::vector<QueryResult> rs = {planted("a", {1, 4}, 3, 20, {A::addition}),
                                         planted("b", {2}, 1, 20, {A::negation}),
                                         planted("c", {5, 6, 7}, 4, 20, {A::negation})};
    const auto by = map_by_aspect(rs, 10);
    const double combined = (by.values.at(A::addition) * static_cast<double>(by.query_counts.at(A::addition)) +
                             by.values.at(A::negation) * static_cast<double>(by.query_counts.at(A::negation))) /
                            3.0;
    CHECK(combined == doctest::Approx(map_at_k(rs, 10)).epsilon(1e-12));
  }
}

TEST_CASE("average_recall") {
  const std::vector<double> v = {0.2, 0.4, 0.9};
  CHECK(average_recall(v) == doctest::Approx(0.5));
  CHECK_THROWS_AS(average_recall(std::vector<double>{}), InputError);
}

TEST_CASE("estimate_missing_gts") {
  const auto e = estimate_missing_gts(4097, 0.8215, 4624);
  CHECK(std::abs(e.estimated_total - 4987.0) <= 1.0);
  CHECK(std::abs(e.annotated_fraction - 0.927) <= 0.001);
  CHECK(estimate_missing_gts(50, 1.0, 60).estimated_total == 50.0);
  CHECK_THROWS_AS(estimate_missing_gts(0, 0.5, 10), DegenerateInputError);
  CHECK_THROWS_AS(estimate_missing_gts(5, 0.0, 10), InputError);
}

TEST_CASE("modality_redundancy") {
  StubBackbone bb;
  EmbeddingManifest m;
  m.dim = bb.info().embed_dim;
  const int n = 60;
  for (int i = 0; i < n; ++i) m.append("im" + std::to_string(i), bb.encode_image(testing::synthetic_image(100 + i)).values);
  const auto index = RetrievalIndex::build(m);
  const std::vector<std::size_t> ks = {1, 5, 10};

  SUBCASE("reference equal to target") {
    std::vector<RedundancyQuery> qs;
    for (int i = 0; i < 10; ++i) qs.push_back({"im" + std::to_string(i), "is red", "im" + std::to_string(i)});
    const auto curves = modality_redundancy(qs, index, bb, ks);
    CHECK(curves.image_to_image.size() == 3);
    CHECK(curves.text_to_image.size() == 3);
    CHECK(curves.image_to_image[0] == 1.0);
  }
  SUBCASE("unrelated captions are near chance") {
    const std::vector<std::string> words = {"red", "tall", "wooden", "sunny", "two", "small", "wet", "old"};
    Rng rng(3);
    std::vector<RedundancyQuery> qs;
    for (int i = 0; i < 600; ++i)
      qs.push_back({"im0", "is " + words[uniform_index(rng, words.size())] + " and " + words[uniform_index(rng, words.size())],
                    "im" + std::to_string(uniform_index(rng, n))});
    const auto curves = modality_redundancy(qs, index, bb, ks);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double chance = static_cast<double>(ks[i]) / n;
      const double sd = std::sqrt(chance * (1 - chance) / 600.0);
      CHECK(std::abs(curves.text_to_image[i] - chance) < 4 * sd);
    }
  }
}

TEST_CASE("results file round trip and report") {
  const std::vector<QueryResult> rs = {planted("a", {1, 3}, 2, 12, {SemanticAspect::viewpoint}), planted("b", {2}, 1, 12)};
  const auto path = std::filesystem::temp_directory_path() / "isearle_results.jsonl";
  write_results(path, rs);
  const auto back = read_results(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].ranked_ids == rs[0].ranked_ids);
  CHECK(back[0].ground_truths == rs[0].ground_truths);
  CHECK(back[0].aspects == rs[0].aspects);
  std::filesystem::remove(path);

  const std::vector<std::size_t> ks = {5, 10};
  const auto report = evaluate(rs, "map", ks);
  CHECK(report.values[0] == doctest::Approx(map_oracle(rs, 5)));
  CHECK(report.to_json()["values"]["10"].get<double>() == doctest::Approx(map_oracle(rs, 10)));
  CHECK(report.to_table().find("mAP@5") != std::string::npos);
  CHECK_THROWS_AS(evaluate(rs, "ndcg", ks), InputError);
}
