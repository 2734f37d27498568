#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "../support/synthetic.hpp"
#include "isearle/errors.hpp"
#include "isearle/retrieval.hpp"

using namespace isearle;

namespace {

EmbeddingManifest random_manifest(Rng& rng, int n, int d) {
  EmbeddingManifest m;
  m.dim = d;
  for (int i = 0; i < n; ++i) m.append("id" + std::to_string(i), gaussian_vector(rng, d, 1.0));
  return m;
}

}  // namespace

TEST_CASE("build_index") {
  EmbeddingManifest m;
  m.dim = 3;
  m.append("a", Vector::Unit(3, 0));
  CHECK(RetrievalIndex::build(m).size() == 1);

  Vector v(3);
  v << 0.0, 3.0, 0.0;
  m.append("b", v);
  const auto index = RetrievalIndex::build(m);
  CHECK(index.row("b").norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(index.row("zzz"), LookupError);

  m.append("a", Vector::Unit(3, 2));
  CHECK_THROWS_AS(RetrievalIndex::build(m), ValidationError);

  EmbeddingManifest z;
  z.dim = 2;
  z.append("z", Vector::Zero(2));
  CHECK_THROWS_AS(RetrievalIndex::build(z), DegenerateInputError);
}

TEST_CASE("index save/load is bitwise stable") {
  Rng rng(1);
  const auto index = RetrievalIndex::build(random_manifest(rng, 20, 8));
  const auto path = std::filesystem::temp_directory_path() / "isearle_index.bin";
  index.save(path);
  const auto back = RetrievalIndex::load(path);
  CHECK(back.ids() == index.ids());
  CHECK(back.matrix() == index.matrix());
  CHECK(back.digest() == index.digest());
  std::filesystem::remove(path);
}

TEST_CASE("search") {
  Rng rng(2);
  const auto manifest = random_manifest(rng, 50, 6);
  const auto index = RetrievalIndex::build(manifest);

  SUBCASE("stored row retrieves itself") {
    const auto hits = index.search({manifest.rows.row(17).transpose(), false}, 3);
    CHECK(hits[0].id == "id17");
    CHECK(hits[0].score == doctest::Approx(1.0));
  }
  SUBCASE("full depth is a permutation") {
    const auto hits = index.search({gaussian_vector(rng, 6, 1.0), false}, 50);
    std::vector<std::string> ids;
    for (const auto& h : hits) ids.push_back(h.id);
    std::sort(ids.begin(), ids.end());
    auto expected = index.ids();
    std::sort(expected.begin(), expected.end());
    CHECK(ids == expected);
  }
  SUBCASE("exhaustive oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const Vector q = gaussian_vector(rng, 6, 1.0);
      std::vector<std::pair<double, int>> scored;
      for (int i = 0; i < 50; ++i) scored.push_back({-cosine(q, manifest.rows.row(i).transpose()), i});
      std::sort(scored.begin(), scored.end());
      const auto hits = index.search({q, false}, 10);
      for (int i = 0; i < 10; ++i) {
        CHECK(hits[i].id == "id" + std::to_string(scored[i].second));
        CHECK(std::abs(hits[i].score + scored[i].first) < 1e-6);
      }
      CHECK(index.search({5.0 * q, false}, 10)[3].id == hits[3].id);
    }
  }
  SUBCASE("ties keep index order") {
    EmbeddingManifest m;
    m.dim = 2;
    m.append("x", Vector::Unit(2, 0));
    m.append("y", Vector::Unit(2, 0));
    m.append("w", Vector::Unit(2, 1));
    const auto hits = RetrievalIndex::build(m).search({Vector::Unit(2, 0), true}, 2);
    CHECK(hits[0].id == "x");
    CHECK(hits[1].id == "y");
  }
  SUBCASE("bad k") {
    CHECK_THROWS_AS(index.search({Vector::Ones(6), false}, 51), InputError);
  }
}

TEST_CASE("prompt builders") {
  CHECK(cir_prompt("S*", "is red") == "a photo of S* that is red");
  CHECK(domain_prompt("S*", "origami") == "origami of S*");
  const std::vector<std::string> one = {"mouse"}, two = {"mouse", "laptop"}, three = {"mouse", "laptop", "cup"};
  CHECK(object_prompt("S*", one) == "a photo of S*, mouse");
  CHECK(object_prompt("S*", two) == "a photo of S*, mouse and laptop");
  CHECK(object_prompt("S*", three) == "a photo of S*, mouse and laptop, and cup");
  CHECK_THROWS_AS(cir_prompt("S*", "  "), InputError);
  CHECK_THROWS_AS(domain_prompt("S*", ""), InputError);
  CHECK_THROWS_AS(object_prompt("S*", std::vector<std::string>{}), InputError);
}

TEST_CASE("composed queries on the stub backbone") {
  StubBackbone bb;
  Rng rng(5);
  const PseudoWordToken token{gaussian_vector(rng, bb.info().token_dim, 0.5), pseudo_word_label(0)};

  const ComposedQuery single{"ref", "is red", std::nullopt, std::nullopt};
  CHECK(compose_cir_query(single, token, bb).values.isApprox(
      bb.encode_text("a photo of " + token.label + " that is red", inject(token)).as_unit().values));

  const ComposedQuery ab{"ref", "is red", std::string("has long sleeves"), std::nullopt};
  const ComposedQuery ba{"ref", "has long sleeves", std::string("is red"), std::nullopt};
  CHECK(compose_cir_query(ab, token, bb).values == compose_cir_query(ba, token, bb).values);

  CHECK_THROWS_AS(compose_cir_query({"ref", "", std::nullopt, std::nullopt}, token, bb), InputError);
  CHECK((compose_domain_query(token, "toy", bb).values - compose_domain_query(token, "cartoon", bb).values).norm() > 1e-6);
  const std::vector<std::string> objs = {"mouse", "laptop"};
  CHECK(compose_object_query(token, objs, bb).values.size() == bb.info().embed_dim);
}

TEST_CASE("baselines") {
  StubBackbone bb;
  EmbeddingManifest m;
  m.dim = bb.info().embed_dim;
  for (int i = 0; i < 10; ++i) m.append("im" + std::to_string(i), bb.encode_image(testing::synthetic_image(i)).values);
  const auto index = RetrievalIndex::build(m);
  const ComposedQuery q{"im4", "is red", std::nullopt, std::nullopt};
  CHECK(index.search(baseline_query(BaselineMode::image_only, q, index.row("im4"), bb), 1)[0].id == "im4");

  const Vector y = bb.encode_text("is red").values;
  CHECK(baseline_query(BaselineMode::text_only, q, std::nullopt, bb).values.isApprox(normalized(y)));
  const auto both = baseline_query(BaselineMode::image_plus_text, q, 3.0 * y, bb);
  CHECK(both.values.isApprox(normalized(y)));
  CHECK_THROWS_AS(baseline_query(BaselineMode::image_only, q, std::nullopt, bb), InputError);
  CHECK(parse_baseline_mode("image_plus_text") == BaselineMode::image_plus_text);
  CHECK_FALSE(parse_baseline_mode("fusion").has_value());
}
