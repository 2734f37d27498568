#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "../support/synthetic.hpp"
#include "isearle/concepts.hpp"
#include "isearle/errors.hpp"

using namespace isearle;

namespace {

ConceptVocabulary toy_vocab() {
  Matrix e = Matrix::Identity(3, 3);
  return ConceptVocabulary::from_embeddings({"A", "B", "C"}, e);
}

}  // namespace

TEST_CASE("assign_concepts on a toy vocabulary") {
  const auto vocab = toy_vocab();
  CHECK(assign_concepts(EmbeddingVector{Vector::Unit(3, 1), true}, vocab, 1) == std::vector<std::string>{"B"});

  Vector tie(3);
  tie << 1.0, 1.0, 0.0;
  CHECK(assign_concepts(EmbeddingVector{tie, false}, vocab, 1) == std::vector<std::string>{"A"});

  Vector x(3);
  x << 0.2, -0.5, 0.9;
  CHECK(assign_concepts(EmbeddingVector{x, false}, vocab, 3) == std::vector<std::string>{"C", "A", "B"});
  CHECK_THROWS_AS(assign_concepts(EmbeddingVector{x, false}, vocab, 4), InputError);
}

TEST_CASE("assign_concepts matches a brute-force ranking") {
  Rng rng(11);
  Matrix e(40, 16);
  for (Eigen::Index r = 0; r < e.rows(); ++r) e.row(r) = gaussian_vector(rng, 16, 1.0).transpose();
  std::vector<std::string> names;
  for (int i = 0; i < 40; ++i) names.push_back("c" + std::to_string(i));
  const auto vocab = ConceptVocabulary::from_embeddings(names, e);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = gaussian_vector(rng, 16, 1.0);
    std::vector<std::pair<double, int>> scored;
    for (int i = 0; i < 40; ++i) scored.push_back({-cosine(x, e.row(i).transpose()), i});
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> oracle;
    for (int i = 0; i < 7; ++i) oracle.push_back(names[scored[i].second]);
    CHECK(assign_concepts(EmbeddingVector{x, false}, vocab, 7) == oracle);
  }
}

TEST_CASE("vocabulary build normalizes and deduplicates") {
  StubBackbone bb;
  const std::vector<std::string> names = {" Cat", "dog", "cat ", "DOG", "tree"};
  const auto vocab = ConceptVocabulary::build(names, bb);
  CHECK(vocab.entries == std::vector<std::string>{"cat", "dog", "tree"});
  for (Eigen::Index r = 0; r < vocab.text_embeddings.rows(); ++r)
    CHECK(vocab.text_embeddings.row(r).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(vocab.text_embeddings.row(0).transpose().isApprox(bb.encode_text("a photo of cat").as_unit().values));
}

TEST_CASE("sample_regularization_phrase") {
  PhraseBank bank;
  bank.add("cat", {"a photo of cat on a sofa"});
  bank.add("dog", {"a photo of dog in the park"});
  Rng rng(1);
  const std::vector<std::string> single = {"cat"};
  const auto s = sample_regularization_phrase(single, bank, rng);
  CHECK(s.phrase == "a photo of cat on a sofa");
  CHECK(s.concept_name == "cat");

  Rng a(42), b(42);
  const std::vector<std::string> both = {"cat", "dog"};
  for (int i = 0; i < 5; ++i) CHECK(sample_regularization_phrase(both, bank, a).phrase ==
                                    sample_regularization_phrase(both, bank, b).phrase);

  const int n = 10000;
  int cats = 0;
  for (int i = 0; i < n; ++i) cats += sample_regularization_phrase(both, bank, rng).concept_name == "cat";
  const double sigma = std::sqrt(n * 0.25);
  CHECK(std::abs(cats - n / 2.0) < 3 * sigma);

  const std::vector<std::string> unknown = {"horse"};
  CHECK_THROWS_AS(sample_regularization_phrase(unknown, bank, rng), LookupError);
}

TEST_CASE("substitute_pseudo_word") {
  CHECK(substitute_pseudo_word("a photo of cat that is eating", "cat", "S*") == "a photo of S* that is eating");
  CHECK(substitute_pseudo_word("a photo of cat", "cat", "S*") == "a photo of S*");
  CHECK(substitute_pseudo_word("a photo of cat next to a cat", "cat", "S*") == "a photo of S* next to a cat");
  CHECK(substitute_pseudo_word("two cats and a cat", "cat", "S*") == "two cats and a S*");
  CHECK_THROWS_AS(substitute_pseudo_word("a photo of a dog", "cat", "S*"), InputError);
}

TEST_CASE("phrase bank parsing") {
  SUBCASE("two concepts") {
    std::istringstream in(R"({"concept": "cat", "phrases": ["a photo of cat asleep", "a photo of cat"]}
{"concept": "dog", "phrases": ["a photo of dog running", "a photo of dog, wet"]}
)");
    const auto bank = PhraseBank::parse(in);
    CHECK(bank.size() == 2);
    CHECK(bank.phrases("dog").size() == 2);
  }
  SUBCASE("phrase without the prefix names its line") {
    std::istringstream in(R"({"concept": "cat", "phrases": ["a photo of cat asleep"]}
{"concept": "dog", "phrases": ["the dog runs"]}
)");
    try {
      PhraseBank::parse(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("prefix must end at a word boundary") {
    PhraseBank bank;
    CHECK_THROWS(bank.add("cat", {"a photo of caterpillars"}));
  }
  SUBCASE("count mismatch") {
    std::istringstream in(R"({"concept": "cat", "phrases": ["a photo of cat asleep"]})");
    CHECK_THROWS_AS(PhraseBank::parse(in, 256), ValidationError);
  }
  SUBCASE("round trip") {
    const auto bank = testing::fixture_phrase_bank();
    std::stringstream buf;
    bank.write(buf);
    CHECK(PhraseBank::parse(buf, 8) == bank);
  }
}

TEST_CASE("fixture phrase bank file matches the in-code bank") {
  CHECK(PhraseBank::load(FIXTURE_DIR "/phrase_bank.jsonl", 8) == testing::fixture_phrase_bank());
  CHECK(read_vocabulary(FIXTURE_DIR "/vocabulary.txt") == testing::fixture_concepts());
}

TEST_CASE("generate_phrase_bank with an injected generator") {
  PhraseGenConfig cfg;
  cfg.phrases_per_concept = 3;
  const PhraseGenerator gen = [](const std::string& prompt, const PhraseGenConfig& c) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < c.phrases_per_concept; ++i) out.push_back(i == 0 ? " on grass" : prompt + " #" + std::to_string(i));
    return out;
  };
  const std::vector<std::string> concepts = {"cat", "dog"};
  const auto bank = generate_phrase_bank(concepts, cfg, gen);
  CHECK(bank.phrases("cat").front() == "a photo of cat on grass");
  CHECK(bank.phrases("dog").size() == 3);
}

TEST_CASE("run_phrase_command shells out") {
  PhraseGenConfig cfg;
  cfg.phrases_per_concept = 2;
  cfg.command = "printf '%s that sleeps\\n%s that runs\\n' {prompt} {prompt}";
  const auto lines = run_phrase_command("a photo of cat", cfg);
  CHECK(lines == std::vector<std::string>{"a photo of cat that sleeps", "a photo of cat that runs"});
}
