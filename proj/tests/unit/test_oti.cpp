#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "../support/fd.hpp"
#include "../support/synthetic.hpp"
#include "isearle/errors.hpp"
#include "isearle/oti.hpp"

using namespace isearle;

TEST_CASE("content_loss") {
  Vector x(2), y(2);
  x << 1, 0;
  y << 0, 1;
  const Vector zero = Vector::Zero(2);
  CHECK(content_loss(x, x, zero) == doctest::Approx(0.0));
  CHECK(content_loss(x, -x, zero) == doctest::Approx(2.0));
  CHECK(content_loss(x, y, zero) == doctest::Approx(1.0));
  CHECK(content_loss(x, y, x) == doctest::Approx(1.0 - 1.0 / std::sqrt(2.0)));
}

TEST_CASE("sample_noise") {
  Rng rng(5);
  CHECK(sample_noise(0.0, 8, rng).isZero());
  const Vector n = sample_noise(0.64, 100000, rng);
  const double mean = n.mean();
  const double sd = std::sqrt((n.array() - mean).square().sum() / static_cast<double>(n.size() - 1));
  CHECK(std::abs(sd - 0.64) < 0.01);

  Rng a(1), b(1), c(2);
  const Vector va = sample_noise(0.64, 16, a);
  CHECK(va == sample_noise(0.64, 16, b));
  CHECK(va != sample_noise(0.64, 16, c));
}

TEST_CASE("gpt_loss") {
  Vector x(3), y(3);
  x << 1, 2, 3;
  y << -2, 1, 0;
  CHECK(gpt_loss(x, x) == doctest::Approx(0.0));
  CHECK(gpt_loss(x, y) == doctest::Approx(1.0));

  StubBackbone bb;
  const std::string phrase = "a photo of cat that is eating";
  const PseudoWordToken t{bb.token_embedding("cat"), pseudo_word_label(0)};
  const auto star = bb.encode_text(substitute_pseudo_word(phrase, "cat", t.label), inject(t));
  CHECK(gpt_loss(bb.encode_text(phrase).values, star.values) < 1e-12);
}

TEST_CASE("oti_total_loss") {
  OtiConfig cfg;
  CHECK(oti_total_loss(0.4, 0.2, cfg) == doctest::Approx(0.5));
  CHECK(oti_total_loss(0.0, 0.0, cfg) == 0.0);
  cfg.lambda_gpt = 0.0;
  CHECK(oti_total_loss(0.4, 0.2, cfg) == doctest::Approx(0.4));
}

TEST_CASE("OtiConfig validation") {
  OtiConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.iterations = -1;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.templates.clear();
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.templates = {"no slot here"};
  CHECK_THROWS_AS(cfg.validate(), InputError);
  CHECK(fill_template("a photo of {}", "<|pw0|>") == "a photo of <|pw0|>");
}

TEST_CASE("loss gradients with respect to the injected token") {
  StubBackbone bb;
  Rng rng(8);
  const std::string label = pseudo_word_label(0);
  const Vector token = gaussian_vector(rng, bb.info().token_dim, 0.5);
  const Vector x = bb.encode_image(testing::synthetic_image(3)).values;
  const Vector noise = sample_noise(0.64, bb.info().embed_dim, rng);
  const std::string prompt = "a photo of " + label;
  const auto enc = bb.encode_text_with_grad(prompt, {{label, token}});

  SUBCASE("content") {
    const Vector y = enc.features.values;
    const Vector g = enc.backward(-cosine_grad_b(x, y + noise)).at(label);
    const auto f = [&](const Vector& t) { return content_loss(x, bb.encode_text(prompt, {{label, t}}).values, noise); };
    CHECK(testing::relative_error(g, testing::numeric_gradient(f, token)) < 1e-2);
  }
  SUBCASE("gpt") {
    const Vector target = bb.encode_text("a photo of cat that is eating").values;
    const std::string phrase = "a photo of " + label + " that is eating";
    const auto e2 = bb.encode_text_with_grad(phrase, {{label, token}});
    const Vector g = e2.backward(-cosine_grad_b(target, e2.features.values)).at(label);
    const auto f = [&](const Vector& t) { return gpt_loss(target, bb.encode_text(phrase, {{label, t}}).values); };
    CHECK(testing::relative_error(g, testing::numeric_gradient(f, token)) < 1e-2);
  }
}

TEST_CASE("invert_features") {
  StubBackbone bb;
  const auto vocab = ConceptVocabulary::build(testing::fixture_concepts(), bb);
  const auto bank = testing::fixture_phrase_bank();
  const auto x = bb.encode_image(testing::synthetic_image(9));
  OtiConfig cfg;
  cfg.k_concepts = 5;
  cfg.seed = 77;

  SUBCASE("zero iterations returns the initialization") {
    cfg.iterations = 0;
    const auto a = invert_features(x, bb, vocab, bank, cfg);
    const auto b = invert_features(x, bb, vocab, bank, cfg);
    CHECK(a.loss_trace.empty());
    CHECK(a.token.values == b.token.values);
    Rng rng(cfg.seed);
    CHECK(a.token.values == gaussian_vector(rng, bb.info().token_dim, bb.token_embedding_std()));
  }
  SUBCASE("content loss decreases and the run is reproducible") {
    cfg.iterations = 50;
    const auto digest = bb.parameter_digest();
    const auto a = invert_features(x, bb, vocab, bank, cfg);
    CHECK(a.loss_trace.size() == 50);
    for (const auto& t : a.loss_trace) CHECK(std::isfinite(t.total));
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
      head += a.loss_trace[i].content;
      tail += a.loss_trace[40 + i].content;
    }
    CHECK(tail < head);
    CHECK(a.concepts_used.size() == 5);
    CHECK(bb.parameter_digest() == digest);
    CHECK(invert_features(x, bb, vocab, bank, cfg).token.values == a.token.values);
    cfg.seed = 78;
    CHECK(invert_features(x, bb, vocab, bank, cfg).token.values != a.token.values);
  }
  SUBCASE("without regularization the gpt term is zero") {
    cfg.iterations = 5;
    cfg.lambda_gpt = 0.0;
    for (const auto& t : invert_features(x, bb, vocab, bank, cfg).loss_trace) CHECK(t.total == t.content);
  }
}

TEST_CASE("token store round trip") {
  const auto path = std::filesystem::temp_directory_path() / "isearle_tokens.bin";
  Vector a(3), b(3);
  a << 0.5, -1.25, 2.0;
  b << 0.0, 1.0, -0.75;
  write_token_store(path, 3, {{"img1", a}, {"img2", b}});
  int dim = 0;
  const auto back = read_token_store(path, &dim);
  CHECK(dim == 3);
  REQUIRE(back.size() == 2);
  CHECK(back[1].image_id == "img2");
  CHECK(back[0].token == a);
  std::filesystem::remove(path);
  CHECK(image_seed(0, "a") != image_seed(0, "b"));
}
