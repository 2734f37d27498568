#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <iostream>

#include "../support/fd.hpp"
#include "../support/synthetic.hpp"
#include "isearle/errors.hpp"
#include "isearle/oti.hpp"

using namespace isearle;

namespace {

const Backbone& bridge() {
  static const auto backbone = [] {
    BackboneConfig cfg;
    cfg.model_ref = std::string("external:python3 ") + BRIDGE_SCRIPT + " --random-init --dtype float64";
    return load_backbone(cfg);
  }();
  return *backbone;
}

}  // namespace

TEST_CASE("bridge info and tokenizer") {
  const auto& bb = bridge();
  CHECK(bb.info().embed_dim == 24);
  CHECK(bb.info().token_dim == 32);
  CHECK(bb.info().context_length == 77);
  CHECK(bb.token_embedding_std() > 0.0);
  const auto tokens = bb.tokenize("a photo of <|pw0|>, red");
  CHECK(tokens.front() == "<|startoftext|>");
  CHECK(tokens.back() == "<|endoftext|>");
  CHECK(std::count(tokens.begin(), tokens.end(), "<|pw0|>") == 1);
  CHECK(bb.token_embedding("a").size() == 32);
  CHECK_THROWS_AS(bb.token_embedding("photo"), InputError);
}

TEST_CASE("bridge encodes images and injected prompts") {
  const auto& bb = bridge();
  const auto x = bb.encode_image(testing::synthetic_image(1));
  CHECK(x.size() == 24);
  CHECK(x.values.allFinite());

  Rng rng(3);
  const PseudoWordToken a{gaussian_vector(rng, 32, 0.02), pseudo_word_label(0)};
  const PseudoWordToken b{gaussian_vector(rng, 32, 0.02), pseudo_word_label(0)};
  const auto ya = bb.encode_text("a photo of <|pw0|>", inject(a)).values;
  CHECK(ya.isApprox(bb.encode_text("a photo of <|pw0|>", inject(a)).values));
  CHECK((ya - bb.encode_text("a photo of <|pw0|>", inject(b)).values).norm() > 1e-6);

  CHECK_THROWS_AS(bb.encode_text("a photo of <|pw0|>"), InputError);
  CHECK_THROWS_AS(bb.encode_text(std::string(200, 'x')), TruncationError);
}

TEST_CASE("bridge VJP matches finite differences") {
  const auto& bb = bridge();
  Rng rng(5);
  const Vector v0 = gaussian_vector(rng, 32, 0.05);
  const Vector g = gaussian_vector(rng, 24, 1.0);
  const std::string prompt = "<|pw0|> on a mat";
  const auto f = [&](const Vector& v) {
    return g.dot(bb.encode_text(prompt, {{pseudo_word_label(0), v}}).values);
  };
  const auto enc = bb.encode_text_with_grad(prompt, {{pseudo_word_label(0), v0}});
  const Vector analytic = enc.backward(g).at(pseudo_word_label(0));
  const Vector numeric = testing::numeric_gradient(f, v0, 1e-5);
  CHECK(testing::relative_error(analytic, numeric) < 1e-5);
}

TEST_CASE("OTI runs against the bridge") {
  const auto& bb = bridge();
  OtiConfig cfg;
  cfg.iterations = 30;
  cfg.lambda_gpt = 0.0;
  cfg.templates = {"a photo of {}"};
  cfg.seed = 1;
  const auto result = invert_image(testing::synthetic_image(2), bb, {}, {}, cfg);
  REQUIRE(result.loss_trace.size() == 30);
  CHECK(result.loss_trace.back().content < result.loss_trace.front().content);
}

int main(int argc, char** argv) {
  if (std::system("python3 -c 'import torch, transformers' >/dev/null 2>&1") != 0) {
    std::cout << "torch/transformers unavailable, skipping bridge tests\n";
    return 77;
  }
  doctest::Context context(argc, argv);
  return context.run();
}
