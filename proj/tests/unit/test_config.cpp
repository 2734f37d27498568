#include <doctest.h>

#include "isearle/config.hpp"
#include "isearle/errors.hpp"

using namespace isearle;

TEST_CASE("defaults") {
  const auto cfg = parse_config("");
  CHECK(cfg.oti.iterations == 500);
  CHECK(cfg.oti.learning_rate == 2e-2);
  CHECK(cfg.oti.noise_std == 0.64);
  CHECK(cfg.phi.epochs == 115);
  CHECK(cfg.phi.batch_size == 256);
  CHECK(cfg.phi.lambda_pen == 3e-3);
  CHECK(cfg.annotation.dedup_threshold == 0.92);
  CHECK(cfg.backbone.model_ref == "stub");
}

TEST_CASE("sections override defaults and the echo reflects them") {
  const auto cfg = parse_config(R"(
seed = 9
log_level = "debug"
[backbone]
model = "stub"
embed_dim = 32
[oti]
iterations = 20
noise_std = 0.16
templates = ["a photo of {}", "{}"]
[phi]
epochs = 3
hard_fraction = 0.0
seed = 4
[phrase_gen]
phrases_per_concept = 8
[annotation]
port = 9000
[annotation.annotators]
secret = "alice"
)");
  CHECK(cfg.oti.seed == 9);
  CHECK(cfg.phi.seed == 4);
  CHECK(cfg.backbone.stub.embed_dim == 32);
  CHECK(cfg.oti.templates.size() == 2);
  CHECK(cfg.annotation.annotators.at("secret") == "alice");
  const auto echo = cfg.to_json();
  CHECK(echo["oti"]["iterations"] == 20);
  CHECK(echo["phi"]["hard_fraction"] == 0.0);
  CHECK(echo["annotation"]["port"] == 9000);
  CHECK(echo.dump().find("secret") == std::string::npos);
}

TEST_CASE("rejections") {
  CHECK_THROWS_AS(parse_config("[oti]\niterationz = 3\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[oti]\niterations = \"many\"\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[phi]\ntemperature = 0.0\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("log_level = \"loud\"\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[oti\n"), ParseError);
  CHECK_THROWS_AS(load_config("/nonexistent.toml"), IoError);
}
