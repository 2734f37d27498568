#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "isearle/annotation.hpp"
#include "isearle/backbone.hpp"
#include "isearle/concepts.hpp"
#include "isearle/inversion_net.hpp"
#include "isearle/oti.hpp"

namespace isearle {

// Fully resolved run configuration. Tables: [backbone], [oti], [phi],
// [phrase_gen], [annotation]; top level: seed, device, log_level. Unknown
// keys are rejected. oti.seed and phi.seed default to the top-level seed.
struct RunConfig {
  std::filesystem::path source;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  std::string log_level = "info";
  BackboneConfig backbone;
  OtiConfig oti;
  PhiTrainConfig phi;
  PhraseGenConfig phrase_gen;
  AnnotationConfig annotation;

  nlohmann::json to_json() const;
};

// Throws ParseError on TOML syntax errors and ValidationError on unknown keys,
// wrong types or out-of-range values.
RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& source = {});
RunConfig load_config(const std::filesystem::path& path);

}  // namespace isearle
