#include "isearle/oti.hpp"

#include <fstream>
#include <unordered_map>

#include "isearle/binary_io.hpp"
#include "isearle/errors.hpp"
#include "isearle/optim.hpp"

namespace isearle {

namespace {

constexpr char kTokenMagic[9] = "ISTOKENS";
constexpr std::uint32_t kTokenVersion = 1;

void require_finite(double value, const char* what, int iteration) {
  if (!std::isfinite(value))
    throw NumericError(std::string("OTI: non-finite ") + what + " at iteration " + std::to_string(iteration));
}

}  // namespace

const std::vector<std::string>& default_oti_templates() {
  static const std::vector<std::string> templates = {
      "a photo of {}",         "a picture of {}",       "an image of {}",
      "a cropped photo of {}", "a close-up photo of {}", "a bright photo of {}",
      "a good photo of {}",    "a photo of the {}",      "a photo of one {}",
      "a rendition of {}",
  };
  return templates;
}

std::string fill_template(std::string_view templ, std::string_view label) {
  const auto pos = templ.find("{}");
  if (pos == std::string_view::npos || templ.find("{}", pos + 2) != std::string_view::npos)
    throw InputError("template must contain exactly one '{}' slot: " + std::string(templ));
  std::string out(templ.substr(0, pos));
  out += label;
  out += templ.substr(pos + 2);
  return out;
}

void OtiConfig::validate() const {
  if (iterations < 0) throw InputError("iterations must be >= 0");
  if (learning_rate < 0 || lambda_content < 0 || lambda_gpt < 0 || noise_std < 0 || weight_decay < 0 ||
      ema_decay < 0 || ema_decay > 1)
    throw InputError("OTI rates and weights must be nonnegative (ema_decay <= 1)");
  if (templates.empty()) throw InputError("template_set must be nonempty");
  for (const auto& t : templates) fill_template(t, "x");
}

double content_loss(const Vector& image_features, const Vector& text_features, const Vector& noise) {
  if (text_features.size() != noise.size()) throw InputError("noise has wrong length");
  return 1.0 - cosine(image_features, text_features + noise);
}

Vector sample_noise(double stddev, Eigen::Index dim, Rng& rng) {
  if (stddev < 0) throw InputError("noise std must be >= 0");
  return gaussian_vector(rng, dim, stddev);
}

double gpt_loss(const Vector& phrase_features, const Vector& pseudo_phrase_features) {
  return 1.0 - cosine(phrase_features, pseudo_phrase_features);
}

double oti_total_loss(double content, double gpt, const OtiConfig& config) {
  return config.lambda_content * content + config.lambda_gpt * gpt;
}

std::uint64_t image_seed(std::uint64_t base_seed, std::string_view image_id) {
  return stable_hash(image_id, base_seed);
}

OtiResult invert_features(const EmbeddingVector& image_features, const Backbone& backbone,
                          const ConceptVocabulary& vocab, const PhraseBank& bank, const OtiConfig& config) {
  config.validate();
  const auto& info = backbone.info();
  if (image_features.size() != info.embed_dim) throw InputError("image features have wrong width");

  Rng rng(config.seed);
  const std::string label = pseudo_word_label(0);
  Vector token = gaussian_vector(rng, info.token_dim, backbone.token_embedding_std());

  OtiResult result;
  const bool use_gpt = config.lambda_gpt > 0.0;
  if (use_gpt) {
    result.concepts_used = assign_concepts(image_features, vocab, std::min(config.k_concepts, vocab.size()));
    if (result.concepts_used.empty()) throw InputError("OTI: empty concept vocabulary");
  }

  AdamW optimizer(token.size(), config.learning_rate, config.weight_decay);
  Ema ema(token, config.ema_decay);
  std::unordered_map<std::string, Vector> phrase_cache;
  result.loss_trace.reserve(static_cast<std::size_t>(config.iterations));

  for (int it = 0; it < config.iterations; ++it) {
    Injections injections{{label, token}};
    const auto& templ = config.templates[uniform_index(rng, config.templates.size())];
    const auto text = backbone.encode_text_with_grad(fill_template(templ, label), injections);
    const Vector noise = sample_noise(config.noise_std, info.embed_dim, rng);
    const Vector noisy = text.features.values + noise;

    OtiLossTerms terms;
    terms.content = 1.0 - cosine(image_features.values, noisy);
    require_finite(terms.content, "content loss", it);
    Vector grad = text.backward(-config.lambda_content * cosine_grad_b(image_features.values, noisy))[label];

    if (use_gpt) {
      const auto sampled = sample_regularization_phrase(result.concepts_used, bank, rng);
      auto cached = phrase_cache.find(sampled.phrase);
      if (cached == phrase_cache.end())
        cached = phrase_cache.emplace(sampled.phrase, backbone.encode_text(sampled.phrase).values).first;
      const auto pseudo = backbone.encode_text_with_grad(
          substitute_pseudo_word(sampled.phrase, sampled.concept_name, label), injections);
      terms.gpt = gpt_loss(cached->second, pseudo.features.values);
      require_finite(terms.gpt, "gpt loss", it);
      grad += pseudo.backward(-config.lambda_gpt * cosine_grad_b(cached->second, pseudo.features.values))[label];
    }
    terms.total = oti_total_loss(terms.content, terms.gpt, config);
    result.loss_trace.push_back(terms);

    optimizer.step(token, grad);
    if (!token.allFinite()) throw NumericError("OTI: token became non-finite at iteration " + std::to_string(it));
    ema.update(token);
  }
  result.token = {ema.value(), label};
  return result;
}

OtiResult invert_image(const Image& image, const Backbone& backbone, const ConceptVocabulary& vocab,
                       const PhraseBank& bank, const OtiConfig& config) {
  return invert_features(backbone.encode_image(image), backbone, vocab, bank, config);
}

void write_token_store(const std::filesystem::path& path, int token_dim, const std::vector<TokenRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write token store " + path.string());
  binio::write_magic(out, kTokenMagic);
  binio::write_pod(out, kTokenVersion);
  binio::write_pod(out, static_cast<std::uint32_t>(token_dim));
  for (const auto& record : records) {
    if (record.token.size() != token_dim) throw InputError("token width mismatch for " + record.image_id);
    binio::write_string(out, record.image_id);
    binio::write_floats(out, to_float32(record.token));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TokenRecord> read_token_store(const std::filesystem::path& path, int* token_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open token store " + path.string());
  binio::expect_magic(in, kTokenMagic);
  if (binio::read_pod<std::uint32_t>(in) != kTokenVersion) throw ParseError("unsupported token store version");
  const auto dim = binio::read_pod<std::uint32_t>(in);
  if (token_dim) *token_dim = static_cast<int>(dim);
  std::vector<TokenRecord> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    TokenRecord record;
    record.image_id = binio::read_string(in);
    const auto values = binio::read_floats(in, dim);
    record.token = from_float32(values);
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace isearle
