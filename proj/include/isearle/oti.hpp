#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isearle/backbone.hpp"
#include "isearle/concepts.hpp"
#include "isearle/random.hpp"

namespace isearle {

// Neutral single-slot templates; "{}" marks the pseudo-word slot.
const std::vector<std::string>& default_oti_templates();

// Substitutes `label` for the single "{}" slot.
std::string fill_template(std::string_view templ, std::string_view label);

struct OtiConfig {
  int iterations = 500;
  double learning_rate = 2e-2;
  double lambda_content = 1.0;
  double lambda_gpt = 0.5;
  double noise_std = 0.64;  // 0.16 for large backbones
  double weight_decay = 0.01;
  double ema_decay = 0.99;
  std::size_t k_concepts = 15;
  std::vector<std::string> templates = default_oti_templates();
  std::uint64_t seed = 0;

  // Throws InputError on negative rates/weights or an unusable template set.
  void validate() const;
};

struct OtiLossTerms {
  double total = 0.0;
  double content = 0.0;
  double gpt = 0.0;
};

struct OtiResult {
  PseudoWordToken token;  // EMA-smoothed
  std::vector<OtiLossTerms> loss_trace;
  std::vector<std::string> concepts_used;
};

// 1 - cos(x, y + n).
double content_loss(const Vector& image_features, const Vector& text_features, const Vector& noise);

// i.i.d. N(0, stddev^2) entries.
Vector sample_noise(double stddev, Eigen::Index dim, Rng& rng);

// 1 - cos(y_hat, y_hat_star).
double gpt_loss(const Vector& phrase_features, const Vector& pseudo_phrase_features);

double oti_total_loss(double content, double gpt, const OtiConfig& config);

// Optimizes one pseudo-word token so that templated prompts containing it
// match the image features. Only the token is updated; the backbone is
// read-only. Deterministic for a fixed config.seed.
OtiResult invert_features(const EmbeddingVector& image_features, const Backbone& backbone,
                          const ConceptVocabulary& vocab, const PhraseBank& bank, const OtiConfig& config);

OtiResult invert_image(const Image& image, const Backbone& backbone, const ConceptVocabulary& vocab,
                       const PhraseBank& bank, const OtiConfig& config);

// Per-image seed for batch drivers.
std::uint64_t image_seed(std::uint64_t base_seed, std::string_view image_id);

struct TokenRecord {
  std::string image_id;
  Vector token;
};

// Header: magic "ISTOKENS", u32 version, u32 token_dim; then records of
// (u32 length, id bytes, float32 x token_dim) until end of file.
void write_token_store(const std::filesystem::path& path, int token_dim, const std::vector<TokenRecord>& records);
std::vector<TokenRecord> read_token_store(const std::filesystem::path& path, int* token_dim = nullptr);

}  // namespace isearle
