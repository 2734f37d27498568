#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isearle/backbone.hpp"
#include "isearle/random.hpp"

namespace isearle {

// Prompt used both for embedding vocabulary entries and for seeding phrase
// generation.
std::string concept_prompt(std::string_view concept_name);

struct ConceptVocabulary {
  std::vector<std::string> entries;
  Matrix text_embeddings;  // |entries| x d, unit rows

  // Lowercases and trims names, drops duplicates (first occurrence wins) and
  // encodes "a photo of {concept}" for each entry.
  static ConceptVocabulary build(std::span<const std::string> names, const Backbone& backbone);
  // Rows are normalized; names must already be unique.
  static ConceptVocabulary from_embeddings(std::vector<std::string> names, const Matrix& embeddings);

  std::size_t size() const { return entries.size(); }
};

// One class name per line; blank lines skipped.
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);

// Top-k distinct concepts by cosine similarity, descending; lower vocabulary
// index wins ties. Throws InputError when k exceeds the vocabulary size.
std::vector<std::string> assign_concepts(const EmbeddingVector& image, const ConceptVocabulary& vocab,
                                         std::size_t k);

class PhraseBank {
 public:
  PhraseBank() = default;

  // Validates that every phrase begins with "a photo of {concept}" followed
  // by a word boundary.
  void add(const std::string& concept_name, std::vector<std::string> phrases);

  const std::vector<std::string>& phrases(std::string_view concept_name) const;
  bool contains(std::string_view concept_name) const { return bank_.find(concept_name) != bank_.end(); }
  std::size_t size() const { return bank_.size(); }
  const std::map<std::string, std::vector<std::string>, std::less<>>& entries() const { return bank_; }

  // JSON lines {"concept": str, "phrases": [str, ...]}. When `expected_count`
  // is nonzero every concept must carry exactly that many phrases, otherwise
  // all concepts must agree on one count.
  static PhraseBank parse(std::istream& in, std::size_t expected_count = 0);
  static PhraseBank load(const std::filesystem::path& path, std::size_t expected_count = 0);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  bool operator==(const PhraseBank&) const = default;

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> bank_;
};

struct SampledPhrase {
  std::string phrase;
  std::string concept_name;
};

// Uniform concept, then uniform phrase. Throws LookupError for a concept
// absent from the bank.
SampledPhrase sample_regularization_phrase(std::span<const std::string> concepts, const PhraseBank& bank,
                                           Rng& rng);

// Replaces the concept at the "a photo of" prefix (or, failing that, its
// first whole-word occurrence) with `label`.
std::string substitute_pseudo_word(std::string_view phrase, std::string_view concept_name,
                                   std::string_view label);

// Parameters echoed into the generation manifest so an external LM run can
// be audited.
struct PhraseGenConfig {
  std::size_t phrases_per_concept = 256;
  double temperature = 0.5;
  int max_tokens = 35;
  // Shell command; {prompt}, {n}, {temperature}, {max_tokens} are expanded.
  // It must print one continuation per line.
  std::string command;
};

using PhraseGenerator = std::function<std::vector<std::string>(const std::string& prompt, const PhraseGenConfig&)>;

// Runs `generator` for every concept; lines not starting with the prompt are
// prefixed with it.
PhraseBank generate_phrase_bank(std::span<const std::string> concepts, const PhraseGenConfig& config,
                                const PhraseGenerator& generator);

// Generator that shells out to `config.command`.
std::vector<std::string> run_phrase_command(const std::string& prompt, const PhraseGenConfig& config);

}  // namespace isearle
