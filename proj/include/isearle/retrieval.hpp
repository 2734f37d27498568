#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "isearle/backbone.hpp"

namespace isearle {

// Binary embedding manifest: magic "ISEMBEDS", u32 version, u32 d,
// u32 normalized flag, then (u32 length, id bytes, float32 x d) records.
struct EmbeddingManifest {
  int dim = 0;
  bool normalized = false;
  std::vector<std::string> ids;
  Matrix rows;  // |ids| x d

  void append(std::string id, const Vector& values);
  std::size_t size() const { return ids.size(); }
};

void write_embedding_manifest(const std::filesystem::path& path, const EmbeddingManifest& manifest);
EmbeddingManifest read_embedding_manifest(const std::filesystem::path& path);

struct SearchHit {
  std::string id;
  double score = 0.0;
};

// Exact dense cosine index over unit-normalized rows.
class RetrievalIndex {
 public:
  // Normalizes every row and rounds it to float32, so an index and its saved
  // copy compare equal. Throws ValidationError on duplicate ids or
  // non-finite rows, DegenerateInputError on zero rows.
  static RetrievalIndex build(const EmbeddingManifest& manifest);
  static RetrievalIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Top-k by cosine, descending; equal scores keep index order. Throws
  // InputError when the index is empty or k exceeds its size.
  std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k) const;

  std::size_t size() const { return manifest_.ids.size(); }
  int dim() const { return manifest_.dim; }
  const std::vector<std::string>& ids() const { return manifest_.ids; }
  const Matrix& matrix() const { return manifest_.rows; }
  std::optional<std::size_t> position(std::string_view id) const;
  Vector row(std::string_view id) const;  // throws LookupError
  const std::string& digest() const { return digest_; }

 private:
  EmbeddingManifest manifest_;
  std::unordered_map<std::string, std::size_t> positions_;
  std::string digest_;
};

struct ComposedQuery {
  std::string reference_image_id;
  std::string relative_caption;
  std::optional<std::string> second_caption;
  std::optional<std::string> shared_concept;
};

// "a photo of S* that {caption}"
std::string cir_prompt(std::string_view label, std::string_view caption);
// "{domain} of S*"
std::string domain_prompt(std::string_view label, std::string_view domain);
// "a photo of S*, o1", "a photo of S*, o1 and o2", "a photo of S*, o1 and o2, o3, and o4"
std::string object_prompt(std::string_view label, std::span<const std::string> objects);

// With a second caption both "A and B" and "B and A" are encoded, their unit
// features averaged and the mean renormalized.
EmbeddingVector compose_cir_query(const ComposedQuery& query, const PseudoWordToken& token, const Backbone& backbone);
EmbeddingVector compose_domain_query(const PseudoWordToken& token, std::string_view domain, const Backbone& backbone);
EmbeddingVector compose_object_query(const PseudoWordToken& token, std::span<const std::string> objects,
                                     const Backbone& backbone);

enum class BaselineMode { image_only, text_only, image_plus_text };
std::optional<BaselineMode> parse_baseline_mode(std::string_view name);

// image_only needs `reference`, text_only needs the caption, image_plus_text
// needs both; x and y are normalized before summation.
EmbeddingVector baseline_query(BaselineMode mode, const ComposedQuery& query, const std::optional<Vector>& reference,
                               const Backbone& backbone);

}  // namespace isearle
