#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "isearle/linalg.hpp"

namespace isearle {

struct BackboneInfo {
  int embed_dim = 0;       // d, joint embedding width
  int token_dim = 0;       // width of the token-embedding space
  std::string model_id;
  int context_length = 0;  // max tokens including begin/end sentinels
};

struct EmbeddingVector {
  Vector values;
  bool normalized = false;

  static EmbeddingVector unit(const Vector& v);
  EmbeddingVector as_unit() const { return unit(values); }
  Eigen::Index size() const { return values.size(); }
};

struct PseudoWordToken {
  Vector values;
  std::string label;
};

// Reserved pseudo-word labels "<|pw0|>", "<|pw1|>", ... never collide with a
// vocabulary word.
std::string pseudo_word_label(int index);
bool is_pseudo_word_label(std::string_view token);

using Injections = std::map<std::string, Vector, std::less<>>;
Injections inject(const PseudoWordToken& token);

// Decoded RGB image, row-major HWC, channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  float at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Throws InputError when the file is missing or not a decodable image.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

// Pads elongated images towards a 1.25 aspect ratio, resizes the short side
// to `size` (bicubic), center-crops to size x size and applies the CLIP
// channel normalization. Output is CHW.
std::vector<float> preprocess_target_pad(const Image& image, int size, double target_ratio = 1.25);

// Text features plus a vector-Jacobian product with respect to every injected
// pseudo-word token that occurs in the prompt.
struct TextEncoding {
  EmbeddingVector features;
  std::function<Injections(const Vector& grad_features)> backward;
};

// Frozen vision-language model. Implementations are immutable after
// construction, so concurrent const calls are safe.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const BackboneInfo& info() const = 0;

  virtual EmbeddingVector encode_image(const Image& image) const = 0;

  // Every pseudo-word label in `prompt` must have an entry in `injections`.
  // Unreferenced entries are ignored. Throws TruncationError when the prompt
  // does not fit in the context window.
  virtual TextEncoding encode_text_with_grad(std::string_view prompt,
                                             const Injections& injections) const = 0;

  EmbeddingVector encode_text(std::string_view prompt, const Injections& injections = {}) const;

  // Tokens including begin/end sentinels; never throws.
  virtual std::vector<std::string> tokenize(std::string_view prompt) const = 0;
  std::size_t tokenize_probe(std::string_view prompt) const { return tokenize(prompt).size(); }

  // E_w of a single-token word. Throws InputError for multi-token input.
  virtual Vector token_embedding(std::string_view word) const = 0;

  // Empirical std of the word-embedding table, used to scale random tokens.
  virtual double token_embedding_std() const = 0;

  // Digest of all frozen parameters.
  virtual std::uint64_t parameter_digest() const = 0;
};

struct StubBackboneOptions {
  int embed_dim = 64;
  int token_dim = 64;
  int hidden_dim = 128;
  int context_length = 77;
  int image_size = 16;
  std::uint64_t seed = 7;
  double token_std = 0.5;
  double output_scale = 4.0;
};

// Deterministic stand-in for a pretrained model: hashed word embeddings, a
// two-stage tanh text tower with mean pooling, and a fixed random projection
// of preprocessed pixels. Small enough for exact gradient checks.
class StubBackbone final : public Backbone {
 public:
  explicit StubBackbone(StubBackboneOptions options = {});

  const BackboneInfo& info() const override { return info_; }
  EmbeddingVector encode_image(const Image& image) const override;
  TextEncoding encode_text_with_grad(std::string_view prompt,
                                     const Injections& injections) const override;
  std::vector<std::string> tokenize(std::string_view prompt) const override;
  Vector token_embedding(std::string_view word) const override;
  double token_embedding_std() const override { return options_.token_std; }
  std::uint64_t parameter_digest() const override;

  const StubBackboneOptions& options() const { return options_; }

 private:
  Vector word_vector(std::string_view token) const;
  Vector position_vector(std::size_t position) const;

  StubBackboneOptions options_;
  BackboneInfo info_;
  Matrix token_in_;   // hidden x token_dim
  Vector token_bias_;
  Matrix mix_;        // hidden x hidden
  Vector mix_bias_;
  Matrix out_;        // embed_dim x hidden
  Matrix image_proj_; // embed_dim x (3 * image_size^2)
};

// Parsed `backbone` configuration table.
struct BackboneConfig {
  // "stub" or "external:<command>"; the external command speaks the JSON-lines
  // bridge protocol implemented by tools/clip_bridge.py.
  std::string model_ref = "stub";
  StubBackboneOptions stub;
};

std::unique_ptr<Backbone> load_backbone(const BackboneConfig& config);

}  // namespace isearle
