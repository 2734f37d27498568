#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "isearle/backbone.hpp"
#include "isearle/concepts.hpp"
#include "isearle/random.hpp"

namespace isearle {

struct PhiArchitecture {
  int input_dim = 0;   // backbone embed_dim
  int hidden1 = 0;
  int hidden2 = 0;
  int output_dim = 0;  // backbone token_dim
  double dropout = 0.5;

  // 4 * token_dim hidden widths.
  static PhiArchitecture for_backbone(const BackboneInfo& info, double dropout = 0.5);
};

// affine -> GELU -> dropout -> affine -> GELU -> dropout -> affine.
// Parameters live in one flat vector: W1, b1, W2, b2, W3, b3 (row-major).
class PhiNetwork {
 public:
  PhiNetwork(PhiArchitecture arch, std::uint64_t seed);
  PhiNetwork(PhiArchitecture arch, Vector parameters);

  // Evaluation mode (dropout off). Throws InputError on a width mismatch.
  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& inputs) const;

  struct TrainCache {
    Matrix input, pre1, act1, pre2, act2;
    Matrix mask1, mask2;
  };
  // Training mode: inverted dropout with masks drawn from `rng`.
  Matrix forward_train(const Matrix& inputs, Rng& rng, TrainCache& cache) const;
  // Gradient of the loss with respect to the flat parameter vector.
  Vector backward(const TrainCache& cache, const Matrix& grad_output) const;

  const PhiArchitecture& architecture() const { return arch_; }
  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& params);
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

 private:
  struct Layer {
    Eigen::Index weight_offset, bias_offset, rows, cols;
  };
  Eigen::Map<const Matrix> weight(const Layer& l) const;
  Eigen::Map<const Vector> bias(const Layer& l) const;
  Matrix affine(const Layer& l, const Matrix& in) const;
  void layout();

  PhiArchitecture arch_;
  Vector params_;
  Layer l1_{}, l2_{}, l3_{};
};

PseudoWordToken phi_forward(const EmbeddingVector& x, const PhiNetwork& net, int label_index = 0);

// Symmetric contrastive distillation loss between stored tokens (`targets`,
// row i is the pre-generated token for image i) and predicted tokens.
// Denominators hold every cross pair plus the within-set pairs j != i.
// Throws DegenerateInputError on a zero-norm row.
double distil_loss(const Matrix& targets, const Matrix& predicted, double temperature,
                   Matrix* grad_predicted = nullptr);

// Mean squared L2 norm of the rows.
double pen_loss(const Matrix& predicted, Matrix* grad_predicted = nullptr);

struct PhiTrainConfig {
  int epochs = 115;
  double learning_rate = 1e-4;
  std::size_t batch_size = 256;
  double lambda_distil = 1.0;
  double lambda_gpt = 0.75;
  double lambda_pen = 3e-3;  // 1e-2 for large backbones
  double temperature = 0.25;
  double hard_fraction = 0.5;
  std::size_t cluster_count = 0;  // 0 -> ceil(N / 256)
  double weight_decay = 0.01;
  double ema_decay = 0.999;
  std::size_t k_concepts = 150;
  int hidden_dim = 0;  // 0 -> 4 * token_dim
  double dropout = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t hard_count() const;  // ceil(hard_fraction * batch_size)
};

double phi_total_loss(double distil, double gpt, double pen, const PhiTrainConfig& config);

// Regularization pair for one batch row: features of a sampled phrase and the
// same phrase with the concept replaced by pseudo_word_label(0).
struct PhiGptPair {
  Vector phrase_features;
  std::string pseudo_phrase;
};

struct PhiLossTerms {
  double total = 0.0;
  double distil = 0.0;
  double gpt = 0.0;
  double pen = 0.0;
};

// Batch objective with its gradient with respect to `predicted`. An empty
// `gpt_pairs` drops the regularization term.
PhiLossTerms phi_batch_loss(const Matrix& targets, const Matrix& predicted, std::span<const PhiGptPair> gpt_pairs,
                            const Backbone& backbone, const PhiTrainConfig& config, Matrix* grad_predicted = nullptr);

struct TokenDataset {
  std::vector<std::string> ids;
  Matrix embeddings;  // N x d image features
  Matrix tokens;      // N x token_dim pre-generated tokens
  std::vector<int> clusters;

  std::size_t size() const { return ids.size(); }
  void validate(std::size_t cluster_count) const;
};

struct KMeansResult {
  std::vector<int> assignment;
  Matrix centroids;
  int iterations = 0;
};

// Lloyd iterations from a k-means++ seeding. Empty clusters take the point
// farthest from its centroid. Throws InputError when N < cluster_count.
KMeansResult cluster_dataset(const Matrix& embeddings, std::size_t cluster_count, std::uint64_t seed,
                             int max_iterations = 100, double tolerance = 1e-6);

struct ComposedBatch {
  std::vector<std::size_t> ids;  // hard block first, then the random fill
  std::size_t hard_count = 0;
  int hard_cluster = -1;  // -1 when the batch is fully random
};

// ceil(alpha * B) ids without replacement from one uniformly chosen cluster
// holding at least that many records, the rest uniformly from the remaining
// records. Falls back to a fully random batch (with a warning) when no
// cluster is eligible.
ComposedBatch compose_batch(const std::vector<int>& clusters, const PhiTrainConfig& config, Rng& rng);

struct PhiTrainReport {
  std::vector<double> epoch_distil;
  std::vector<double> epoch_gpt;
  std::vector<double> epoch_pen;
  std::vector<double> epoch_total;
  std::size_t steps = 0;
};

// Distills the stored tokens into a fresh network and returns the EMA
// weights. Assigns clusters when `dataset.clusters` is empty. Never mutates
// the stored tokens.
PhiNetwork train_phi(TokenDataset& dataset, const Backbone& backbone, const PhraseBank& bank,
                     const ConceptVocabulary& vocab, const PhiTrainConfig& config,
                     PhiTrainReport* report = nullptr);

// Header (magic "ISPHICKP", u32 version, u32 d, token_dim, h1, h2), float32
// dropout, u64 parameter count, float32 parameters, then the training config
// echo as a length-prefixed JSON string.
void save_checkpoint(const std::filesystem::path& path, const PhiNetwork& net, const std::string& config_echo);
PhiNetwork load_checkpoint(const std::filesystem::path& path, std::string* config_echo = nullptr);

}  // namespace isearle
