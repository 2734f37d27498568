#include "isearle/inversion_net.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "isearle/binary_io.hpp"
#include "isearle/errors.hpp"
#include "isearle/optim.hpp"
#include "isearle/oti.hpp"

namespace isearle {

namespace {

constexpr char kCheckpointMagic[9] = "ISPHICKP";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }

Matrix apply_gelu(const Matrix& m) { return m.unaryExpr([](double v) { return gelu(v); }); }

Matrix row_normalized(const Matrix& m, Vector* norms) {
  Matrix out = m;
  norms->resize(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n == 0.0) throw DegenerateInputError("cosine undefined for a zero-norm token");
    (*norms)[r] = n;
    out.row(r) /= n;
  }
  return out;
}

// log(sum(exp(values))) over the given entries.
double log_sum_exp(const std::vector<double>& values) {
  const double m = *std::max_element(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

PhiArchitecture PhiArchitecture::for_backbone(const BackboneInfo& info, double dropout) {
  return {info.embed_dim, 4 * info.token_dim, 4 * info.token_dim, info.token_dim, dropout};
}

PhiNetwork::PhiNetwork(PhiArchitecture arch, std::uint64_t seed) : arch_(arch) {
  layout();
  Rng rng(seed);
  const auto init = [&](const Layer& l) {
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(l.cols), 1.0 / std::sqrt(l.cols));
    for (Eigen::Index i = 0; i < l.rows * l.cols; ++i) params_[l.weight_offset + i] = dist(rng);
    for (Eigen::Index i = 0; i < l.rows; ++i) params_[l.bias_offset + i] = dist(rng);
  };
  init(l1_);
  init(l2_);
  init(l3_);
}

PhiNetwork::PhiNetwork(PhiArchitecture arch, Vector parameters) : arch_(arch) {
  layout();
  set_parameters(parameters);
}

void PhiNetwork::layout() {
  if (arch_.input_dim <= 0 || arch_.hidden1 <= 0 || arch_.hidden2 <= 0 || arch_.output_dim <= 0)
    throw InputError("phi: layer widths must be positive");
  if (arch_.dropout < 0.0 || arch_.dropout >= 1.0) throw InputError("phi: dropout must be in [0, 1)");
  Eigen::Index offset = 0;
  const auto place = [&offset](Eigen::Index rows, Eigen::Index cols) {
    Layer l{offset, offset + rows * cols, rows, cols};
    offset += rows * cols + rows;
    return l;
  };
  l1_ = place(arch_.hidden1, arch_.input_dim);
  l2_ = place(arch_.hidden2, arch_.hidden1);
  l3_ = place(arch_.output_dim, arch_.hidden2);
  params_ = Vector::Zero(offset);
}

void PhiNetwork::set_parameters(const Vector& params) {
  if (params.size() != params_.size()) throw InputError("phi: parameter count mismatch");
  params_ = params;
}

Eigen::Map<const Matrix> PhiNetwork::weight(const Layer& l) const {
  return {params_.data() + l.weight_offset, l.rows, l.cols};
}

Eigen::Map<const Vector> PhiNetwork::bias(const Layer& l) const { return {params_.data() + l.bias_offset, l.rows}; }

Matrix PhiNetwork::affine(const Layer& l, const Matrix& in) const {
  Matrix out = in * weight(l).transpose();
  out.rowwise() += bias(l).transpose();
  return out;
}

Vector PhiNetwork::forward(const Vector& x) const {
  if (x.size() != arch_.input_dim) throw InputError("phi: input has wrong width");
  return forward_batch(x.transpose()).row(0).transpose();
}

Matrix PhiNetwork::forward_batch(const Matrix& inputs) const {
  if (inputs.cols() != arch_.input_dim) throw InputError("phi: input has wrong width");
  return affine(l3_, apply_gelu(affine(l2_, apply_gelu(affine(l1_, inputs)))));
}

Matrix PhiNetwork::forward_train(const Matrix& inputs, Rng& rng, TrainCache& cache) const {
  if (inputs.cols() != arch_.input_dim) throw InputError("phi: input has wrong width");
  const double keep = 1.0 - arch_.dropout;
  std::bernoulli_distribution draw(keep);
  const auto make_mask = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix mask(rows, cols);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = draw(rng) ? 1.0 / keep : 0.0;
    return mask;
  };
  cache.input = inputs;
  cache.pre1 = affine(l1_, inputs);
  cache.mask1 = make_mask(cache.pre1.rows(), cache.pre1.cols());
  cache.act1 = apply_gelu(cache.pre1).cwiseProduct(cache.mask1);
  cache.pre2 = affine(l2_, cache.act1);
  cache.mask2 = make_mask(cache.pre2.rows(), cache.pre2.cols());
  cache.act2 = apply_gelu(cache.pre2).cwiseProduct(cache.mask2);
  return affine(l3_, cache.act2);
}

Vector PhiNetwork::backward(const TrainCache& cache, const Matrix& grad_output) const {
  Vector grad = Vector::Zero(params_.size());
  const auto store = [&grad](const Layer& l, const Matrix& gw, const Matrix& g_out) {
    Eigen::Map<Matrix>(grad.data() + l.weight_offset, l.rows, l.cols) = gw;
    Eigen::Map<Vector>(grad.data() + l.bias_offset, l.rows) = g_out.colwise().sum().transpose();
  };
  store(l3_, grad_output.transpose() * cache.act2, grad_output);
  Matrix g2 = (grad_output * weight(l3_)).cwiseProduct(cache.mask2);
  g2 = g2.cwiseProduct(cache.pre2.unaryExpr([](double v) { return gelu_grad(v); }));
  store(l2_, g2.transpose() * cache.act1, g2);
  Matrix g1 = (g2 * weight(l2_)).cwiseProduct(cache.mask1);
  g1 = g1.cwiseProduct(cache.pre1.unaryExpr([](double v) { return gelu_grad(v); }));
  store(l1_, g1.transpose() * cache.input, g1);
  return grad;
}

PseudoWordToken phi_forward(const EmbeddingVector& x, const PhiNetwork& net, int label_index) {
  return {net.forward(x.values), pseudo_word_label(label_index)};
}

double distil_loss(const Matrix& targets, const Matrix& predicted, double temperature, Matrix* grad_predicted) {
  if (targets.rows() != predicted.rows() || targets.cols() != predicted.cols())
    throw InputError("distil_loss: batch shapes differ");
  if (targets.rows() == 0) throw InputError("distil_loss: empty batch");
  if (!(temperature > 0.0)) throw InputError("distil_loss: temperature must be > 0");
  const Eigen::Index b = targets.rows();
  Vector target_norms, pred_norms;
  const Matrix tn = row_normalized(targets, &target_norms);
  const Matrix vn = row_normalized(predicted, &pred_norms);
  const Matrix s_tv = tn * vn.transpose() / temperature;  // c(vbar_i, v_j)
  const Matrix s_vv = vn * vn.transpose() / temperature;
  const Matrix s_tt = tn * tn.transpose() / temperature;

  Matrix g_tv = Matrix::Zero(b, b);  // dL / d s_tv
  Matrix g_vv = Matrix::Zero(b, b);
  double loss = 0.0;
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(2 * b));
  for (Eigen::Index i = 0; i < b; ++i) {
    // target-anchored term
    terms.clear();
    for (Eigen::Index j = 0; j < b; ++j) terms.push_back(s_tv(i, j));
    for (Eigen::Index j = 0; j < b; ++j)
      if (j != i) terms.push_back(s_vv(i, j));
    const double lse1 = log_sum_exp(terms);
    loss += lse1 - s_tv(i, i);
    // prediction-anchored term
    terms.clear();
    for (Eigen::Index j = 0; j < b; ++j) terms.push_back(s_tv(j, i));
    for (Eigen::Index j = 0; j < b; ++j)
      if (j != i) terms.push_back(s_tt(i, j));
    const double lse2 = log_sum_exp(terms);
    loss += lse2 - s_tv(i, i);

    if (grad_predicted) {
      for (Eigen::Index j = 0; j < b; ++j) {
        g_tv(i, j) += std::exp(s_tv(i, j) - lse1);
        g_tv(j, i) += std::exp(s_tv(j, i) - lse2);
        if (j != i) g_vv(i, j) += std::exp(s_vv(i, j) - lse1);
      }
      g_tv(i, i) -= 2.0;
    }
  }
  loss /= static_cast<double>(b);

  if (grad_predicted) {
    g_tv /= static_cast<double>(b);
    g_vv /= static_cast<double>(b);
    const Matrix g_vn = (g_tv.transpose() * tn + (g_vv + g_vv.transpose()) * vn) / temperature;
    grad_predicted->resize(b, predicted.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const Vector u = vn.row(i).transpose();
      const Vector g = g_vn.row(i).transpose();
      grad_predicted->row(i) = ((g - u * u.dot(g)) / pred_norms[i]).transpose();
    }
  }
  return loss;
}

double pen_loss(const Matrix& predicted, Matrix* grad_predicted) {
  if (predicted.rows() == 0) throw InputError("pen_loss: empty batch");
  const double b = static_cast<double>(predicted.rows());
  if (grad_predicted) *grad_predicted = 2.0 * predicted / b;
  return predicted.squaredNorm() / b;
}

void PhiTrainConfig::validate() const {
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  if (hard_fraction < 0.0 || hard_fraction > 1.0) throw InputError("hard_fraction must be in [0, 1]");
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  if (epochs < 0) throw InputError("epochs must be >= 0");
  if (learning_rate < 0 || lambda_distil < 0 || lambda_gpt < 0 || lambda_pen < 0 || weight_decay < 0 ||
      ema_decay < 0 || ema_decay > 1)
    throw InputError("phi rates and weights must be nonnegative (ema_decay <= 1)");
}

std::size_t PhiTrainConfig::hard_count() const {
  // Guard against alpha * B landing a hair above an integer.
  const double raw = hard_fraction * static_cast<double>(batch_size);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

double phi_total_loss(double distil, double gpt, double pen, const PhiTrainConfig& config) {
  return config.lambda_distil * distil + config.lambda_gpt * gpt + config.lambda_pen * pen;
}

PhiLossTerms phi_batch_loss(const Matrix& targets, const Matrix& predicted, std::span<const PhiGptPair> gpt_pairs,
                            const Backbone& backbone, const PhiTrainConfig& config, Matrix* grad_predicted) {
  const auto b = predicted.rows();
  if (!gpt_pairs.empty() && static_cast<Eigen::Index>(gpt_pairs.size()) != b)
    throw InputError("phi_batch_loss: need one regularization phrase per row");
  PhiLossTerms terms;
  Matrix grad_distil, grad_pen;
  terms.distil = distil_loss(targets, predicted, config.temperature, grad_predicted ? &grad_distil : nullptr);
  terms.pen = pen_loss(predicted, grad_predicted ? &grad_pen : nullptr);
  if (grad_predicted) *grad_predicted = config.lambda_distil * grad_distil + config.lambda_pen * grad_pen;

  const std::string label = pseudo_word_label(0);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(gpt_pairs.size()); ++r) {
    const auto& pair = gpt_pairs[static_cast<std::size_t>(r)];
    const auto pseudo = backbone.encode_text_with_grad(pair.pseudo_phrase, {{label, predicted.row(r).transpose()}});
    terms.gpt += gpt_loss(pair.phrase_features, pseudo.features.values);
    if (grad_predicted) {
      const Vector g = pseudo.backward(-cosine_grad_b(pair.phrase_features, pseudo.features.values))[label];
      grad_predicted->row(r) += (config.lambda_gpt / static_cast<double>(b)) * g.transpose();
    }
  }
  if (!gpt_pairs.empty()) terms.gpt /= static_cast<double>(b);
  terms.total = phi_total_loss(terms.distil, terms.gpt, terms.pen, config);
  return terms;
}

void TokenDataset::validate(std::size_t cluster_count) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (embeddings.rows() != n || tokens.rows() != n) throw ValidationError("token dataset: row counts differ");
  if (!clusters.empty()) {
    if (clusters.size() != ids.size()) throw ValidationError("token dataset: cluster count differs");
    for (int c : clusters)
      if (c < 0 || static_cast<std::size_t>(c) >= cluster_count)
        throw ValidationError("token dataset: cluster id out of range");
  }
}

KMeansResult cluster_dataset(const Matrix& embeddings, std::size_t cluster_count, std::uint64_t seed,
                             int max_iterations, double tolerance) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (cluster_count < 1) throw InputError("cluster_count must be >= 1");
  if (n < cluster_count) throw InputError("fewer points than clusters");
  const auto k = static_cast<Eigen::Index>(cluster_count);
  Rng rng(seed);

  // k-means++ seeding.
  KMeansResult result;
  result.centroids.resize(k, embeddings.cols());
  result.centroids.row(0) = embeddings.row(static_cast<Eigen::Index>(uniform_index(rng, n)));
  Vector closest = Vector::Constant(static_cast<Eigen::Index>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      closest[ii] = std::min(closest[ii], (embeddings.row(ii) - result.centroids.row(c - 1)).squaredNorm());
    }
    const double total = closest.sum();
    std::size_t pick = uniform_index(rng, n);
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        r -= closest[static_cast<Eigen::Index>(i)];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    result.centroids.row(c) = embeddings.row(static_cast<Eigen::Index>(pick));
  }

  result.assignment.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (int iter = 0; iter < max_iterations; ++iter) {
    result.iterations = iter + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = embeddings.row(static_cast<Eigen::Index>(i));
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < k; ++c) {
        const double d2 = (row - result.centroids.row(c)).squaredNorm();
        if (d2 < best) {
          best = d2;
          result.assignment[i] = static_cast<int>(c);
        }
      }
      dist[i] = best;
    }
    // Re-seed empty clusters with the farthest point of a multi-member cluster.
    std::vector<std::size_t> counts(cluster_count, 0);
    for (int a : result.assignment) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < cluster_count; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[static_cast<std::size_t>(result.assignment[i])] > 1 && (far == n || dist[i] > dist[far])) far = i;
      --counts[static_cast<std::size_t>(result.assignment[far])];
      result.assignment[far] = static_cast<int>(c);
      ++counts[c];
      dist[far] = 0.0;
    }
    Matrix updated = Matrix::Zero(k, embeddings.cols());
    for (std::size_t i = 0; i < n; ++i)
      updated.row(result.assignment[i]) += embeddings.row(static_cast<Eigen::Index>(i));
    for (Eigen::Index c = 0; c < k; ++c) updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    const double shift = (updated - result.centroids).norm();
    result.centroids = std::move(updated);
    if (shift <= tolerance) break;
  }
  return result;
}

ComposedBatch compose_batch(const std::vector<int>& clusters, const PhiTrainConfig& config, Rng& rng) {
  const std::size_t n = clusters.size();
  const std::size_t b = config.batch_size;
  if (b > n) throw InputError("batch size exceeds dataset size");
  ComposedBatch batch;
  batch.ids.reserve(b);
  std::vector<char> taken(n, 0);

  const std::size_t hard = config.hard_count();
  if (hard > 0) {
    std::unordered_map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[clusters[i]].push_back(i);
    std::vector<int> eligible;
    for (const auto& [cluster, ids] : members)
      if (ids.size() >= hard) eligible.push_back(cluster);
    std::sort(eligible.begin(), eligible.end());
    if (eligible.empty()) {
      spdlog::warn("compose_batch: no cluster holds {} records, using a fully random batch", hard);
    } else {
      batch.hard_cluster = eligible[uniform_index(rng, eligible.size())];
      auto& pool = members[batch.hard_cluster];
      for (std::size_t i = 0; i < hard; ++i) {
        std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
        batch.ids.push_back(pool[i]);
        taken[pool[i]] = 1;
      }
      batch.hard_count = hard;
    }
  }

  std::vector<std::size_t> rest;
  rest.reserve(n - batch.ids.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!taken[i]) rest.push_back(i);
  for (std::size_t i = 0; batch.ids.size() < b; ++i) {
    std::swap(rest[i], rest[i + uniform_index(rng, rest.size() - i)]);
    batch.ids.push_back(rest[i]);
  }
  return batch;
}

PhiNetwork train_phi(TokenDataset& dataset, const Backbone& backbone, const PhraseBank& bank,
                     const ConceptVocabulary& vocab, const PhiTrainConfig& config, PhiTrainReport* report) {
  config.validate();
  const auto& info = backbone.info();
  const std::size_t n = dataset.size();
  if (n == 0) throw InputError("train_phi: empty dataset");
  if (dataset.embeddings.cols() != info.embed_dim || dataset.tokens.cols() != info.token_dim)
    throw InputError("train_phi: dataset widths do not match the backbone");

  PhiArchitecture arch = PhiArchitecture::for_backbone(info, config.dropout);
  if (config.hidden_dim > 0) arch.hidden1 = arch.hidden2 = config.hidden_dim;
  PhiNetwork net(arch, config.seed);
  if (config.epochs == 0) return net;

  const std::size_t clusters = config.cluster_count ? config.cluster_count : (n + 255) / 256;
  if (dataset.clusters.empty()) dataset.clusters = cluster_dataset(dataset.embeddings, clusters, config.seed).assignment;
  dataset.validate(clusters);

  const bool use_gpt = config.lambda_gpt > 0.0;
  std::vector<std::vector<std::string>> concepts(n);
  if (use_gpt) {
    const std::size_t k = std::min(config.k_concepts, vocab.size());
    for (std::size_t i = 0; i < n; ++i)
      concepts[i] = assign_concepts({dataset.embeddings.row(static_cast<Eigen::Index>(i)).transpose(), false}, vocab, k);
  }

  Rng rng(config.seed ^ 0x5eed5eedULL);
  AdamW optimizer(net.parameters().size(), config.learning_rate, config.weight_decay);
  Ema ema(net.parameters(), config.ema_decay);
  std::unordered_map<std::string, Vector> phrase_cache;
  const std::string label = pseudo_word_label(0);
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  PhiTrainConfig batch_config = config;
  batch_config.batch_size = std::min(config.batch_size, n);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double sum_distil = 0, sum_gpt = 0, sum_pen = 0, sum_total = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const auto batch = compose_batch(dataset.clusters, batch_config, rng);
      const auto b = static_cast<Eigen::Index>(batch.ids.size());
      Matrix inputs(b, info.embed_dim), targets(b, info.token_dim);
      for (Eigen::Index r = 0; r < b; ++r) {
        inputs.row(r) = dataset.embeddings.row(static_cast<Eigen::Index>(batch.ids[static_cast<std::size_t>(r)]));
        targets.row(r) = dataset.tokens.row(static_cast<Eigen::Index>(batch.ids[static_cast<std::size_t>(r)]));
      }
      PhiNetwork::TrainCache cache;
      const Matrix predicted = net.forward_train(inputs, rng, cache);

      std::vector<PhiGptPair> pairs;
      if (use_gpt) {
        for (Eigen::Index r = 0; r < b; ++r) {
          const auto& own = concepts[batch.ids[static_cast<std::size_t>(r)]];
          const auto sampled = sample_regularization_phrase(own, bank, rng);
          auto cached = phrase_cache.find(sampled.phrase);
          if (cached == phrase_cache.end())
            cached = phrase_cache.emplace(sampled.phrase, backbone.encode_text(sampled.phrase).values).first;
          pairs.push_back({cached->second, substitute_pseudo_word(sampled.phrase, sampled.concept_name, label)});
        }
      }
      Matrix grad;
      const auto terms = phi_batch_loss(targets, predicted, pairs, backbone, config, &grad);
      const double l_distil = terms.distil, l_gpt = terms.gpt, l_pen = terms.pen;
      const double total = terms.total;
      if (!std::isfinite(total))
        throw NumericError("train_phi: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + " (distil " + std::to_string(l_distil) + ", gpt " +
                           std::to_string(l_gpt) + ", pen " + std::to_string(l_pen) + ")");

      Vector params = net.parameters();
      optimizer.step(params, net.backward(cache, grad));
      net.set_parameters(params);
      ema.update(params);

      sum_distil += l_distil;
      sum_gpt += l_gpt;
      sum_pen += l_pen;
      sum_total += total;
      if (report) ++report->steps;
    }
    if (report) {
      const double s = static_cast<double>(steps_per_epoch);
      report->epoch_distil.push_back(sum_distil / s);
      report->epoch_gpt.push_back(sum_gpt / s);
      report->epoch_pen.push_back(sum_pen / s);
      report->epoch_total.push_back(sum_total / s);
    }
  }
  net.set_parameters(ema.value());
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const PhiNetwork& net, const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto& a = net.architecture();
  binio::write_magic(out, kCheckpointMagic);
  binio::write_pod(out, kCheckpointVersion);
  for (int v : {a.input_dim, a.output_dim, a.hidden1, a.hidden2}) binio::write_pod(out, static_cast<std::uint32_t>(v));
  binio::write_pod(out, static_cast<float>(a.dropout));
  binio::write_pod(out, static_cast<std::uint64_t>(net.parameter_count()));
  binio::write_floats(out, to_float32(net.parameters()));
  binio::write_string(out, config_echo);
  if (!out) throw IoError("write failed: " + path.string());
}

PhiNetwork load_checkpoint(const std::filesystem::path& path, std::string* config_echo) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  binio::expect_magic(in, kCheckpointMagic);
  if (binio::read_pod<std::uint32_t>(in) != kCheckpointVersion) throw ParseError("unsupported checkpoint version");
  PhiArchitecture a;
  a.input_dim = static_cast<int>(binio::read_pod<std::uint32_t>(in));
  a.output_dim = static_cast<int>(binio::read_pod<std::uint32_t>(in));
  a.hidden1 = static_cast<int>(binio::read_pod<std::uint32_t>(in));
  a.hidden2 = static_cast<int>(binio::read_pod<std::uint32_t>(in));
  a.dropout = binio::read_pod<float>(in);
  const auto count = binio::read_pod<std::uint64_t>(in);
  const auto values = binio::read_floats(in, count);
  std::string echo = binio::read_string(in);
  if (config_echo) *config_echo = std::move(echo);
  return PhiNetwork(a, from_float32(values));
}

}  // namespace isearle
