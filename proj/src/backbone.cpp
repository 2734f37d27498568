#include "isearle/backbone.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <memory>

#include "isearle/errors.hpp"
#include "isearle/random.hpp"

namespace isearle {

namespace {

constexpr std::string_view kBeginToken = "<|startoftext|>";
constexpr std::string_view kEndToken = "<|endoftext|>";

// CLIP channel statistics.
constexpr float kMean[3] = {0.48145466f, 0.4578275f, 0.40821073f};
constexpr float kStd[3] = {0.26862954f, 0.26130258f, 0.27577711f};

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

cv::Mat to_mat(const Image& image) {
  cv::Mat mat(image.height, image.width, CV_32FC3);
  std::memcpy(mat.data, image.rgb.data(), image.rgb.size() * sizeof(float));
  return mat;
}

Image from_mat(const cv::Mat& mat) {
  Image image;
  image.width = mat.cols;
  image.height = mat.rows;
  image.rgb.resize(static_cast<std::size_t>(mat.cols) * mat.rows * 3);
  cv::Mat contiguous = mat.isContinuous() ? mat : mat.clone();
  std::memcpy(image.rgb.data(), contiguous.data, image.rgb.size() * sizeof(float));
  return image;
}

}  // namespace

EmbeddingVector EmbeddingVector::unit(const Vector& v) { return {isearle::normalized(v), true}; }

std::string pseudo_word_label(int index) { return "<|pw" + std::to_string(index) + "|>"; }

bool is_pseudo_word_label(std::string_view token) {
  if (token.size() < 7 || !token.starts_with("<|pw") || !token.ends_with("|>")) return false;
  const auto digits = token.substr(4, token.size() - 6);
  return !digits.empty() &&
         std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); });
}

Injections inject(const PseudoWordToken& token) { return {{token.label, token.values}}; }

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("undecodable image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  return from_mat(rgb);
}

void save_image(const Image& image, const std::filesystem::path& path) {
  cv::Mat rgb = to_mat(image);
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bgr.convertTo(bgr, CV_8UC3, 255.0);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image: " + path.string());
}

std::vector<float> preprocess_target_pad(const Image& image, int size, double target_ratio) {
  if (image.width <= 0 || image.height <= 0) throw InputError("empty image");
  cv::Mat mat = to_mat(image);
  const int w = image.width;
  const int h = image.height;
  const double ratio = static_cast<double>(std::max(w, h)) / std::min(w, h);
  if (ratio >= target_ratio) {
    const double scaled = std::max(w, h) / target_ratio;
    const int hp = std::max(static_cast<int>((scaled - w) / 2), 0);
    const int vp = std::max(static_cast<int>((scaled - h) / 2), 0);
    cv::copyMakeBorder(mat, mat, vp, vp, hp, hp, cv::BORDER_CONSTANT, cv::Scalar(0, 0, 0));
  }
  // Resize the short side, then center crop.
  const double scale = static_cast<double>(size) / std::min(mat.cols, mat.rows);
  const int rw = std::max(size, static_cast<int>(std::lround(mat.cols * scale)));
  const int rh = std::max(size, static_cast<int>(std::lround(mat.rows * scale)));
  cv::Mat resized;
  cv::resize(mat, resized, cv::Size(rw, rh), 0, 0, cv::INTER_CUBIC);
  const int x0 = (rw - size) / 2;
  const int y0 = (rh - size) / 2;
  cv::Mat crop = resized(cv::Rect(x0, y0, size, size));

  std::vector<float> chw(static_cast<std::size_t>(3) * size * size);
  for (int y = 0; y < size; ++y) {
    const auto* row = crop.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(row[x][c], 0.0f, 1.0f);
        chw[(static_cast<std::size_t>(c) * size + y) * size + x] = (v - kMean[c]) / kStd[c];
      }
  }
  return chw;
}

EmbeddingVector Backbone::encode_text(std::string_view prompt, const Injections& injections) const {
  return encode_text_with_grad(prompt, injections).features;
}

StubBackbone::StubBackbone(StubBackboneOptions options) : options_(options) {
  if (options_.embed_dim <= 0 || options_.token_dim <= 0 || options_.hidden_dim <= 0 ||
      options_.context_length < 2 || options_.image_size <= 0)
    throw InputError("stub backbone: dimensions must be positive");
  info_.embed_dim = options_.embed_dim;
  info_.token_dim = options_.token_dim;
  info_.context_length = options_.context_length;
  info_.model_id = "stub-d" + std::to_string(options_.embed_dim) + "-w" +
                   std::to_string(options_.token_dim) + "-s" + std::to_string(options_.seed);

  Rng rng(options_.seed);
  const double input_std = options_.token_std * std::sqrt(1.25);
  const auto h = options_.hidden_dim;
  token_in_ = gaussian_matrix(rng, h, options_.token_dim, 1.0 / (std::sqrt(options_.token_dim) * input_std));
  token_bias_ = gaussian_vector(rng, h, 0.1);
  mix_ = gaussian_matrix(rng, h, h, 2.5 / std::sqrt(h));
  mix_bias_ = gaussian_vector(rng, h, 0.1);
  out_ = gaussian_matrix(rng, options_.embed_dim, h, 1.0 / std::sqrt(h));
  const int pixels = 3 * options_.image_size * options_.image_size;
  image_proj_ = gaussian_matrix(rng, options_.embed_dim, pixels, 1.0 / std::sqrt(pixels));
}

std::vector<std::string> StubBackbone::tokenize(std::string_view prompt) const {
  std::vector<std::string> tokens{std::string(kBeginToken)};
  std::size_t i = 0;
  while (i < prompt.size()) {
    const unsigned char c = prompt[i];
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (prompt.substr(i).starts_with("<|pw")) {
      const auto close = prompt.find("|>", i);
      if (close != std::string_view::npos && is_pseudo_word_label(prompt.substr(i, close + 2 - i))) {
        tokens.emplace_back(prompt.substr(i, close + 2 - i));
        i = close + 2;
        continue;
      }
    }
    if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      std::string word;
      while (i < prompt.size()) {
        const unsigned char d = prompt[i];
        if (!(std::isalnum(d) || d == '\'' || d >= 0x80)) break;
        word.push_back(static_cast<char>(std::tolower(d)));
        ++i;
      }
      tokens.push_back(std::move(word));
      continue;
    }
    tokens.emplace_back(1, static_cast<char>(c));
    ++i;
  }
  tokens.emplace_back(kEndToken);
  return tokens;
}

Vector StubBackbone::word_vector(std::string_view token) const {
  Rng rng(stable_hash(token, options_.seed));
  return gaussian_vector(rng, options_.token_dim, options_.token_std);
}

Vector StubBackbone::position_vector(std::size_t position) const {
  Rng rng(stable_hash("#position", options_.seed + 1000003ULL * (position + 1)));
  return gaussian_vector(rng, options_.token_dim, 0.5 * options_.token_std);
}

Vector StubBackbone::token_embedding(std::string_view word) const {
  const auto tokens = tokenize(word);
  if (tokens.size() != 3) throw InputError("not a single-token word: '" + std::string(word) + "'");
  if (is_pseudo_word_label(tokens[1])) throw InputError("pseudo-word labels have no word embedding");
  return word_vector(tokens[1]);
}

TextEncoding StubBackbone::encode_text_with_grad(std::string_view prompt,
                                                 const Injections& injections) const {
  const auto tokens = tokenize(prompt);
  if (static_cast<int>(tokens.size()) > options_.context_length)
    throw TruncationError("prompt has " + std::to_string(tokens.size()) +
                          " tokens, context length is " + std::to_string(options_.context_length));

  const auto n = static_cast<Eigen::Index>(tokens.size());
  const auto h = options_.hidden_dim;
  Matrix activations(n, h);
  std::vector<std::string> slot_labels(tokens.size());
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    Vector embedding;
    if (is_pseudo_word_label(tokens[p])) {
      const auto it = injections.find(tokens[p]);
      if (it == injections.end()) throw InputError("no injection for pseudo-word " + tokens[p]);
      if (it->second.size() != options_.token_dim)
        throw InputError("injected token has wrong width for " + tokens[p]);
      embedding = it->second;
      slot_labels[p] = tokens[p];
    } else {
      embedding = word_vector(tokens[p]);
    }
    const Vector pre = token_in_ * (embedding + position_vector(p)) + token_bias_;
    activations.row(static_cast<Eigen::Index>(p)) = pre.array().tanh().matrix().transpose();
  }
  const Vector pooled = activations.colwise().mean().transpose();
  const Vector mixed = (mix_ * pooled + mix_bias_).array().tanh().matrix();
  Vector features = options_.output_scale * (out_ * mixed);

  auto cache = std::make_shared<std::pair<Matrix, Vector>>(std::move(activations), mixed);
  auto labels = std::make_shared<std::vector<std::string>>(std::move(slot_labels));
  TextEncoding result;
  result.features = {std::move(features), false};
  result.backward = [this, cache, labels, n](const Vector& grad_features) {
    if (grad_features.size() != options_.embed_dim) throw InputError("gradient has wrong width");
    const auto& [acts, mix] = *cache;
    const Vector grad_mixed = options_.output_scale * (out_.transpose() * grad_features);
    const Vector grad_mix_pre = grad_mixed.cwiseProduct((1.0 - mix.array().square()).matrix());
    const Vector grad_pooled = mix_.transpose() * grad_mix_pre / static_cast<double>(n);
    Injections grads;
    for (std::size_t p = 0; p < labels->size(); ++p) {
      const auto& label = (*labels)[p];
      if (label.empty()) continue;
      const Vector a = acts.row(static_cast<Eigen::Index>(p)).transpose();
      const Vector grad_pre = grad_pooled.cwiseProduct((1.0 - a.array().square()).matrix());
      Vector g = token_in_.transpose() * grad_pre;
      auto [it, inserted] = grads.try_emplace(label, g);
      if (!inserted) it->second += g;
    }
    return grads;
  };
  return result;
}

EmbeddingVector StubBackbone::encode_image(const Image& image) const {
  const auto chw = preprocess_target_pad(image, options_.image_size);
  Vector pixels(static_cast<Eigen::Index>(chw.size()));
  for (std::size_t i = 0; i < chw.size(); ++i) pixels[static_cast<Eigen::Index>(i)] = chw[i];
  Vector values = image_proj_ * pixels;
  if (values.size() != info_.embed_dim) throw InvariantError("image encoder width mismatch");
  return {std::move(values), false};
}

std::uint64_t StubBackbone::parameter_digest() const {
  std::uint64_t h = options_.seed;
  const auto mix_in = [&h](const double* data, Eigen::Index n) {
    h = stable_hash(std::string_view(reinterpret_cast<const char*>(data),
                                     static_cast<std::size_t>(n) * sizeof(double)),
                    h);
  };
  mix_in(token_in_.data(), token_in_.size());
  mix_in(token_bias_.data(), token_bias_.size());
  mix_in(mix_.data(), mix_.size());
  mix_in(mix_bias_.data(), mix_bias_.size());
  mix_in(out_.data(), out_.size());
  mix_in(image_proj_.data(), image_proj_.size());
  return h;
}

}  // namespace isearle
