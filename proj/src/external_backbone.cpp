// Backbone served by a child process over a JSON-lines protocol on
// stdin/stdout. One request per line, one response per line; a response with
// an "error" key is raised as InputError.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <mutex>

#include <json.hpp>

#include "isearle/backbone.hpp"
#include "isearle/errors.hpp"

namespace isearle {

namespace {

using nlohmann::json;

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json vector_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

class ExternalBackbone final : public Backbone {
 public:
  explicit ExternalBackbone(const std::string& command) {
    signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw IoError("pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw IoError("fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[1]);
      close(from_child[0]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    out_ = fdopen(to_child[1], "w");
    in_ = fdopen(from_child[0], "r");
    if (!out_ || !in_) throw IoError("fdopen() failed");

    const json reply = call({{"op", "info"}});
    info_.embed_dim = reply.at("embed_dim").get<int>();
    info_.token_dim = reply.at("token_dim").get<int>();
    info_.context_length = reply.at("context_length").get<int>();
    info_.model_id = reply.at("model_id").get<std::string>();
    token_std_ = reply.at("token_embedding_std").get<double>();
    digest_ = reply.at("parameter_digest").get<std::uint64_t>();
  }

  ~ExternalBackbone() override {
    if (out_) fclose(out_);
    if (in_) fclose(in_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  const BackboneInfo& info() const override { return info_; }

  EmbeddingVector encode_image(const Image& image) const override {
    // The bridge receives pixels already padded, resized and normalized.
    const auto chw = preprocess_target_pad(image, 224);
    const json reply = call({{"op", "encode_image"}, {"size", 224}, {"pixels", chw}});
    Vector values = vector_from_json(reply.at("features"));
    if (values.size() != info_.embed_dim) throw InvariantError("image encoder width mismatch");
    return {std::move(values), false};
  }

  TextEncoding encode_text_with_grad(std::string_view prompt,
                                     const Injections& injections) const override {
    json inj = json::object();
    for (const auto& [label, values] : injections) inj[label] = vector_to_json(values);
    json request = {{"op", "encode_text"}, {"prompt", std::string(prompt)}, {"injections", inj}};
    const json reply = call(request);
    TextEncoding result;
    result.features = {vector_from_json(reply.at("features")), false};
    result.backward = [this, request](const Vector& grad_features) {
      json vjp = request;
      vjp["op"] = "text_vjp";
      vjp["grad_features"] = vector_to_json(grad_features);
      const json reply = call(vjp);
      Injections grads;
      for (const auto& [label, values] : reply.at("grads").items())
        grads.emplace(label, vector_from_json(values));
      return grads;
    };
    return result;
  }

  std::vector<std::string> tokenize(std::string_view prompt) const override {
    return call({{"op", "tokenize"}, {"prompt", std::string(prompt)}})
        .at("tokens")
        .get<std::vector<std::string>>();
  }

  Vector token_embedding(std::string_view word) const override {
    return vector_from_json(call({{"op", "token_embedding"}, {"word", std::string(word)}}).at("values"));
  }

  double token_embedding_std() const override { return token_std_; }
  std::uint64_t parameter_digest() const override { return digest_; }

 private:
  json call(const json& request) const {
    std::lock_guard lock(mutex_);
    const std::string line = request.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), out_) != line.size() || std::fflush(out_) != 0)
      throw IoError("backbone bridge: write failed");
    std::string response;
    char buf[65536];
    while (std::fgets(buf, sizeof(buf), in_)) {
      response += buf;
      if (!response.empty() && response.back() == '\n') break;
    }
    if (response.empty()) throw IoError("backbone bridge: process closed its output");
    json reply = json::parse(response);
    if (reply.contains("error")) {
      const auto kind = reply.value("kind", "input_error");
      const auto message = reply["error"].get<std::string>();
      if (kind == "truncation_error") throw TruncationError(message);
      throw InputError(message);
    }
    return reply;
  }

  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  FILE* in_ = nullptr;
  mutable std::mutex mutex_;
  BackboneInfo info_;
  double token_std_ = 0.0;
  std::uint64_t digest_ = 0;
};

}  // namespace

std::unique_ptr<Backbone> load_backbone(const BackboneConfig& config) {
  if (config.model_ref == "stub") return std::make_unique<StubBackbone>(config.stub);
  constexpr std::string_view kExternal = "external:";
  if (config.model_ref.starts_with(kExternal))
    return std::make_unique<ExternalBackbone>(config.model_ref.substr(kExternal.size()));
  throw InputError("unknown backbone.model_ref '" + config.model_ref + "'");
}

}  // namespace isearle
