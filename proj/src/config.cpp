#include "isearle/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "isearle/errors.hpp"

namespace isearle {

namespace {

// Reads typed keys out of one table and remembers which keys were consumed so
// leftovers can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <class T>
  bool read(std::string_view key, T& out) {
    seen_.insert(std::string(key));
    if (!table_) return false;
    const auto* node = table_->get(key);
    if (!node) return false;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value_exact<bool>()) return out = *v, true;
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value_exact<std::int64_t>()) {
        if (*v < 0 && std::is_unsigned_v<T>) fail(key, "must be nonnegative");
        return out = static_cast<T>(*v), true;
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) return out = *v, true;
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node->value_exact<std::string>()) return out = *v, true;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (auto v = node->value_exact<std::string>()) return out = *v, true;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (const auto* arr = node->as_array()) {
        std::vector<std::string> items;
        for (const auto& item : *arr) {
          auto s = item.value_exact<std::string>();
          if (!s) fail(key, "must be an array of strings");
          items.push_back(*s);
        }
        return out = std::move(items), true;
      }
    }
    fail(key, "has the wrong type");
    return false;
  }

  const toml::table* subtable(std::string_view key) {
    seen_.insert(std::string(key));
    if (!table_) return nullptr;
    const auto* node = table_->get(key);
    if (node && !node->is_table()) fail(key, "must be a table");
    return node ? node->as_table() : nullptr;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_)
      if (!seen_.contains(std::string(key.str())))
        throw ValidationError("config: unknown key '" + qualified(key.str()) + "'");
  }

 private:
  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    throw ValidationError("config: '" + qualified(key) + "' " + what);
  }
  std::string qualified(std::string_view key) const { return name_.empty() ? std::string(key) : name_ + "." + std::string(key); }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source.string());
  } catch (const toml::parse_error& e) {
    throw ParseError("config: " + std::string(e.description()), e.source().begin.line);
  }
  RunConfig cfg;
  cfg.source = source;
  Section top(&root, "");
  top.read("seed", cfg.seed);
  top.read("device", cfg.device);
  top.read("log_level", cfg.log_level);

  Section backbone(top.subtable("backbone"), "backbone");
  auto& stub = cfg.backbone.stub;
  backbone.read("model", cfg.backbone.model_ref);
  backbone.read("embed_dim", stub.embed_dim);
  backbone.read("token_dim", stub.token_dim);
  backbone.read("hidden_dim", stub.hidden_dim);
  backbone.read("context_length", stub.context_length);
  backbone.read("image_size", stub.image_size);
  backbone.read("seed", stub.seed);
  backbone.read("token_std", stub.token_std);
  backbone.read("output_scale", stub.output_scale);
  backbone.finish();

  Section oti(top.subtable("oti"), "oti");
  auto& o = cfg.oti;
  oti.read("iterations", o.iterations);
  oti.read("learning_rate", o.learning_rate);
  oti.read("lambda_content", o.lambda_content);
  oti.read("lambda_gpt", o.lambda_gpt);
  oti.read("noise_std", o.noise_std);
  oti.read("weight_decay", o.weight_decay);
  oti.read("ema_decay", o.ema_decay);
  oti.read("k_concepts", o.k_concepts);
  oti.read("templates", o.templates);
  o.seed = cfg.seed;
  oti.read("seed", o.seed);
  oti.finish();

  Section phi(top.subtable("phi"), "phi");
  auto& p = cfg.phi;
  phi.read("epochs", p.epochs);
  phi.read("learning_rate", p.learning_rate);
  phi.read("batch_size", p.batch_size);
  phi.read("lambda_distil", p.lambda_distil);
  phi.read("lambda_gpt", p.lambda_gpt);
  phi.read("lambda_pen", p.lambda_pen);
  phi.read("temperature", p.temperature);
  phi.read("hard_fraction", p.hard_fraction);
  phi.read("cluster_count", p.cluster_count);
  phi.read("weight_decay", p.weight_decay);
  phi.read("ema_decay", p.ema_decay);
  phi.read("k_concepts", p.k_concepts);
  phi.read("hidden_dim", p.hidden_dim);
  phi.read("dropout", p.dropout);
  p.seed = cfg.seed;
  phi.read("seed", p.seed);
  phi.finish();

  Section gen(top.subtable("phrase_gen"), "phrase_gen");
  gen.read("phrases_per_concept", cfg.phrase_gen.phrases_per_concept);
  gen.read("temperature", cfg.phrase_gen.temperature);
  gen.read("max_tokens", cfg.phrase_gen.max_tokens);
  gen.read("command", cfg.phrase_gen.command);
  gen.finish();

  Section ann(top.subtable("annotation"), "annotation");
  auto& a = cfg.annotation;
  ann.read("host", a.host);
  ann.read("port", a.port);
  ann.read("data_root", a.data_root);
  ann.read("index", a.index_path);
  ann.read("phi_checkpoint", a.phi_checkpoint);
  ann.read("token_store", a.token_store);
  ann.read("dedup_threshold", a.dedup_threshold);
  ann.read("target_gallery_size", a.target_gallery_size);
  ann.read("model_k", a.model_k);
  ann.read("visual_k", a.visual_k);
  if (const auto* annotators = ann.subtable("annotators")) {
    for (const auto& [token, node] : *annotators) {
      auto id = node.value_exact<std::string>();
      if (!id) throw ValidationError("config: annotation.annotators values must be strings");
      a.annotators[std::string(token.str())] = *id;
    }
  }
  ann.finish();
  top.finish();

  static const std::set<std::string> levels = {"trace", "debug", "info", "warn", "error", "critical", "off"};
  if (!levels.contains(cfg.log_level)) throw ValidationError("config: unknown log_level '" + cfg.log_level + "'");
  if (a.dedup_threshold < -1.0 || a.dedup_threshold > 1.0)
    throw ValidationError("config: annotation.dedup_threshold must be in [-1, 1]");
  try {
    cfg.oti.validate();
    cfg.phi.validate();
  } catch (const InputError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

nlohmann::json RunConfig::to_json() const {
  const auto& s = backbone.stub;
  nlohmann::json annotators = nlohmann::json::object();
  for (const auto& [token, id] : annotation.annotators) annotators[id] = "<redacted>";
  return {
      {"source", source.string()},
      {"seed", seed},
      {"device", device},
      {"log_level", log_level},
      {"backbone",
       {{"model", backbone.model_ref}, {"embed_dim", s.embed_dim}, {"token_dim", s.token_dim},
        {"hidden_dim", s.hidden_dim}, {"context_length", s.context_length}, {"image_size", s.image_size},
        {"seed", s.seed}, {"token_std", s.token_std}, {"output_scale", s.output_scale}}},
      {"oti",
       {{"iterations", oti.iterations}, {"learning_rate", oti.learning_rate}, {"lambda_content", oti.lambda_content},
        {"lambda_gpt", oti.lambda_gpt}, {"noise_std", oti.noise_std}, {"weight_decay", oti.weight_decay},
        {"ema_decay", oti.ema_decay}, {"k_concepts", oti.k_concepts}, {"templates", oti.templates},
        {"seed", oti.seed}}},
      {"phi",
       {{"epochs", phi.epochs}, {"learning_rate", phi.learning_rate}, {"batch_size", phi.batch_size},
        {"lambda_distil", phi.lambda_distil}, {"lambda_gpt", phi.lambda_gpt}, {"lambda_pen", phi.lambda_pen},
        {"temperature", phi.temperature}, {"hard_fraction", phi.hard_fraction}, {"cluster_count", phi.cluster_count},
        {"weight_decay", phi.weight_decay}, {"ema_decay", phi.ema_decay}, {"k_concepts", phi.k_concepts},
        {"hidden_dim", phi.hidden_dim}, {"dropout", phi.dropout}, {"seed", phi.seed}}},
      {"phrase_gen",
       {{"phrases_per_concept", phrase_gen.phrases_per_concept}, {"temperature", phrase_gen.temperature},
        {"max_tokens", phrase_gen.max_tokens}, {"command", phrase_gen.command}}},
      {"annotation",
       {{"host", annotation.host}, {"port", annotation.port}, {"data_root", annotation.data_root.string()},
        {"index", annotation.index_path.string()}, {"phi_checkpoint", annotation.phi_checkpoint.string()},
        {"token_store", annotation.token_store.string()}, {"dedup_threshold", annotation.dedup_threshold},
        {"target_gallery_size", annotation.target_gallery_size}, {"model_k", annotation.model_k},
        {"visual_k", annotation.visual_k}, {"annotators", annotators}}},
  };
}

}  // namespace isearle
