#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "isearle/annotation.hpp"
#include "isearle/config.hpp"
#include "isearle/datasets.hpp"
#include "isearle/errors.hpp"
#include "isearle/eval.hpp"
#include "isearle/inversion_net.hpp"
#include "isearle/oti.hpp"
#include "isearle/retrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace isearle;

namespace {

enum Exit { ok = 0, failure = 1, usage = 2, bad_input = 3, io = 4 };

int exit_code_for(const Error& e) {
  if (dynamic_cast<const IoError*>(&e)) return io;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const LookupError*>(&e))
    return bad_input;
  return failure;
}

void print_error(const std::string& kind, const std::string& message) {
  std::cout << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

struct Context {
  fs::path config_path;
  RunConfig config;
  std::string command;

  void load() {
    config = config_path.empty() ? parse_config("") : load_config(config_path);
    spdlog::set_level(spdlog::level::from_str(config.log_level));
  }

  void emit(json result) const {
    std::cout << json{{"command", command}, {"config", config.to_json()}, {"result", std::move(result)}}.dump()
              << std::endl;
  }
};

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw InputError("--k expects positive integers separated by commas, got '" + text + "'");
    }
  }
  if (ks.empty()) throw InputError("--k is empty");
  return ks;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp" || ext == ".webp";
}

// A directory (all images, sorted by name) or a text file with one path per line.
std::vector<fs::path> image_list(const fs::path& source) {
  std::vector<fs::path> paths;
  if (fs::is_directory(source)) {
    for (const auto& entry : fs::directory_iterator(source))
      if (entry.is_regular_file() && is_image_file(entry.path())) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
  } else {
    std::ifstream in(source);
    if (!in) throw IoError("cannot open image list " + source.string());
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) paths.emplace_back(line);
  }
  if (paths.empty()) throw InputError("no images found in " + source.string());
  return paths;
}

// Runs fn(i) for i in [0, n) on `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (unsigned t = 0; t < jobs; ++t)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

ConceptVocabulary vocabulary(const fs::path& path, const Backbone& backbone) {
  return ConceptVocabulary::build(read_vocabulary(path), backbone);
}

// φ always sees unit-normalized image features.
Vector unit_rows_input(const Vector& v) { return EmbeddingVector::unit(v).values; }

json token_json(const std::string& id, const PseudoWordToken& token) {
  return {{"image_id", id}, {"label", token.label}, {"token", std::vector<double>(token.values.begin(), token.values.end())}};
}

ComposedQuery query_from_json(const json& q) {
  ComposedQuery out;
  out.reference_image_id = q.at("reference_image_id").get<std::string>();
  out.relative_caption = q.value("relative_caption", "");
  if (q.contains("second_caption")) out.second_caption = q["second_caption"].get<std::string>();
  if (q.contains("shared_concept")) out.shared_concept = q["shared_concept"].get<std::string>();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("isearle"));

  CLI::App app{"Zero-shot composed image retrieval via textual inversion"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--config", ctx.config_path, "TOML run configuration")->check(CLI::ExistingFile);

  const auto command = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&ctx, name] { ctx.command = name; });
    return sub;
  };

  fs::path images, out, embeddings, vocab_path, phrases_path, tokens_path, phi_path, index_path, image_path,
      query_path, results_path, dataset_path, results_out;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string ks_text = "1,5,10,50", metric = "map", mode = "pseudo", schema_name = "multi_gt", format = "json";
  std::size_t k = 50;
  std::size_t concept_k = 0;
  std::string image_id;

  auto* embed = command("embed-images", "encode images into an embedding manifest");
  embed->add_option("--images", images, "image directory or list file")->required();
  embed->add_option("--out", out, "output manifest")->required();
  embed->add_option("--jobs", jobs, "worker threads");

  auto* invert_oti = command("invert-oti", "optimize one pseudo-word token per image");
  invert_oti->add_option("--images", embeddings, "embedding manifest")->required()->check(CLI::ExistingFile);
  invert_oti->add_option("--vocab", vocab_path, "concept vocabulary")->check(CLI::ExistingFile);
  invert_oti->add_option("--phrases", phrases_path, "phrase bank")->check(CLI::ExistingFile);
  invert_oti->add_option("--out", out, "token store")->required();
  invert_oti->add_option("--jobs", jobs, "worker threads");

  auto* phrase_gen = command("phrase-gen", "populate a phrase bank through the configured LM command");
  phrase_gen->add_option("--vocab", vocab_path, "concept vocabulary")->required()->check(CLI::ExistingFile);
  phrase_gen->add_option("--out", out, "phrase bank")->required();

  auto* concept_assign = command("concept-assign", "top-k vocabulary concepts per image");
  concept_assign->add_option("--embeddings", embeddings, "embedding manifest")->required()->check(CLI::ExistingFile);
  concept_assign->add_option("--vocab", vocab_path, "concept vocabulary")->required()->check(CLI::ExistingFile);
  concept_assign->add_option("--k", concept_k, "concepts per image (default oti.k_concepts)");
  concept_assign->add_option("--out", out, "JSON lines output (stdout when omitted)");

  auto* train = command("train-phi", "distil stored tokens into the inversion network");
  train->add_option("--tokens", tokens_path, "token store")->required()->check(CLI::ExistingFile);
  train->add_option("--embeddings", embeddings, "embedding manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--vocab", vocab_path, "concept vocabulary")->check(CLI::ExistingFile);
  train->add_option("--phrases", phrases_path, "phrase bank")->check(CLI::ExistingFile);
  train->add_option("--out", out, "checkpoint")->required();

  auto* invert = command("invert", "predict the token of one image with a trained network");
  invert->add_option("--phi", phi_path, "checkpoint")->required()->check(CLI::ExistingFile);
  auto* invert_image_opt = invert->add_option("--image", image_path, "image file")->check(CLI::ExistingFile);
  auto* invert_embed_opt = invert->add_option("--embeddings", embeddings, "embedding manifest")->check(CLI::ExistingFile);
  invert->add_option("--id", image_id, "image id in the manifest")->needs(invert_embed_opt);
  invert_image_opt->excludes(invert_embed_opt);
  invert->add_option("--out", out, "token store with the single record");

  auto* build = command("build-index", "normalize a manifest into a retrieval index");
  build->add_option("--embeddings", embeddings, "embedding manifest")->required()->check(CLI::ExistingFile);
  build->add_option("--out", out, "index file")->required();

  auto* search = command("search", "run composed queries against an index");
  search->add_option("--index", index_path, "index file")->required()->check(CLI::ExistingFile);
  search->add_option("--query-json", query_path, "query object or array")->required()->check(CLI::ExistingFile);
  search->add_option("--k", k, "results per query");
  search->add_option("--tokens", tokens_path, "token store (OTI tokens)")->check(CLI::ExistingFile);
  search->add_option("--phi", phi_path, "checkpoint")->check(CLI::ExistingFile);
  search->add_option("--mode", mode, "pseudo, image_only, text_only or image_plus_text")
      ->check(CLI::IsMember({"pseudo", "image_only", "text_only", "image_plus_text"}));
  search->add_option("--results-out", results_out, "results JSON lines for evaluate");

  auto* evaluate_cmd = command("evaluate", "compute retrieval metrics");
  evaluate_cmd->add_option("--results", results_path, "results JSON lines")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--metric", metric, "map or recall")->check(CLI::IsMember({"map", "recall"}));
  evaluate_cmd->add_option("--k", ks_text, "comma separated cutoffs");
  evaluate_cmd->add_option("--format", format, "json or table")->check(CLI::IsMember({"json", "table"}));

  auto* redundancy = command("redundancy", "text-only and image-only recall curves");
  redundancy->add_option("--dataset", dataset_path, "dataset JSON")->required()->check(CLI::ExistingFile);
  redundancy->add_option("--schema", schema_name, "triplet or multi_gt")->check(CLI::IsMember({"triplet", "multi_gt"}));
  redundancy->add_option("--index", index_path, "index file")->required()->check(CLI::ExistingFile);
  redundancy->add_option("--k", ks_text, "comma separated cutoffs");

  auto* validate_cmd = command("validate-dataset", "check a dataset against its schema");
  validate_cmd->add_option("--dataset", dataset_path, "dataset JSON")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--schema", schema_name, "triplet or multi_gt")->check(CLI::IsMember({"triplet", "multi_gt"}));
  validate_cmd->add_option("--index", index_path, "index whose ids every image must belong to")
      ->check(CLI::ExistingFile);

  auto* serve = command("serve-annotation", "run the annotation HTTP service");
  serve->add_option("--index", index_path, "index file (overrides annotation.index)")->check(CLI::ExistingFile);
  serve->add_option("--phi", phi_path, "checkpoint (overrides annotation.phi_checkpoint)")->check(CLI::ExistingFile);
  serve->add_option("--tokens", tokens_path, "token store (overrides annotation.token_store)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    std::cerr << "run with --help for usage" << std::endl;
    return usage;
  }

  try {
    ctx.load();
    const auto backbone = load_backbone(ctx.config.backbone);
    const auto& cfg = ctx.config;
    const auto vocab_or_empty = [&] {
      return vocab_path.empty() ? ConceptVocabulary{} : vocabulary(vocab_path, *backbone);
    };
    const auto bank_or_empty = [&] { return phrases_path.empty() ? PhraseBank{} : PhraseBank::load(phrases_path); };

    if (ctx.command == "embed-images") {
      const auto paths = image_list(images);
      std::vector<Vector> rows(paths.size());
      parallel_for(paths.size(), jobs, [&](std::size_t i) { rows[i] = backbone->encode_image(load_image(paths[i])).values; });
      EmbeddingManifest manifest;
      manifest.dim = backbone->info().embed_dim;
      for (std::size_t i = 0; i < paths.size(); ++i) manifest.append(paths[i].filename().string(), rows[i]);
      write_embedding_manifest(out, manifest);
      ctx.emit({{"images", paths.size()}, {"dim", manifest.dim}, {"out", out}});

    } else if (ctx.command == "invert-oti") {
      const auto manifest = read_embedding_manifest(embeddings);
      const auto vocab = vocab_or_empty();
      const auto bank = bank_or_empty();
      if (cfg.oti.lambda_gpt > 0 && (vocab.size() == 0 || bank.size() == 0))
        throw InputError("oti.lambda_gpt > 0 needs --vocab and --phrases");
      std::vector<TokenRecord> records(manifest.size());
      std::vector<double> final_content(manifest.size());
      parallel_for(manifest.size(), jobs, [&](std::size_t i) {
        OtiConfig oti = cfg.oti;
        oti.seed = image_seed(cfg.oti.seed, manifest.ids[i]);
        const auto result =
            invert_features({manifest.rows.row(static_cast<Eigen::Index>(i)).transpose(), false}, *backbone, vocab, bank, oti);
        records[i] = {manifest.ids[i], result.token.values};
        final_content[i] = result.loss_trace.empty() ? 0.0 : result.loss_trace.back().content;
      });
      write_token_store(out, backbone->info().token_dim, records);
      double mean = 0.0;
      for (double v : final_content) mean += v / static_cast<double>(final_content.size());
      ctx.emit({{"tokens", records.size()}, {"token_dim", backbone->info().token_dim}, {"mean_final_content_loss", mean},
                {"out", out}});

    } else if (ctx.command == "phrase-gen") {
      if (cfg.phrase_gen.command.empty()) throw InputError("phrase_gen.command is not configured");
      const auto concepts = read_vocabulary(vocab_path);
      const auto bank = generate_phrase_bank(concepts, cfg.phrase_gen, run_phrase_command);
      bank.save(out);
      ctx.emit({{"concepts", bank.size()}, {"phrases_per_concept", cfg.phrase_gen.phrases_per_concept}, {"out", out}});

    } else if (ctx.command == "concept-assign") {
      const auto manifest = read_embedding_manifest(embeddings);
      const auto vocab = vocabulary(vocab_path, *backbone);
      std::ofstream file;
      if (!out.empty()) {
        file.open(out);
        if (!file) throw IoError("cannot write " + out.string());
      }
      json all = json::array();
      for (std::size_t i = 0; i < manifest.size(); ++i) {
        const json record = {
            {"image_id", manifest.ids[i]},
            {"concepts", assign_concepts({manifest.rows.row(static_cast<Eigen::Index>(i)).transpose(), false}, vocab,
                                         concept_k ? concept_k : cfg.oti.k_concepts)}};
        if (file.is_open())
          file << record.dump() << '\n';
        else
          all.push_back(record);
      }
      ctx.emit(file.is_open() ? json{{"images", manifest.size()}, {"out", out}} : all);

    } else if (ctx.command == "train-phi") {
      const auto manifest = read_embedding_manifest(embeddings);
      int token_dim = 0;
      const auto records = read_token_store(tokens_path, &token_dim);
      std::unordered_map<std::string, std::size_t> row_of;
      for (std::size_t i = 0; i < manifest.size(); ++i) row_of.emplace(manifest.ids[i], i);
      TokenDataset data;
      data.embeddings.resize(static_cast<Eigen::Index>(records.size()), manifest.dim);
      data.tokens.resize(static_cast<Eigen::Index>(records.size()), token_dim);
      for (std::size_t r = 0; r < records.size(); ++r) {
        const auto it = row_of.find(records[r].image_id);
        if (it == row_of.end()) throw LookupError("token for '" + records[r].image_id + "' has no embedding");
        data.ids.push_back(records[r].image_id);
        const auto row = static_cast<Eigen::Index>(r);
        data.embeddings.row(row) = unit_rows_input(manifest.rows.row(static_cast<Eigen::Index>(it->second)).transpose());
        data.tokens.row(row) = records[r].token;
      }
      const auto vocab = vocab_or_empty();
      const auto bank = bank_or_empty();
      if (cfg.phi.lambda_gpt > 0 && (vocab.size() == 0 || bank.size() == 0))
        throw InputError("phi.lambda_gpt > 0 needs --vocab and --phrases");
      PhiTrainReport report;
      const auto net = train_phi(data, *backbone, bank, vocab, cfg.phi, &report);
      save_checkpoint(out, net, cfg.to_json()["phi"].dump());
      ctx.emit({{"records", data.size()},
                {"steps", report.steps},
                {"epoch_distil", report.epoch_distil},
                {"epoch_total", report.epoch_total},
                {"out", out}});

    } else if (ctx.command == "invert") {
      const auto net = load_checkpoint(phi_path);
      Vector features;
      std::string id;
      if (!image_path.empty()) {
        features = backbone->encode_image(load_image(image_path)).values;
        id = image_path.filename().string();
      } else if (!embeddings.empty()) {
        if (image_id.empty()) throw InputError("--embeddings needs --id");
        const auto index = RetrievalIndex::build(read_embedding_manifest(embeddings));
        features = index.row(image_id);
        id = image_id;
      } else {
        throw InputError("invert needs --image or --embeddings with --id");
      }
      const auto token = phi_forward({unit_rows_input(features), true}, net);
      if (!out.empty()) write_token_store(out, static_cast<int>(token.values.size()), {{id, token.values}});
      ctx.emit(token_json(id, token));

    } else if (ctx.command == "build-index") {
      const auto index = RetrievalIndex::build(read_embedding_manifest(embeddings));
      index.save(out);
      ctx.emit({{"size", index.size()}, {"dim", index.dim()}, {"digest", index.digest()}, {"out", out}});

    } else if (ctx.command == "search") {
      const auto index = RetrievalIndex::load(index_path);
      std::ifstream qin(query_path);
      json doc = json::parse(qin);
      if (!doc.is_array()) doc = json::array({doc});
      std::unordered_map<std::string, Vector> stored;
      if (!tokens_path.empty())
        for (auto& r : read_token_store(tokens_path)) stored.emplace(r.image_id, std::move(r.token));
      std::optional<PhiNetwork> net;
      if (!phi_path.empty()) net = load_checkpoint(phi_path);
      if (mode == "pseudo" && stored.empty() && !net) throw InputError("--mode pseudo needs --tokens or --phi");

      json out_queries = json::array();
      std::vector<QueryResult> results;
      for (std::size_t qi = 0; qi < doc.size(); ++qi) {
        const auto& q = doc[qi];
        const auto query = query_from_json(q);
        EmbeddingVector features;
        if (mode == "pseudo") {
          PseudoWordToken token;
          token.label = pseudo_word_label(0);
          if (auto it = stored.find(query.reference_image_id); it != stored.end())
            token.values = it->second;
          else if (net)
            token = phi_forward({index.row(query.reference_image_id), true}, *net);
          else
            throw LookupError("no stored token for '" + query.reference_image_id + "'");
          if (q.contains("template"))
            features = backbone->encode_text(fill_template(q["template"].get<std::string>(), token.label), inject(token))
                           .as_unit();
          else if (q.contains("objects"))
            features = compose_object_query(token, q["objects"].get<std::vector<std::string>>(), *backbone);
          else if (q.contains("domain"))
            features = compose_domain_query(token, q["domain"].get<std::string>(), *backbone);
          else
            features = compose_cir_query(query, token, *backbone);
        } else {
          std::optional<Vector> reference;
          if (index.position(query.reference_image_id)) reference = index.row(query.reference_image_id);
          features = baseline_query(*parse_baseline_mode(mode), query, reference, *backbone);
        }
        const auto hits = index.search(features, std::min(k, index.size()));
        json hit_json = json::array();
        QueryResult result;
        result.query_id = q.value("query_id", std::to_string(qi));
        for (const auto& h : hits) {
          hit_json.push_back({{"id", h.id}, {"score", h.score}});
          result.ranked_ids.push_back(h.id);
        }
        if (q.contains("ground_truth_ids"))
          for (const auto& g : q["ground_truth_ids"]) result.ground_truths.insert(g.get<std::string>());
        else if (q.contains("target_id"))
          result.ground_truths.insert(q["target_id"].get<std::string>());
        if (q.contains("semantic_aspects"))
          for (const auto& a : q["semantic_aspects"])
            if (auto parsed = parse_aspect(a.get<std::string>())) result.aspects.insert(*parsed);
        out_queries.push_back({{"query_id", result.query_id}, {"hits", hit_json}});
        results.push_back(std::move(result));
      }
      if (!results_out.empty()) write_results(results_out, results);
      ctx.emit({{"queries", out_queries}});

    } else if (ctx.command == "evaluate") {
      const auto results = read_results(results_path);
      const auto report = isearle::evaluate(results, metric, parse_ks(ks_text));
      if (format == "table")
        std::cout << report.to_table();
      else
        ctx.emit(report.to_json());

    } else if (ctx.command == "redundancy") {
      const auto index = RetrievalIndex::load(index_path);
      const auto dataset = load_dataset(dataset_path, *parse_schema(schema_name));
      const auto ks = parse_ks(ks_text);
      const auto curves = modality_redundancy(single_gt_view(dataset), index, *backbone, ks);
      ctx.emit({{"k", curves.ks}, {"text_to_image", curves.text_to_image}, {"image_to_image", curves.image_to_image}});

    } else if (ctx.command == "validate-dataset") {
      std::optional<std::unordered_set<std::string>> known;
      if (!index_path.empty()) {
        const auto index = RetrievalIndex::load(index_path);
        known.emplace(index.ids().begin(), index.ids().end());
      }
      const auto dataset = load_dataset(dataset_path, *parse_schema(schema_name), known ? &*known : nullptr);
      json result = {{"valid", true}, {"size", dataset.size()}};
      if (dataset.schema == DatasetSchema::multi_gt) result["stats"] = dataset_stats(dataset).to_json();
      ctx.emit(result);

    } else if (ctx.command == "serve-annotation") {
      AnnotationConfig acfg = cfg.annotation;
      if (!index_path.empty()) acfg.index_path = index_path;
      if (!phi_path.empty()) acfg.phi_checkpoint = phi_path;
      if (!tokens_path.empty()) acfg.token_store = tokens_path;
      if (acfg.index_path.empty()) throw InputError("serve-annotation needs an index");
      const auto index = RetrievalIndex::load(acfg.index_path);
      std::optional<PhiNetwork> net;
      std::unordered_map<std::string, Vector> stored;
      if (!acfg.phi_checkpoint.empty())
        net = load_checkpoint(acfg.phi_checkpoint);
      else if (!acfg.token_store.empty())
        for (auto& r : read_token_store(acfg.token_store)) stored.emplace(r.image_id, std::move(r.token));
      else
        throw InputError("serve-annotation needs a phi checkpoint or a token store");
      Inverter inverter = [&](const std::string& id) -> PseudoWordToken {
        if (net) return phi_forward({index.row(id), true}, *net);
        const auto it = stored.find(id);
        if (it == stored.end()) throw LookupError("no stored token for '" + id + "'");
        return {it->second, pseudo_word_label(0)};
      };
      const auto categories = assign_supercategories(index, *backbone);
      std::vector<PoolEntry> pool;
      for (std::size_t i = 0; i < index.size(); ++i) pool.push_back({index.ids()[i], categories[i]});
      fs::create_directories(acfg.data_root);
      AnnotationService service(acfg, index, *backbone, inverter, pool);
      ctx.emit({{"listening", acfg.host + ":" + std::to_string(acfg.port)}, {"images", index.size()}});
      if (!service.listen()) throw IoError("cannot listen on " + acfg.host + ":" + std::to_string(acfg.port));
    }
    return ok;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return exit_code_for(e);
  } catch (const json::exception& e) {
    print_error("parse_error", e.what());
    return bad_input;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return failure;
  }
}
