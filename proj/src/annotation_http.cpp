// Eigen first: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include "isearle/annotation.hpp"
#include "isearle/errors.hpp"

#include <httplib.h>

#include <thread>

namespace isearle {

namespace {

using nlohmann::json;

struct HttpError {
  int status;
  std::string kind;
  std::string message;
};

int status_for(const Error& e) {
  if (dynamic_cast<const ConflictError*>(&e)) return 409;
  if (dynamic_cast<const LookupError*>(&e)) return 404;
  if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const ParseError*>(&e))
    return 400;
  return 500;
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, {{"error", {{"kind", kind}, {"message", message}}}}, status);
}

json parse_body(const httplib::Request& req) {
  try {
    auto body = json::parse(req.body);
    if (!body.is_object()) throw HttpError{400, "input_error", "request body must be a JSON object"};
    return body;
  } catch (const json::parse_error& e) {
    throw HttpError{400, "parse_error", std::string("malformed JSON body: ") + e.what()};
  }
}

std::optional<std::uint64_t> optional_version(const json& body) {
  if (!body.contains("version") || body["version"].is_null()) return std::nullopt;
  return body["version"].get<std::uint64_t>();
}

json gallery_json(const Gallery& g) {
  json items = json::array();
  for (const auto& c : g.candidates) items.push_back(c.to_json());
  json out = {{"candidates", items}};
  if (!g.notice.empty()) out["notice"] = g.notice;
  return out;
}

}  // namespace

struct AnnotationService::Impl {
  httplib::Server server;
  std::thread worker;
};

AnnotationService::AnnotationService(AnnotationConfig config, const RetrievalIndex& index, const Backbone& backbone,
                                     Inverter inverter, std::vector<PoolEntry> pool)
    : config_(std::move(config)),
      index_(index),
      backbone_(backbone),
      inverter_(std::move(inverter)),
      pool_(std::move(pool)),
      store_(config_.data_root / "events.jsonl",
             std::unordered_set<std::string>(index.ids().begin(), index.ids().end())),
      impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;

  // Runs `fn` under the store lock with the caller's annotator id, mapping
  // library errors onto HTTP statuses.
  const auto handle = [this](auto fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto auth = req.get_header_value("Authorization");
        if (!auth.starts_with("Bearer ") || auth.size() <= 7)
          throw HttpError{401, "unauthorized", "missing bearer token"};
        std::string annotator = auth.substr(7);
        if (!config_.annotators.empty()) {
          auto it = config_.annotators.find(annotator);
          if (it == config_.annotators.end()) throw HttpError{401, "unauthorized", "unknown bearer token"};
          annotator = it->second;
        }
        std::lock_guard lock(mutex_);
        send_json(res, fn(req, annotator));
      } catch (const HttpError& e) {
        send_error(res, e.status, e.kind, e.message);
      } catch (const Error& e) {
        send_error(res, status_for(e), e.kind(), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "input_error", std::string("bad request field: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  };

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"status", "ok"}}); });

  srv.Get("/next-reference", handle([this](const httplib::Request&, const std::string& annotator) -> json {
            if (auto it = leases_.find(annotator); it != leases_.end() && !store_.reference_consumed(it->second)) {
              const auto& ref = it->second;
              const auto entry = std::find_if(pool_.begin(), pool_.end(), [&](const PoolEntry& p) { return p.image_id == ref; });
              return {{"reference_id", ref},
                      {"supercategory", kSupercategories[static_cast<std::size_t>(entry->supercategory)]}};
            }
            const auto next = supercategory_balance(pool_, store_.completed_per_supercategory(), [&](const std::string& id) {
              if (store_.reference_consumed(id)) return false;
              for (const auto& [who, leased] : leases_)
                if (leased == id && who != annotator) return false;
              return true;
            });
            if (!next) {
              leases_.erase(annotator);
              return {{"end_of_queue", true}};
            }
            leases_[annotator] = next->image_id;
            return {{"reference_id", next->image_id},
                    {"supercategory", kSupercategories[static_cast<std::size_t>(next->supercategory)]}};
          }));

  srv.Get(R"(/gallery/target/([^/]+))", handle([this](const httplib::Request& req, const std::string&) -> json {
            auto out = gallery_json(build_target_gallery(req.matches[1], index_, config_.target_gallery_size,
                                                         config_.dedup_threshold));
            out["reference_id"] = req.matches[1];
            return out;
          }));

  srv.Post("/triplet", handle([this](const httplib::Request& req, const std::string& annotator) -> json {
             const auto body = parse_body(req);
             TripletSubmission t;
             t.reference_id = body.at("reference_id").get<std::string>();
             t.target_id = body.at("target_id").get<std::string>();
             t.shared_concept = body.at("shared_concept").get<std::string>();
             t.relative_caption = body.at("relative_caption").get<std::string>();
             t.caption_rule_confirmed = body.value("caption_rule_confirmed", false);
             if (auto it = leases_.find(annotator); it == leases_.end() || it->second != t.reference_id)
               throw HttpError{409, "conflict", "reference '" + t.reference_id + "' is not the one served to you"};
             const auto entry = std::find_if(pool_.begin(), pool_.end(),
                                             [&](const PoolEntry& p) { return p.image_id == t.reference_id; });
             t.supercategory = entry == pool_.end() ? -1 : entry->supercategory;
             const auto& item = store_.record_triplet(annotator, t);
             leases_.erase(annotator);
             return item.to_json();
           }));

  srv.Post("/skip", handle([this](const httplib::Request& req, const std::string& annotator) -> json {
             const auto ref = parse_body(req).at("reference_id").get<std::string>();
             if (auto it = leases_.find(annotator); it == leases_.end() || it->second != ref)
               throw HttpError{409, "conflict", "reference '" + ref + "' is not the one served to you"};
             store_.record_skip(annotator, ref);
             leases_.erase(annotator);
             return {{"skipped", ref}};
           }));

  srv.Get(R"(/gallery/multigt/([^/]+))", handle([this](const httplib::Request& req, const std::string&) -> json {
            const auto& item = store_.item(req.matches[1]);
            MultiGtQuery draft;
            draft.query_id = item.query_id;
            draft.reference_id = item.reference_id;
            draft.relative_caption = item.relative_caption;
            draft.shared_concept = item.shared_concept;
            draft.target_id = item.target_id;
            auto out = gallery_json(build_multigt_gallery(draft, index_, inverter_, backbone_, config_.model_k,
                                                          config_.visual_k));
            out["query"] = item.to_json();
            return out;
          }));

  srv.Post("/ground-truths", handle([this](const httplib::Request& req, const std::string& annotator) -> json {
             const auto body = parse_body(req);
             return store_
                 .record_ground_truths(annotator, body.at("query_id").get<std::string>(),
                                       body.at("ground_truth_ids").get<std::vector<std::string>>(), optional_version(body))
                 .to_json();
           }));

  srv.Post("/aspect-votes", handle([this](const httplib::Request& req, const std::string& annotator) -> json {
             const auto body = parse_body(req);
             std::set<SemanticAspect> aspects;
             for (const auto& a : body.at("aspects")) {
               const auto parsed = parse_aspect(a.get<std::string>());
               if (!parsed) throw InputError("unknown semantic aspect '" + a.get<std::string>() + "'");
               aspects.insert(*parsed);
             }
             return store_
                 .submit_aspect_votes(annotator, body.at("query_id").get<std::string>(), aspects, optional_version(body))
                 .to_json();
           }));

  srv.Post(R"(/finalize/([^/]+))", handle([this](const httplib::Request& req, const std::string& annotator) -> json {
             return store_.finalize_aspects(annotator, req.matches[1]).to_json();
           }));

  srv.Get("/export", handle([this](const httplib::Request&, const std::string&) -> json {
            return to_json(store_.export_dataset());
          }));
}

AnnotationService::~AnnotationService() { stop(); }

bool AnnotationService::listen() { return impl_->server.listen(config_.host, config_.port); }

int AnnotationService::start_background() {
  const int port = impl_->server.bind_to_any_port(config_.host);
  if (port < 0) throw IoError("cannot bind annotation service on " + config_.host);
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void AnnotationService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace isearle
