#include "cotprobe/modelio.hpp"

#include <chrono>
#include <thread>

#include "cotprobe/format.hpp"
#include "cotprobe/seeding.hpp"
#include "httplib.h"

namespace cotprobe {

using nlohmann::json;

std::string_view to_string(PositionIdMap m) {
  switch (m) {
    case PositionIdMap::identity: return "identity";
    case PositionIdMap::stretch_2p5x: return "stretch_2p5x";
    case PositionIdMap::random_gaps_1to5: return "random_gaps_1to5";
  }
  return "?";
}

std::optional<PositionIdMap> position_id_map_from_string(std::string_view s) {
  for (auto m : {PositionIdMap::identity, PositionIdMap::stretch_2p5x, PositionIdMap::random_gaps_1to5})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

std::string to_string(const HeadId& h) { return "L" + std::to_string(h.layer) + "H" + std::to_string(h.head); }

std::string_view to_string(InterventionKind k) {
  switch (k) {
    case InterventionKind::zero_ablate: return "zero_ablate";
    case InterventionKind::mean_ablate: return "mean_ablate";
    case InterventionKind::patch_from_ordered: return "patch_from_ordered";
  }
  return "?";
}

std::optional<InterventionKind> intervention_kind_from_string(std::string_view s) {
  for (auto k : {InterventionKind::zero_ablate, InterventionKind::mean_ablate, InterventionKind::patch_from_ordered})
    if (to_string(k) == s) return k;
  if (s == "zero") return InterventionKind::zero_ablate;
  if (s == "mean") return InterventionKind::mean_ablate;
  return std::nullopt;
}

std::string_view to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::attention_mass: return "attention_mass";
    case ScoreKind::prefix_match: return "prefix_match";
    case ScoreKind::copy_score: return "copy_score";
    case ScoreKind::logit_recovery: return "logit_recovery";
  }
  return "?";
}

// ---- ModelBackend ------------------------------------------------------------

std::string ModelBackend::generate(const GenerateRequest& req) {
  if (req.max_new_tokens < 1) throw RequestRejected("max_new_tokens must be at least 1");
  std::shared_lock lock(instance_mutex_);
  ++generation_calls_;
  ++total_calls_;
  return do_generate(req);
}

std::vector<std::string> ModelBackend::tokenize(std::string_view text) {
  std::shared_lock lock(instance_mutex_);
  ++total_calls_;
  return do_tokenize(text);
}

AttentionMassResult ModelBackend::attention_mass(const std::vector<AttentionItem>& items) {
  std::unique_lock lock(instance_mutex_);
  ++total_calls_;
  return do_attention_mass(items);
}

std::string ModelBackend::generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) {
  if (req.max_new_tokens < 1) throw RequestRejected("max_new_tokens must be at least 1");
  if (spec.kind == InterventionKind::patch_from_ordered)
    throw RequestRejected("patch_from_ordered is served by patch_and_score, not ablate_generate");
  validate_heads(spec.heads);
  std::unique_lock lock(instance_mutex_);
  ++generation_calls_;
  ++total_calls_;
  return do_generate_with_intervention(req, spec);
}

PatchResult ModelBackend::patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                          const std::vector<HeadId>& heads, const std::string& gold_token) {
  validate_heads(heads);
  if (gold_token.empty()) throw RequestRejected("gold_token must be nonempty");
  std::unique_lock lock(instance_mutex_);
  ++generation_calls_;
  ++total_calls_;
  return do_patch_and_score(ordered_prompt, shuffled_prompt, heads, gold_token);
}

InductionScores ModelBackend::induction_scores(int K, int N, std::uint64_t seed) {
  if (K < 1 || N < 1) throw RequestRejected("induction: K and N must be positive");
  std::unique_lock lock(instance_mutex_);
  ++total_calls_;
  return do_induction_scores(K, N, seed);
}

ModelInfo ModelBackend::model_info() {
  std::lock_guard lock(info_mutex_);
  if (!info_) {
    info_ = do_model_info();
    ++total_calls_;
  }
  return *info_;
}

void ModelBackend::validate_heads(const std::vector<HeadId>& heads) {
  if (heads.empty()) throw RequestRejected("intervention head set is empty; K = 0 is plain generate");
  const auto info = model_info();
  for (const auto& h : heads)
    if (!info.valid_head(h)) throw RequestRejected("head " + to_string(h) + " outside the model architecture");
}

// ---- wire encoding -----------------------------------------------------------

namespace wire {

json to_json(const GenerateRequest& req) {
  json j = {{"question", req.question}, {"prefix", req.injected_prefix}, {"max_new_tokens", req.max_new_tokens}};
  if (!req.few_shot.empty()) {
    json shots = json::array();
    for (const auto& s : req.few_shot) shots.push_back({{"question", s.question}, {"completion", s.completion}});
    j["few_shot"] = shots;
  }
  if (req.position_id_map) j["position_id_map"] = std::string(to_string(*req.position_id_map));
  return j;
}

GenerateRequest generate_request_from_json(const json& j) {
  GenerateRequest req;
  req.question = j.at("question").get<std::string>();
  req.injected_prefix = j.value("prefix", std::string{});
  req.max_new_tokens = j.value("max_new_tokens", 32);
  if (auto it = j.find("few_shot"); it != j.end() && !it->is_null())
    for (const auto& s : *it) req.few_shot.push_back({s.at("question").get<std::string>(), s.at("completion").get<std::string>()});
  if (auto it = j.find("position_id_map"); it != j.end() && !it->is_null()) {
    auto m = position_id_map_from_string(it->get<std::string>());
    if (!m) throw RequestRejected("unknown position_id_map '" + it->get<std::string>() + "'");
    req.position_id_map = m;
  }
  return req;
}

json heads_to_json(const std::vector<HeadId>& heads) {
  json out = json::array();
  for (const auto& h : heads) out.push_back({h.layer, h.head});
  return out;
}

std::vector<HeadId> heads_from_json(const json& j) {
  std::vector<HeadId> out;
  for (const auto& h : j) {
    if (!h.is_array() || h.size() != 2) throw RequestRejected("head ids are [layer, head] pairs");
    out.push_back({h[0].get<int>(), h[1].get<int>()});
  }
  return out;
}

json to_json(const InterventionSpec& spec) {
  json j = {{"kind", std::string(to_string(spec.kind))}, {"heads", heads_to_json(spec.heads)}};
  if (spec.mean_reference) j["mean_reference_id"] = *spec.mean_reference;
  return j;
}

InterventionSpec intervention_from_json(const json& j) {
  InterventionSpec spec;
  auto kind = intervention_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw RequestRejected("unknown intervention kind");
  spec.kind = *kind;
  spec.heads = heads_from_json(j.at("heads"));
  if (auto it = j.find("mean_reference_id"); it != j.end() && !it->is_null())
    spec.mean_reference = it->get<std::string>();
  return spec;
}

json to_json(const HeadScoreMatrix& m) {
  json out = json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto h = m.head_at(i);
    out.push_back({h.layer, h.head, real_to_string(m.scores[i])});
  }
  return out;
}

HeadScoreMatrix score_matrix_from_json(const json& j, int layers, int heads, ScoreKind kind) {
  HeadScoreMatrix m(layers, heads, kind);
  for (const auto& row : j) {
    const HeadId h{row.at(0).get<int>(), row.at(1).get<int>()};
    if (h.layer < 0 || h.layer >= layers || h.head < 0 || h.head >= heads)
      throw BackendError("score row names a head outside the architecture");
    m.at(h) = real_from_string(row.at(2).get<std::string>());
  }
  return m;
}

json to_json(const ModelInfo& info) {
  return {{"family", info.family},
          {"layers", info.layers},
          {"query_heads", info.query_heads},
          {"kv_heads", info.kv_heads},
          {"head_dim", info.head_dim},
          {"eos", info.eos},
          {"supports_position_ids", info.supports_position_ids},
          {"induction_vocab", info.induction_vocab}};
}

ModelInfo model_info_from_json(const json& j) {
  ModelInfo info;
  info.family = j.at("family").get<std::string>();
  info.layers = j.at("layers").get<int>();
  info.query_heads = j.at("query_heads").get<int>();
  info.kv_heads = j.at("kv_heads").get<int>();
  info.head_dim = j.at("head_dim").get<int>();
  info.eos = j.value("eos", std::string{});
  info.supports_position_ids = j.value("supports_position_ids", false);
  info.induction_vocab = j.value("induction_vocab", std::vector<std::string>{});
  return info;
}

}  // namespace wire

// ---- HTTP client -------------------------------------------------------------

namespace {

std::pair<std::string, int> parse_url(const std::string& url) {
  std::string rest = url;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  else if (rest.find("://") != std::string::npos) throw std::invalid_argument("only http:// backends are supported: " + url);
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) return {rest, 80};
  return {rest.substr(0, colon), std::stoi(rest.substr(colon + 1))};
}

}  // namespace

HttpBackend::HttpBackend(std::string url) : HttpBackend(std::move(url), Options{}) {}

HttpBackend::HttpBackend(std::string url, Options options) : options_(options) {
  std::tie(host_, port_) = parse_url(url);
}

json HttpBackend::call(const std::string& method, const std::string& path, const json& body) {
  const std::string payload = method == "GET" ? std::string{} : body.dump();
  // Idempotency key: identical requests carry identical ids.
  const std::string request_id = sha256_hex(method + " " + path + "\n" + payload).substr(0, 32);
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms << (attempt - 1)));
    httplib::Client client(host_, port_);
    client.set_connection_timeout(std::chrono::milliseconds(options_.connect_timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(options_.read_timeout_ms));
    const httplib::Headers headers = {{"X-Request-Id", request_id}};
    auto res = method == "GET" ? client.Get(path, headers) : client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 503) {
      last_error = "service unavailable";
      continue;
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception&) {
      throw BackendError(path + ": malformed JSON reply (status " + std::to_string(res->status) + ")");
    }
    if (res->status == 200) return reply;
    const std::string message = reply.is_object() ? reply.value("error", std::string{"unknown error"}) : res->body;
    if (res->status == 400) throw RequestRejected(path + ": " + message);
    if (res->status == 422) throw ItemError(path + ": " + message);
    throw BackendError(path + ": status " + std::to_string(res->status) + ": " + message);
  }
  throw TransportError(path + ": " + last_error);
}

ModelInfo HttpBackend::cached_info() {
  std::lock_guard lock(info_mutex_);
  if (!info_) info_ = wire::model_info_from_json(call("GET", "/v1/model_info", json::object()));
  return *info_;
}

std::string HttpBackend::do_generate(const GenerateRequest& req) {
  return call("POST", "/v1/generate", wire::to_json(req)).at("text").get<std::string>();
}

std::vector<std::string> HttpBackend::do_tokenize(std::string_view text) {
  return call("POST", "/v1/tokenize", {{"text", std::string(text)}}).at("tokens").get<std::vector<std::string>>();
}

AttentionMassResult HttpBackend::do_attention_mass(const std::vector<AttentionItem>& items) {
  json body_items = json::array();
  for (const auto& it : items) {
    json spans = json::array();
    for (const auto& s : it.spans) spans.push_back({s.begin, s.end});
    body_items.push_back({{"prompt", it.prompt}, {"spans", spans}});
  }
  const auto reply = call("POST", "/v1/attention_mass", {{"items", body_items}});
  const auto info = cached_info();
  AttentionMassResult out;
  out.scores = wire::score_matrix_from_json(reply.at("scores"), info.layers, info.query_heads, ScoreKind::attention_mass);
  out.items_used = reply.value("items_used", items.size());
  out.items_skipped = reply.value("items_skipped", std::size_t{0});
  return out;
}

std::string HttpBackend::do_generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) {
  json body = wire::to_json(spec);
  body["request"] = wire::to_json(req);
  return call("POST", "/v1/ablate_generate", body).at("text").get<std::string>();
}

PatchResult HttpBackend::do_patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                            const std::vector<HeadId>& heads, const std::string& gold_token) {
  const auto reply = call("POST", "/v1/patch_score",
                          {{"ordered_prompt", ordered_prompt},
                           {"shuffled_prompt", shuffled_prompt},
                           {"heads", wire::heads_to_json(heads)},
                           {"gold_token", gold_token}});
  return {real_from_string(reply.at("logit_delta").get<std::string>()), reply.at("text").get<std::string>()};
}

InductionScores HttpBackend::do_induction_scores(int K, int N, std::uint64_t seed) {
  const auto reply = call("POST", "/v1/induction", {{"K", K}, {"N", N}, {"seed", seed}});
  const auto info = cached_info();
  return {wire::score_matrix_from_json(reply.at("prefix_match"), info.layers, info.query_heads, ScoreKind::prefix_match),
          wire::score_matrix_from_json(reply.at("copy"), info.layers, info.query_heads, ScoreKind::copy_score)};
}

ModelInfo HttpBackend::do_model_info() { return cached_info(); }

// ---- HTTP server -------------------------------------------------------------

namespace {

void install_routes(httplib::Server& server, ModelBackend& backend) {
  auto handle = [&backend](auto fn) {
    return [&backend, fn](const httplib::Request& req, httplib::Response& res) {
      auto reply = [&](int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
      };
      try {
        const json body = req.body.empty() ? json::object() : json::parse(req.body);
        reply(200, fn(backend, body));
      } catch (const json::exception& e) {
        reply(400, {{"error", std::string("bad request: ") + e.what()}});
      } catch (const RequestRejected& e) {
        reply(400, {{"error", e.what()}});
      } catch (const ItemError& e) {
        reply(422, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(500, {{"error", e.what()}});
      }
    };
  };

  server.Post("/v1/generate", handle([](ModelBackend& b, const json& body) {
    return json{{"text", b.generate(wire::generate_request_from_json(body))}};
  }));
  server.Post("/v1/tokenize", handle([](ModelBackend& b, const json& body) {
    return json{{"tokens", b.tokenize(body.at("text").get<std::string>())}};
  }));
  server.Post("/v1/attention_mass", handle([](ModelBackend& b, const json& body) {
    std::vector<AttentionItem> items;
    for (const auto& it : body.at("items")) {
      AttentionItem item;
      item.prompt = it.at("prompt").get<std::string>();
      for (const auto& s : it.at("spans")) item.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      items.push_back(std::move(item));
    }
    const auto r = b.attention_mass(items);
    return json{{"scores", wire::to_json(r.scores)}, {"items_used", r.items_used}, {"items_skipped", r.items_skipped}};
  }));
  server.Post("/v1/ablate_generate", handle([](ModelBackend& b, const json& body) {
    return json{{"text", b.generate_with_intervention(wire::generate_request_from_json(body.at("request")),
                                                      wire::intervention_from_json(body))}};
  }));
  server.Post("/v1/patch_score", handle([](ModelBackend& b, const json& body) {
    const auto r = b.patch_and_score(body.at("ordered_prompt").get<std::string>(),
                                     body.at("shuffled_prompt").get<std::string>(),
                                     wire::heads_from_json(body.at("heads")), body.at("gold_token").get<std::string>());
    return json{{"logit_delta", real_to_string(r.logit_delta)}, {"text", r.text}};
  }));
  server.Post("/v1/induction", handle([](ModelBackend& b, const json& body) {
    const auto r = b.induction_scores(body.at("K").get<int>(), body.at("N").get<int>(), body.at("seed").get<std::uint64_t>());
    return json{{"prefix_match", wire::to_json(r.prefix_match)}, {"copy", wire::to_json(r.copy)}};
  }));
  server.Get("/v1/model_info", handle([](ModelBackend& b, const json&) { return wire::to_json(b.model_info()); }));
}

}  // namespace

struct BackendServer::Impl {
  httplib::Server server;
  std::thread thread;
};

BackendServer::BackendServer(ModelBackend& backend, std::string host, int port) : impl_(std::make_unique<Impl>()) {
  install_routes(impl_->server, backend);
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

BackendServer::~BackendServer() { stop(); }

void BackendServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void BackendServer::wait() {
  if (impl_ && impl_->thread.joinable()) impl_->thread.join();
}

void serve_backend_blocking(ModelBackend& backend, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, backend);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace cotprobe
