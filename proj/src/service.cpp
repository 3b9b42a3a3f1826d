// Copyright 2026 The EyeDoc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "eyedoc/service.hpp"

#include <sqlite3.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "eyedoc/text.hpp"
#include "httplib.h"

namespace eyedoc::service {

using nlohmann::json;

int status_for(const std::exception& e) {
  if (dynamic_cast<const NotFoundError*>(&e)) return 404;
  if (dynamic_cast<const ConflictError*>(&e)) return 409;
  if (dynamic_cast<const UnavailableError*>(&e)) return 503;
  if (dynamic_cast<const UnauthorizedError*>(&e)) return 401;
  if (dynamic_cast<const ValidationError*>(&e)) return 422;
  if (dynamic_cast<const FormatError*>(&e)) return 400;
  if (dynamic_cast<const json::exception*>(&e)) return 400;
  return 500;
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

// --------------------------------------------------------------- bundle

trainer::Context Bundle::context() const { return trainer::Context::make(tokenizer, encoder, kb); }

std::string Bundle::checkpoint_hash() const {
  return base->version_tag() + ":" + model->adapter_params().checksum();
}

Bundle load_bundle(const std::filesystem::path& dir, const std::optional<std::filesystem::path>& adapters) {
  Bundle b;
  b.tokenizer = std::make_shared<text::CharTokenizer>(text::Vocabulary::load(dir / kVocabFile));
  b.encoder = std::make_shared<encoder::Encoder>(encoder::load_encoder(dir / kEncoderFile));
  b.kb = std::make_shared<kb::KbIndex>();
  if (std::filesystem::exists(dir / kKbFile)) b.kb->load(dir / kKbFile);
  b.base = std::make_shared<decoder::BaseDecoder>(decoder::load_base(dir / kBaseFile));
  const auto adapter_path = adapters.value_or(dir / kAdapterFile);
  auto cfg = trainer::PeftModel::saved_config(adapter_path);
  b.model = std::make_shared<trainer::PeftModel>(b.base, b.encoder->config().model_dim, cfg);
  b.model->load_weights(adapter_path);
  if (b.tokenizer->vocab_size() != b.base->config().vocab_size)
    throw FormatError("bundle vocabulary does not match the decoder");
  return b;
}

void save_bundle(const std::filesystem::path& dir, const Bundle& b) {
  std::filesystem::create_directories(dir);
  b.tokenizer->vocabulary().save(dir / kVocabFile);
  encoder::save_encoder(dir / kEncoderFile, *b.encoder);
  b.kb->save(dir / kKbFile);
  decoder::save_base(dir / kBaseFile, *b.base);
  b.model->save(dir / kAdapterFile);
}

// -------------------------------------------------------------- session

bool Session::doctor_pending() const {
  return !dialogue.turns.empty() && dialogue.turns.back().role == Role::kPatient;
}

json to_json(const Evidence& e) {
  return {{"turn", e.turn},
          {"doc_id", e.doc_id},
          {"doc_name", e.doc_name},
          {"similarity", e.similarity},
          {"low_confidence", e.low_confidence}};
}

json to_json(const TurnTrace& t) {
  return {{"turn", t.turn},           {"checkpoint", t.checkpoint}, {"kb_version", t.kb_version},
          {"kb_size", t.kb_size},     {"config", t.config},         {"elapsed_ms", t.elapsed_ms}};
}

json to_json(const Session& s) {
  json ev = json::array(), tr = json::array();
  for (const auto& e : s.evidence) ev.push_back(to_json(e));
  for (const auto& t : s.traces) tr.push_back(to_json(t));
  json d = eyedoc::to_json(s.dialogue);
  return {{"id", s.id},         {"turns", d["turns"]},         {"evidence", ev},
          {"traces", tr},       {"config", s.config},          {"created_ms", s.created_ms},
          {"updated_ms", s.updated_ms}};
}

Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.dialogue.id = s.id;
  std::size_t index = 1;
  for (const auto& t : j.at("turns"))
    s.dialogue.turns.push_back({parse_role(t.at("role").get<std::string>()), t.at("text").get<std::string>(), index++});
  for (const auto& e : j.at("evidence"))
    s.evidence.push_back({e.at("turn").get<std::size_t>(), e.at("doc_id").get<std::int64_t>(),
                          e.at("doc_name").get<std::string>(), e.at("similarity").get<double>(),
                          e.at("low_confidence").get<bool>()});
  for (const auto& t : j.at("traces"))
    s.traces.push_back({t.at("turn").get<std::size_t>(), t.at("checkpoint").get<std::string>(),
                        t.at("kb_version").get<std::string>(), t.at("kb_size").get<std::size_t>(), t.at("config"),
                        t.at("elapsed_ms").get<double>()});
  s.config = j.at("config");
  s.created_ms = j.at("created_ms").get<std::int64_t>();
  s.updated_ms = j.at("updated_ms").get<std::int64_t>();
  return s;
}

void MemoryStore::put(const Session& s) {
  json row = to_json(s);
  std::lock_guard lock(mu_);
  rows_[s.id] = std::move(row);
}

std::optional<Session> MemoryStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = rows_.find(id);
  if (it == rows_.end()) return std::nullopt;
  return session_from_json(it->second);
}

std::size_t MemoryStore::size() const {
  std::lock_guard lock(mu_);
  return rows_.size();
}

struct SqliteStore::Db {
  sqlite3* handle = nullptr;

  void exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(handle, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw FormatError(std::string("sqlite: ") + msg);
    }
  }

  // Prepared statement released on scope exit.
  struct Stmt {
    sqlite3_stmt* s = nullptr;
    Stmt(sqlite3* db, const char* sql) {
      if (sqlite3_prepare_v2(db, sql, -1, &s, nullptr) != SQLITE_OK)
        throw FormatError(std::string("sqlite: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(s); }
  };
};

SqliteStore::SqliteStore(const std::filesystem::path& path) : db_(std::make_unique<Db>()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (sqlite3_open(path.string().c_str(), &db_->handle) != SQLITE_OK) {
    const std::string msg = db_->handle ? sqlite3_errmsg(db_->handle) : "out of memory";
    sqlite3_close(db_->handle);
    throw FormatError("cannot open session store " + path.string() + ": " + msg);
  }
  db_->exec("PRAGMA journal_mode=WAL;");
  db_->exec("PRAGMA synchronous=NORMAL;");
  db_->exec("CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, body TEXT NOT NULL, updated INTEGER);");
}

SqliteStore::~SqliteStore() {
  if (db_ && db_->handle) sqlite3_close(db_->handle);
}

void SqliteStore::put(const Session& s) {
  const std::string body = to_json(s).dump();
  std::lock_guard lock(mu_);
  Db::Stmt st(db_->handle, "INSERT OR REPLACE INTO sessions (id, body, updated) VALUES (?1, ?2, ?3);");
  sqlite3_bind_text(st.s, 1, s.id.c_str(), -1, SQLITE_TRANSIENT);
  sqlite3_bind_text(st.s, 2, body.c_str(), static_cast<int>(body.size()), SQLITE_TRANSIENT);
  sqlite3_bind_int64(st.s, 3, s.updated_ms);
  if (sqlite3_step(st.s) != SQLITE_DONE) throw FormatError(std::string("sqlite: ") + sqlite3_errmsg(db_->handle));
}

std::optional<Session> SqliteStore::get(const std::string& id) const {
  std::string body;
  {
    std::lock_guard lock(mu_);
    Db::Stmt st(db_->handle, "SELECT body FROM sessions WHERE id = ?1;");
    sqlite3_bind_text(st.s, 1, id.c_str(), -1, SQLITE_TRANSIENT);
    const int rc = sqlite3_step(st.s);
    if (rc == SQLITE_DONE) return std::nullopt;
    if (rc != SQLITE_ROW) throw FormatError(std::string("sqlite: ") + sqlite3_errmsg(db_->handle));
    body = reinterpret_cast<const char*>(sqlite3_column_text(st.s, 0));
  }
  return session_from_json(json::parse(body));
}

std::size_t SqliteStore::size() const {
  std::lock_guard lock(mu_);
  Db::Stmt st(db_->handle, "SELECT COUNT(*) FROM sessions;");
  sqlite3_step(st.s);
  return static_cast<std::size_t>(sqlite3_column_int64(st.s, 0));
}

std::string SqliteStore::journal_mode() const {
  std::lock_guard lock(mu_);
  Db::Stmt st(db_->handle, "PRAGMA journal_mode;");
  sqlite3_step(st.s);
  return reinterpret_cast<const char*>(sqlite3_column_text(st.s, 0));
}

// -------------------------------------------------------------- service

ServiceConfig ServiceConfig::from_env(const char* env) {
  ServiceConfig c;
  if (const char* v = std::getenv(env)) c.admin_token = v;
  return c;
}

ServiceConfig service_config_from_json(const json& j) {
  ServiceConfig c = ServiceConfig::from_env();
  for (const auto& [key, value] : j.items()) {
    if (key == "max_new_tokens") c.max_new_tokens = value.get<std::size_t>();
    else if (key == "disclaimer") c.disclaimer = value.get<std::string>();
    else if (key == "admin_token_env") {
      const auto name = value.get<std::string>();
      const char* v = std::getenv(name.c_str());
      c.admin_token = v ? v : "";
    } else throw ValidationError("unknown service setting '" + key + "'");
  }
  if (c.max_new_tokens == 0) throw ValidationError("max_new_tokens must be positive");
  return c;
}

json to_json(const TurnResponse& r) {
  json j = {{"session_id", r.session_id}, {"turn", r.turn},        {"reply", r.reply},
            {"trace", to_json(r.trace)},  {"disclaimer", r.disclaimer}};
  if (r.evidence) j["evidence"] = to_json(*r.evidence);
  return j;
}

std::string new_session_id() {
  std::random_device rd;
  std::array<std::uint32_t, 4> words{};
  for (auto& w : words) w = rd();
  char buf[33];
  std::snprintf(buf, sizeof buf, "%08x%08x%08x%08x", words[0], words[1], words[2], words[3]);
  return buf;
}

Service::Service(std::shared_ptr<const Bundle> bundle, std::shared_ptr<SessionStore> store, ServiceConfig config)
    : bundle_(std::move(bundle)), store_(std::move(store)), config_(std::move(config)) {
  if (!store_) throw ContractError("service needs a session store");
  if (bundle_) checkpoint_ = bundle_->checkpoint_hash();
}

const Bundle& Service::bundle() const {
  if (!bundle_) throw UnavailableError("no model loaded");
  return *bundle_;
}

std::shared_ptr<std::mutex> Service::session_lock(const std::string& id) {
  std::lock_guard lock(locks_mu_);
  auto& m = locks_[id];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

std::string Service::create_session(const json& overrides) {
  const Bundle& b = bundle();
  if (!overrides.is_object()) throw ValidationError("session config must be an object");
  bool no_kb = b.model->config().ablation.no_kb;
  for (const auto& [key, value] : overrides.items()) {
    if (key == "no_kb") {
      if (!value.is_boolean()) throw ValidationError("no_kb must be a boolean");
      no_kb = no_kb || value.get<bool>();
    } else {
      throw ValidationError("unknown session setting '" + key + "'");
    }
  }
  Session s;
  s.id = new_session_id();
  s.dialogue.id = s.id;
  s.config = {{"no_kb", no_kb},
              {"ablation", b.model->config().ablation.name()},
              {"max_new_tokens", config_.max_new_tokens},
              {"decode", "greedy"}};
  s.created_ms = s.updated_ms = now_ms();
  store_->put(s);
  return s.id;
}

TurnResponse Service::post_turn(const std::string& session_id, const std::string& text) {
  const Bundle& b = bundle();
  auto mu = session_lock(session_id);
  std::unique_lock lock(*mu, std::try_to_lock);
  if (!lock.owns_lock()) throw ConflictError("session " + session_id + " is still answering the previous turn");

  auto stored = store_->get(session_id);
  if (!stored) throw NotFoundError("no session " + session_id);
  Session s = std::move(*stored);
  const std::string body = text::collapse_whitespace(text::trim(text));
  if (body.empty()) throw ValidationError("patient text is empty");
  if (s.doctor_pending()) throw ConflictError("a doctor reply is pending for session " + session_id);

  const auto t0 = std::chrono::steady_clock::now();
  Dialogue d = s.dialogue;
  d.turns.push_back({Role::kPatient, body, d.turns.size() + 1});
  const std::size_t turn = d.turns.size() + 1;

  const bool use_kb = !s.config.value("no_kb", false);
  const std::size_t context = b.base->config().context;
  if (config_.max_new_tokens + 2 > context) throw ContractError("max_new_tokens leaves no room for the prompt");
  const trainer::Context ctx = b.context();
  const auto prepared = trainer::prepare_turn(ctx, d, turn, use_kb, context - config_.max_new_tokens);
  decoder::GenerateOptions gen;
  gen.max_new_tokens = config_.max_new_tokens;
  const auto out = b.model->generate(prepared.input.ids, prepared.cls, gen);
  std::string reply = text::trim(b.tokenizer->decode(out.ids));
  if (reply.empty()) reply = "请再详细描述一下您的症状。";
  d.turns.push_back({Role::kDoctor, reply, turn});

  TurnResponse r;
  r.session_id = s.id;
  r.turn = turn;
  r.reply = reply;
  r.disclaimer = config_.disclaimer;
  if (use_kb && prepared.retrieval) {
    Evidence e;
    e.turn = turn;
    e.doc_id = prepared.retrieval->doc_id;
    if (auto doc = b.kb->get(e.doc_id)) e.doc_name = doc->name;
    e.similarity = prepared.retrieval->similarity;
    e.low_confidence = prepared.retrieval->low_confidence;
    r.evidence = e;
    s.evidence.push_back(e);
  }
  r.trace.turn = turn;
  r.trace.checkpoint = checkpoint_;
  r.trace.kb_version = b.kb->version();
  r.trace.kb_size = b.kb->size();
  r.trace.config = s.config;
  r.trace.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  s.traces.push_back(r.trace);

  s.dialogue = std::move(d);
  s.updated_ms = now_ms();
  store_->put(s);
  return r;
}

Session Service::transcript(const std::string& session_id) const {
  auto s = store_->get(session_id);
  if (!s) throw NotFoundError("no session " + session_id);
  return *s;
}

void Service::authorize(const std::string& token) const {
  if (config_.admin_token.empty()) throw UnauthorizedError("knowledge base administration is disabled");
  if (token != config_.admin_token) throw UnauthorizedError("bad admin token");
}

std::int64_t Service::kb_add(const std::string& token, const json& doc) {
  authorize(token);
  const Bundle& b = bundle();
  if (!doc.is_object()) throw ValidationError("document must be an object");
  std::vector<std::string> missing;
  for (const char* key : {"name", "symptoms"})
    if (!doc.contains(key) || !doc[key].is_string() || text::trim(doc[key].get<std::string>()).empty())
      missing.emplace_back(key);
  if (!missing.empty()) {
    std::string msg = "document is missing";
    for (const auto& m : missing) msg += " '" + m + "'";
    throw ValidationError(msg);
  }
  kb::DiseaseDoc d = kb::doc_from_json(doc);
  d.id = -1;
  return b.kb->index_document(std::move(d), *b.context().embedder);
}

std::vector<SearchHit> Service::kb_search(const std::string& token, const std::string& query, std::size_t k) const {
  authorize(token);
  const Bundle& b = bundle();
  if (text::trim(query).empty()) throw ValidationError("empty query");
  if (k == 0) throw ValidationError("k must be positive");
  std::vector<SearchHit> hits;
  const auto r = b.kb->search(query, *b.context().embedder, k - 1);
  if (!r) return hits;
  auto hit = [&](std::int64_t id, double sim) {
    SearchHit h{id, "", sim};
    if (auto doc = b.kb->get(id)) h.name = doc->name;
    hits.push_back(h);
  };
  hit(r->doc_id, r->similarity);
  for (const auto& [id, sim] : r->runner_ups) hit(id, sim);
  return hits;
}

// ----------------------------------------------------------------- http

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", {{"status", status}, {"message", message}}}});
}

// Runs `fn`, mapping library errors to status codes.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    send_error(res, status_for(e), e.what());
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw FormatError("request body is not JSON");
  return j;
}

std::string bearer(const httplib::Request& req) {
  const std::string h = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  return h.rfind(prefix, 0) == 0 ? h.substr(prefix.size()) : std::string();
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;

  srv.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, service_.ready() ? 200 : 503,
              {{"ready", service_.ready()}, {"checkpoint", service_.checkpoint()}});
  });

  srv.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const std::string id = service_.create_session(body.value("config", json::object()));
      const Session s = service_.transcript(id);
      send_json(res, 201, {{"id", id}, {"config", s.config}, {"disclaimer", service_.config().disclaimer}});
    });
  });

  srv.Post(R"(/v1/sessions/([0-9A-Za-z]+)/turns)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("text") || !body["text"].is_string()) throw ValidationError("body needs a string 'text'");
      send_json(res, 200, to_json(service_.post_turn(req.matches[1], body["text"].get<std::string>())));
    });
  });

  srv.Get(R"(/v1/sessions/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json j = to_json(service_.transcript(req.matches[1]));
      j["disclaimer"] = service_.config().disclaimer;
      send_json(res, 200, j);
    });
  });

  srv.Post("/v1/kb/docs", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::int64_t id = service_.kb_add(bearer(req), parse_body(req));
      send_json(res, 201, {{"id", id}});
    });
  });

  srv.Get("/v1/kb/search", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::size_t k = 5;
      if (req.has_param("k")) {
        const std::string ks = req.get_param_value("k");
        if (ks.empty() || ks.find_first_not_of("0123456789") != std::string::npos)
          throw ValidationError("k must be a positive integer");
        k = std::stoul(ks);
      }
      json results = json::array();
      for (const auto& h : service_.kb_search(bearer(req), req.get_param_value("q"), k))
        results.push_back({{"doc_id", h.doc_id}, {"name", h.name}, {"similarity", h.similarity}});
      send_json(res, 200, {{"results", results}});
    });
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "no such route" : "request failed");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace eyedoc::service
