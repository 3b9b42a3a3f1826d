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

// Consultation service: sessions with alternating patient/doctor turns,
// per-turn retrieval and role encoding, greedy replies, KB administration,
// and an HTTP front end under /v1.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "eyedoc/errors.hpp"
#include "eyedoc/trainer.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace eyedoc::service {

/// The doctor reply for the last patient turn is still being produced.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// No model loaded.
class UnavailableError : public Error {
 public:
  using Error::Error;
};

/// Missing or wrong admin token.
class UnauthorizedError : public Error {
 public:
  using Error::Error;
};

/// HTTP status for a library error (500 for anything unrecognised).
int status_for(const std::exception& e);

// --------------------------------------------------------------- bundle

/// Everything needed to answer: tokenizer, frozen encoder, knowledge index,
/// frozen base and trained adapters. On disk a bundle is a directory.
struct Bundle {
  std::shared_ptr<text::CharTokenizer> tokenizer;
  std::shared_ptr<encoder::Encoder> encoder;
  std::shared_ptr<kb::KbIndex> kb;
  std::shared_ptr<decoder::BaseDecoder> base;
  std::shared_ptr<trainer::PeftModel> model;

  trainer::Context context() const;
  /// Identifies base plus adapter weights.
  std::string checkpoint_hash() const;
};

inline constexpr const char* kVocabFile = "vocab.txt";
inline constexpr const char* kEncoderFile = "encoder.ckpt";
inline constexpr const char* kKbFile = "kb.idx";
inline constexpr const char* kBaseFile = "base.ckpt";
inline constexpr const char* kAdapterFile = "adapters.ckpt";

/// Reads a bundle directory. `adapters` overrides <dir>/adapters.ckpt. A
/// missing knowledge index yields an empty one.
Bundle load_bundle(const std::filesystem::path& dir,
                   const std::optional<std::filesystem::path>& adapters = std::nullopt);
void save_bundle(const std::filesystem::path& dir, const Bundle& bundle);

// -------------------------------------------------------------- session

struct Evidence {
  std::size_t turn = 0;  // doctor turn the document informed
  std::int64_t doc_id = -1;
  std::string doc_name;
  double similarity = 0.0;
  bool low_confidence = false;
};

struct TurnTrace {
  std::size_t turn = 0;
  std::string checkpoint;
  std::string kb_version;
  std::size_t kb_size = 0;
  nlohmann::json config;
  double elapsed_ms = 0.0;
};

struct Session {
  std::string id;
  Dialogue dialogue;
  std::vector<Evidence> evidence;
  std::vector<TurnTrace> traces;
  nlohmann::json config;  // snapshot taken at creation
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;

  bool doctor_pending() const;
};

nlohmann::json to_json(const Evidence& e);
nlohmann::json to_json(const TurnTrace& t);
nlohmann::json to_json(const Session& s);
Session session_from_json(const nlohmann::json& j);

class SessionStore {
 public:
  virtual ~SessionStore() = default;
  /// Insert or replace.
  virtual void put(const Session& s) = 0;
  virtual std::optional<Session> get(const std::string& id) const = 0;
  virtual std::size_t size() const = 0;
};

class MemoryStore : public SessionStore {
 public:
  void put(const Session& s) override;
  std::optional<Session> get(const std::string& id) const override;
  std::size_t size() const override;

 private:
  mutable std::mutex mu_;
  std::map<std::string, nlohmann::json> rows_;
};

/// SQLite file in write-ahead-log mode, one JSON row per session.
class SqliteStore : public SessionStore {
 public:
  explicit SqliteStore(const std::filesystem::path& path);
  ~SqliteStore() override;
  SqliteStore(const SqliteStore&) = delete;
  SqliteStore& operator=(const SqliteStore&) = delete;

  void put(const Session& s) override;
  std::optional<Session> get(const std::string& id) const override;
  std::size_t size() const override;
  std::string journal_mode() const;

 private:
  mutable std::mutex mu_;
  struct Db;
  std::unique_ptr<Db> db_;
};

// -------------------------------------------------------------- service

struct ServiceConfig {
  std::size_t max_new_tokens = 64;
  /// Admin token for KB routes; empty disables them.
  std::string admin_token;
  std::string disclaimer =
      "Research prototype. Replies are machine generated and are not medical advice; "
      "see an ophthalmologist for diagnosis and treatment.";

  /// Reads the admin token from `env` when set.
  static ServiceConfig from_env(const char* env = "EYEDOC_ADMIN_TOKEN");
};

ServiceConfig service_config_from_json(const nlohmann::json& j);

struct TurnResponse {
  std::string session_id;
  std::size_t turn = 0;  // index of the doctor turn
  std::string reply;
  std::optional<Evidence> evidence;
  TurnTrace trace;
  std::string disclaimer;
};

nlohmann::json to_json(const TurnResponse& r);

struct SearchHit {
  std::int64_t doc_id = -1;
  std::string name;
  double similarity = 0.0;
};

class Service {
 public:
  /// `bundle` may be null: session creation then fails as unavailable.
  Service(std::shared_ptr<const Bundle> bundle, std::shared_ptr<SessionStore> store, ServiceConfig config = {});

  /// Recognised overrides: {"no_kb": bool}.
  std::string create_session(const nlohmann::json& overrides = nlohmann::json::object());
  TurnResponse post_turn(const std::string& session_id, const std::string& text);
  Session transcript(const std::string& session_id) const;

  std::int64_t kb_add(const std::string& token, const nlohmann::json& doc);
  std::vector<SearchHit> kb_search(const std::string& token, const std::string& query, std::size_t k = 5) const;

  const ServiceConfig& config() const { return config_; }
  bool ready() const { return bundle_ != nullptr; }
  std::string checkpoint() const { return checkpoint_; }

 private:
  std::shared_ptr<std::mutex> session_lock(const std::string& id);
  void authorize(const std::string& token) const;
  const Bundle& bundle() const;

  std::shared_ptr<const Bundle> bundle_;
  std::shared_ptr<SessionStore> store_;
  ServiceConfig config_;
  std::string checkpoint_;
  std::mutex locks_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

/// 32 hex characters from std::random_device.
std::string new_session_id();

// ----------------------------------------------------------------- http

/// JSON over HTTP. Errors are {"error": {"status", "message"}}.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace eyedoc::service
