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

// Dialogue curation: raw records are rendered into a prompt, sent to a
// chat-completion service, and the replies are checked against a rule set.
// Records that never pass within the attempt budget go to quarantine.

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "eyedoc/dialogue.hpp"
#include "eyedoc/errors.hpp"
#include "json.hpp"

namespace eyedoc::curation {

/// Template text is malformed (placeholder missing or repeated).
class TemplateError : public Error {
 public:
  using Error::Error;
};

/// The chat service could not be reached or answered with garbage.
class TransportError : public Error {
 public:
  using Error::Error;
};

enum class TemplateKind { kSingleTurn, kMultiTurn };

std::string_view kind_name(TemplateKind k);
TemplateKind parse_kind(std::string_view s);

inline constexpr std::string_view kPlaceholder = "{d}";

struct PromptTemplate {
  TemplateKind kind = TemplateKind::kMultiTurn;
  std::string text;
  /// Numbered rules listed in the text; kept separately so callers can
  /// check that a rendered prompt carries each one.
  std::vector<std::string> precautions;

  /// Throws TemplateError unless the placeholder occurs exactly once.
  void validate() const;

  /// Preamble, the raw-dialogue slot, then the numbered precautions.
  static PromptTemplate compose(TemplateKind kind, std::string_view preamble,
                                const std::vector<std::string>& precautions);
  static PromptTemplate builtin(TemplateKind kind);
};

/// JSON: {"kind", "preamble", "precautions": [...]} or {"kind", "text"}.
PromptTemplate template_from_json(const nlohmann::json& j);
PromptTemplate load_template(const std::filesystem::path& path);

std::string render_prompt(std::string_view raw, const PromptTemplate& tpl);

// ---------------------------------------------------------------- rules

struct RuleFailure {
  std::string rule;
  std::string message;
};

struct Verdict {
  bool passed = true;
  std::vector<RuleFailure> failures;
  /// Parsed dialogue when the schema rule passed.
  std::optional<Dialogue> dialogue;

  bool failed(std::string_view rule) const;
};

enum class RoundMode { kExchanges, kUtterances };

struct RuleConfig {
  std::size_t min_rounds = 10;
  std::size_t max_rounds = 15;
  RoundMode round_mode = RoundMode::kExchanges;
  std::size_t max_chars = 30;
  /// ECMAScript regexes matched against each utterance.
  std::vector<std::string> privacy_patterns;
  /// Literal strings (names, hospitals) that must not appear.
  std::vector<std::string> privacy_terms;
  std::vector<std::string> colloquial_markers;

  static RuleConfig defaults();
};

RuleConfig rule_config_from_json(const nlohmann::json& j);

/// Rule ids, checked in this order: schema, round_count, alternation,
/// turn_length, privacy. A schema failure stops the remaining checks.
Verdict validate_multi_turn(std::string_view response, const RuleConfig& cfg = RuleConfig::defaults());

/// Rule ids: schema, privacy, colloquial.
Verdict validate_single_turn(std::string_view response, const RuleConfig& cfg = RuleConfig::defaults());

Verdict validate(TemplateKind kind, std::string_view response, const RuleConfig& cfg);

/// Rounds as counted under `mode`: exchanges are ceil(utterances / 2).
std::size_t count_rounds(std::size_t utterances, RoundMode mode);

// --------------------------------------------------------------- client

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  /// Record id; only stub clients look at it.
  std::string tag;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns the assistant message content or throws TransportError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// POSTs {model, messages, temperature} to `<base_url><path>` and reads
/// choices[0].message.content. The bearer token comes from `token_env`.
class HttpChatClient : public ChatClient {
 public:
  struct Options {
    std::string base_url = "http://127.0.0.1:8000";
    std::string path = "/v1/chat/completions";
    std::string token_env = "EYEDOC_CHAT_TOKEN";
    int timeout_seconds = 60;
  };
  explicit HttpChatClient(Options opts);
  std::string complete(const ChatRequest& request) override;

 private:
  Options opts_;
};

/// Replays canned replies per record id; each call consumes the next
/// reply and the last one repeats. A reply equal to kTransportFailure
/// throws TransportError instead.
class StubChatClient : public ChatClient {
 public:
  static constexpr std::string_view kTransportFailure = "<transport-failure>";

  explicit StubChatClient(std::map<std::string, std::vector<std::string>> replies,
                          std::vector<std::string> fallback = {});
  /// JSON object {id: [reply, ...]}; the key "*" is the fallback.
  static std::unique_ptr<StubChatClient> from_file(const std::filesystem::path& path);

  std::string complete(const ChatRequest& request) override;
  std::size_t calls(const std::string& id) const;
  std::size_t total_calls() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::vector<std::string>> replies_;
  std::vector<std::string> fallback_;
  std::map<std::string, std::size_t> calls_;
};

/// Calls a function; handy in tests.
class FunctionChatClient : public ChatClient {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  explicit FunctionChatClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// -------------------------------------------------------------- records

struct RawRecord {
  std::string id;
  std::string text;
};

/// JSONL {id, text}; `text` may also be a dialogue object, which is
/// rendered back to a string.
std::vector<RawRecord> read_raw(const std::filesystem::path& path);

enum class Status { kAccepted, kQuarantined };

struct Attempt {
  std::string response;
  bool passed = false;
  bool transport_failed = false;
  std::vector<RuleFailure> failures;
};

struct CurationRecord {
  std::string id;
  std::string raw;
  std::string prompt;
  std::vector<Attempt> attempts;
  Status status = Status::kQuarantined;
  /// Accepted output; for multi-turn records a dialogue, for single-turn
  /// records {patient, doctor}.
  nlohmann::json output;
  /// "auto" or "reviewed".
  std::string source = "auto";
};

nlohmann::json to_json(const CurationRecord& r);
CurationRecord record_from_json(const nlohmann::json& j);
std::vector<CurationRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<CurationRecord>& records);

struct CurateOptions {
  std::size_t max_checks = 3;
  std::size_t max_in_flight = 4;
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  std::chrono::milliseconds backoff_initial{200};
  double backoff_factor = 2.0;
  RuleConfig rules = RuleConfig::defaults();
  /// Append-only JSONL of finished records; accepted ones are skipped on
  /// the next run.
  std::optional<std::filesystem::path> journal;
  /// Replaces std::this_thread::sleep_for (tests record the delays).
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct CurateResult {
  std::vector<CurationRecord> accepted;
  std::vector<CurationRecord> quarantined;
  std::size_t resumed = 0;
};

/// Each attempt resends the full conversation so far: the prompt, every
/// earlier reply and the rule failures it drew.
CurateResult curate(const std::vector<RawRecord>& records, const PromptTemplate& tpl, ChatClient& client,
                    const CurateOptions& opts);

/// Moves quarantined records that appear in `reviewed` ({id, output}) into
/// the accepted set after a schema check. Unknown ids are a ContractError.
CurateResult import_reviewed(CurateResult current, const std::vector<nlohmann::json>& reviewed,
                             TemplateKind kind);

}  // namespace eyedoc::curation
