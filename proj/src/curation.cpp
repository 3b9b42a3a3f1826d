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

#include "eyedoc/curation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "eyedoc/text.hpp"
#include "httplib.h"

namespace eyedoc::curation {

using nlohmann::json;

std::string_view kind_name(TemplateKind k) { return k == TemplateKind::kSingleTurn ? "single_turn" : "multi_turn"; }

TemplateKind parse_kind(std::string_view s) {
  if (s == "single_turn" || s == "single") return TemplateKind::kSingleTurn;
  if (s == "multi_turn" || s == "multi") return TemplateKind::kMultiTurn;
  throw ValidationError("unknown template kind '" + std::string(s) + "'");
}

// ------------------------------------------------------------- template

namespace {

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size()))
    ++n;
  return n;
}

const std::vector<std::string>& multi_turn_rules() {
  static const std::vector<std::string> rules = {
      "患者描述病情时要回应医生提出的问题；",
      "医生回复时使用规范的医学术语，并主动询问患者的病情；",
      "每句话不超过30个字，语言不要口语化，不能出现医生或患者的隐私信息；",
      "医生与患者之间共进行10到15轮对话；",
      "双方的发言要紧扣当前诊断的眼科疾病；",
      "患者和医生轮流发言；",
      "患者第一句话简要说明症状，不宜过长；",
      "按照原始对话的json格式返回生成的对话。",
  };
  return rules;
}

const std::vector<std::string>& single_turn_rules() {
  static const std::vector<std::string> rules = {
      "患者要详细说明症状以及想咨询的问题；",
      "医生回答要耐心，使用规范的医学术语；",
      "语言不要口语化，紧扣当前诊断的眼科疾病，不能出现医生或患者的隐私信息。",
  };
  return rules;
}

}  // namespace

void PromptTemplate::validate() const {
  const std::size_t n = count_occurrences(text, kPlaceholder);
  if (n == 0) throw TemplateError("template has no " + std::string(kPlaceholder) + " placeholder");
  if (n > 1) throw TemplateError("template has " + std::to_string(n) + " placeholders, expected one");
}

PromptTemplate PromptTemplate::compose(TemplateKind kind, std::string_view preamble,
                                       const std::vector<std::string>& precautions) {
  PromptTemplate t;
  t.kind = kind;
  t.precautions = precautions;
  t.text = std::string(preamble);
  t.text += "\n\n原始对话：";
  t.text += kPlaceholder;
  t.text += "\n\n注意事项：\n";
  for (std::size_t i = 0; i < precautions.size(); ++i)
    t.text += std::to_string(i + 1) + ". " + precautions[i] + "\n";
  t.validate();
  return t;
}

PromptTemplate PromptTemplate::builtin(TemplateKind kind) {
  if (kind == TemplateKind::kMultiTurn)
    return compose(kind,
                   "请你作为一名眼科专科医生，帮我整理一段多轮问诊对话。下面给出一段医患之间的原始对话，"
                   "请围绕同一主题用中文重新生成一段多轮对话。",
                   multi_turn_rules());
  return compose(kind,
                 "请你作为一名眼科专科医生，帮我整理一段单轮问诊对话。下面给出一段医患之间的原始问答，"
                 "请规范其内容，并以json格式返回，字段为patient和doctor。",
                 single_turn_rules());
}

PromptTemplate template_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw FormatError("template needs a 'kind' field");
  const TemplateKind kind = parse_kind(j.at("kind").get<std::string>());
  if (j.contains("text")) {
    PromptTemplate t;
    t.kind = kind;
    t.text = j.at("text").get<std::string>();
    if (j.contains("precautions")) t.precautions = j.at("precautions").get<std::vector<std::string>>();
    t.validate();
    return t;
  }
  if (!j.contains("preamble") || !j.contains("precautions"))
    throw FormatError("template needs 'text' or 'preamble' plus 'precautions'");
  return PromptTemplate::compose(kind, j.at("preamble").get<std::string>(),
                                 j.at("precautions").get<std::vector<std::string>>());
}

PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open template " + path.string());
  try {
    return template_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError("template " + path.string() + ": " + e.what());
  }
}

std::string render_prompt(std::string_view raw, const PromptTemplate& tpl) {
  tpl.validate();
  const std::size_t pos = tpl.text.find(kPlaceholder);
  std::string out;
  out.reserve(tpl.text.size() + raw.size());
  out.append(tpl.text, 0, pos);
  out.append(raw);
  out.append(tpl.text, pos + kPlaceholder.size());
  return out;
}

// ---------------------------------------------------------------- rules

bool Verdict::failed(std::string_view rule) const {
  for (const auto& f : failures)
    if (f.rule == rule) return true;
  return false;
}

RuleConfig RuleConfig::defaults() {
  RuleConfig c;
  c.privacy_patterns = {
      "1[3-9][0-9]{9}",                 // mobile
      "0[0-9]{2,3}-[0-9]{7,8}",         // landline
      "[0-9]{17}[0-9Xx]",               // resident ID
      "(王|李|张|刘|陈|杨|黄|赵|吴|周|徐|孙|马|朱|胡|郭|何|林|罗|高)(医生|大夫|主任|教授|护士|先生|女士)",
  };
  c.privacy_terms = {"人民医院", "附属医院", "中心医院", "眼科医院", "协和", "同仁", "中山眼科", "身份证号", "手机号"};
  c.colloquial_markers = {"哈哈", "嗯嗯", "呵呵", "呗", "啥", "咋", "木有", "酱紫", "hhh", "~"};
  return c;
}

RuleConfig rule_config_from_json(const json& j) {
  RuleConfig c = RuleConfig::defaults();
  for (const auto& [key, value] : j.items()) {
    if (key == "min_rounds") c.min_rounds = value.get<std::size_t>();
    else if (key == "max_rounds") c.max_rounds = value.get<std::size_t>();
    else if (key == "round_mode") {
      const auto s = value.get<std::string>();
      if (s == "exchanges") c.round_mode = RoundMode::kExchanges;
      else if (s == "utterances") c.round_mode = RoundMode::kUtterances;
      else throw ValidationError("round_mode must be 'exchanges' or 'utterances'");
    } else if (key == "max_chars") c.max_chars = value.get<std::size_t>();
    else if (key == "privacy_patterns") c.privacy_patterns = value.get<std::vector<std::string>>();
    else if (key == "privacy_terms") c.privacy_terms = value.get<std::vector<std::string>>();
    else if (key == "colloquial_markers") c.colloquial_markers = value.get<std::vector<std::string>>();
    else throw ValidationError("unknown rule setting '" + key + "'");
  }
  if (c.min_rounds > c.max_rounds) throw ValidationError("min_rounds exceeds max_rounds");
  return c;
}

std::size_t count_rounds(std::size_t utterances, RoundMode mode) {
  return mode == RoundMode::kUtterances ? utterances : (utterances + 1) / 2;
}

namespace {

// Models like to wrap JSON in a fenced block.
std::string_view strip_fence(std::string_view s) {
  std::string_view t = s;
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.front()))) t.remove_prefix(1);
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back()))) t.remove_suffix(1);
  if (t.substr(0, 3) != "```") return s;
  const auto nl = t.find('\n');
  if (nl == std::string_view::npos || t.size() < 6 || t.substr(t.size() - 3) != "```") return s;
  return t.substr(nl + 1, t.size() - 3 - nl - 1);
}

std::optional<json> parse_json(std::string_view s) {
  json j = json::parse(strip_fence(s), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

void fail(Verdict& v, std::string rule, std::string message) {
  v.passed = false;
  v.failures.push_back({std::move(rule), std::move(message)});
}

std::optional<std::string> privacy_hit(const std::string& s, const RuleConfig& cfg) {
  for (const auto& term : cfg.privacy_terms)
    if (!term.empty() && s.find(term) != std::string::npos) return term;
  for (const auto& pat : cfg.privacy_patterns) {
    std::smatch m;
    if (std::regex_search(s, m, std::regex(pat))) return m.str();
  }
  return std::nullopt;
}

void check_privacy(Verdict& v, const std::vector<std::string>& texts, const RuleConfig& cfg) {
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (auto hit = privacy_hit(texts[i], cfg)) {
      fail(v, "privacy", "utterance " + std::to_string(i + 1) + " contains '" + *hit + "'");
      return;
    }
}

}  // namespace

Verdict validate_multi_turn(std::string_view response, const RuleConfig& cfg) {
  Verdict v;
  auto j = parse_json(response);
  if (!j) {
    fail(v, "schema", "reply is not JSON");
    return v;
  }
  const json* turns = nullptr;
  if (j->is_array()) turns = &*j;
  else if (j->is_object() && j->contains("turns") && (*j)["turns"].is_array()) turns = &(*j)["turns"];
  if (turns == nullptr) {
    fail(v, "schema", "expected a 'turns' array");
    return v;
  }
  Dialogue d;
  if (j->is_object() && j->contains("id") && (*j)["id"].is_string()) d.id = (*j)["id"].get<std::string>();
  for (const auto& t : *turns) {
    if (!t.is_object() || !t.contains("role") || !t.contains("text") || !t["role"].is_string() ||
        !t["text"].is_string()) {
      fail(v, "schema", "turn " + std::to_string(d.turns.size() + 1) + " needs string 'role' and 'text'");
      return v;
    }
    const auto role = t["role"].get<std::string>();
    if (role != "patient" && role != "doctor") {
      fail(v, "schema", "unknown role '" + role + "'");
      return v;
    }
    const std::string body = text::trim(t["text"].get<std::string>());
    if (body.empty()) {
      fail(v, "schema", "turn " + std::to_string(d.turns.size() + 1) + " is empty");
      return v;
    }
    d.turns.push_back({parse_role(role), body, d.turns.size() + 1});
  }
  if (d.turns.empty()) {
    fail(v, "schema", "no turns");
    return v;
  }

  const std::size_t rounds = count_rounds(d.turns.size(), cfg.round_mode);
  if (rounds < cfg.min_rounds || rounds > cfg.max_rounds)
    fail(v, "round_count",
         std::to_string(rounds) + " rounds, expected " + std::to_string(cfg.min_rounds) + " to " +
             std::to_string(cfg.max_rounds));

  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::kPatient : Role::kDoctor;
    if (d.turns[i].role != expected) {
      fail(v, "alternation", "turn " + std::to_string(i + 1) + " should be " + std::string(role_name(expected)));
      break;
    }
  }

  for (const Turn& t : d.turns) {
    const std::size_t n = text::utf8_length(t.text);
    if (n > cfg.max_chars) {
      fail(v, "turn_length",
           "turn " + std::to_string(t.index) + " has " + std::to_string(n) + " characters, limit " +
               std::to_string(cfg.max_chars));
      break;
    }
  }

  std::vector<std::string> texts;
  for (const Turn& t : d.turns) texts.push_back(t.text);
  check_privacy(v, texts, cfg);

  v.dialogue = std::move(d);
  return v;
}

Verdict validate_single_turn(std::string_view response, const RuleConfig& cfg) {
  Verdict v;
  auto j = parse_json(response);
  if (!j || !j->is_object()) {
    fail(v, "schema", "reply is not a JSON object");
    return v;
  }
  for (const char* field : {"patient", "doctor"}) {
    if (!j->contains(field) || !(*j)[field].is_string()) {
      fail(v, "schema", std::string("missing string field '") + field + "'");
      return v;
    }
    if (text::trim((*j)[field].get<std::string>()).empty()) {
      fail(v, "schema", std::string("field '") + field + "' is empty");
      return v;
    }
  }
  const std::vector<std::string> texts = {text::trim((*j)["patient"].get<std::string>()),
                                          text::trim((*j)["doctor"].get<std::string>())};
  check_privacy(v, texts, cfg);
  for (const auto& s : texts) {
    bool hit = false;
    for (const auto& marker : cfg.colloquial_markers)
      if (!marker.empty() && s.find(marker) != std::string::npos) {
        fail(v, "colloquial", "contains '" + marker + "'");
        hit = true;
        break;
      }
    if (hit) break;
  }
  Dialogue d = Dialogue::alternating("", texts);
  v.dialogue = std::move(d);
  return v;
}

Verdict validate(TemplateKind kind, std::string_view response, const RuleConfig& cfg) {
  return kind == TemplateKind::kMultiTurn ? validate_multi_turn(response, cfg) : validate_single_turn(response, cfg);
}

// --------------------------------------------------------------- client

HttpChatClient::HttpChatClient(Options opts) : opts_(std::move(opts)) {}

std::string HttpChatClient::complete(const ChatRequest& request) {
  httplib::Client cli(opts_.base_url);
  cli.set_connection_timeout(opts_.timeout_seconds, 0);
  cli.set_read_timeout(opts_.timeout_seconds, 0);
  httplib::Headers headers;
  if (const char* token = std::getenv(opts_.token_env.c_str()); token != nullptr && *token != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + token);

  json body = {{"model", request.model}, {"temperature", request.temperature}, {"messages", json::array()}};
  for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  auto res = cli.Post(opts_.path, headers, body.dump(), "application/json");
  if (!res) throw TransportError("chat service unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("chat service answered HTTP " + std::to_string(res->status));
  json reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw TransportError("chat service returned malformed JSON");
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw TransportError("chat reply has no choices[0].message.content");
  }
}

StubChatClient::StubChatClient(std::map<std::string, std::vector<std::string>> replies,
                               std::vector<std::string> fallback)
    : replies_(std::move(replies)), fallback_(std::move(fallback)) {}

std::unique_ptr<StubChatClient> StubChatClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open stub replies " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("stub replies must be a JSON object of arrays");
  std::map<std::string, std::vector<std::string>> replies;
  std::vector<std::string> fallback;
  for (const auto& [id, list] : j.items()) {
    if (!list.is_array()) throw FormatError("stub replies for '" + id + "' must be an array");
    std::vector<std::string> seq;
    for (const auto& r : list) seq.push_back(r.is_string() ? r.get<std::string>() : r.dump());
    if (id == "*") fallback = std::move(seq);
    else replies[id] = std::move(seq);
  }
  return std::make_unique<StubChatClient>(std::move(replies), std::move(fallback));
}

std::string StubChatClient::complete(const ChatRequest& request) {
  std::string reply;
  {
    std::lock_guard lock(mu_);
    const std::size_t k = calls_[request.tag]++;
    auto it = replies_.find(request.tag);
    const auto& seq = it != replies_.end() ? it->second : fallback_;
    if (seq.empty()) throw TransportError("stub has no reply for '" + request.tag + "'");
    reply = seq[std::min(k, seq.size() - 1)];
  }
  if (reply == kTransportFailure) throw TransportError("stub transport failure");
  return reply;
}

std::size_t StubChatClient::calls(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = calls_.find(id);
  return it == calls_.end() ? 0 : it->second;
}

std::size_t StubChatClient::total_calls() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, c] : calls_) n += c;
  return n;
}

// -------------------------------------------------------------- records

std::vector<RawRecord> read_raw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id"))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected {id, text}");
    RawRecord r;
    r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    if (j.contains("text")) r.text = j["text"].is_string() ? j["text"].get<std::string>() : j["text"].dump();
    else if (j.contains("turns")) r.text = json{{"turns", j["turns"]}}.dump();
    else throw FormatError(path.string() + ":" + std::to_string(lineno) + ": record has no text");
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

json failures_json(const std::vector<RuleFailure>& fs) {
  json a = json::array();
  for (const auto& f : fs) a.push_back({{"rule", f.rule}, {"message", f.message}});
  return a;
}

}  // namespace

json to_json(const CurationRecord& r) {
  json attempts = json::array();
  for (const auto& a : r.attempts)
    attempts.push_back({{"response", a.response},
                        {"passed", a.passed},
                        {"transport_failed", a.transport_failed},
                        {"failures", failures_json(a.failures)}});
  return {{"id", r.id},
          {"raw", r.raw},
          {"prompt", r.prompt},
          {"attempts", attempts},
          {"status", r.status == Status::kAccepted ? "accepted" : "quarantined"},
          {"output", r.output},
          {"source", r.source}};
}

CurationRecord record_from_json(const json& j) {
  try {
    CurationRecord r;
    r.id = j.at("id").get<std::string>();
    r.raw = j.value("raw", "");
    r.prompt = j.value("prompt", "");
    const auto status = j.at("status").get<std::string>();
    if (status == "accepted") r.status = Status::kAccepted;
    else if (status == "quarantined") r.status = Status::kQuarantined;
    else throw FormatError("unknown status '" + status + "'");
    r.output = j.value("output", json());
    r.source = j.value("source", "auto");
    for (const auto& a : j.at("attempts")) {
      Attempt at;
      at.response = a.value("response", "");
      at.passed = a.value("passed", false);
      at.transport_failed = a.value("transport_failed", false);
      for (const auto& f : a.value("failures", json::array()))
        at.failures.push_back({f.at("rule").get<std::string>(), f.value("message", "")});
      r.attempts.push_back(std::move(at));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("curation record: ") + e.what());
  }
}

std::vector<CurationRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<CurationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + ": malformed line");
    out.push_back(record_from_json(j));
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<CurationRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------- curate

namespace {

std::string feedback(const std::vector<RuleFailure>& fs) {
  std::string s = "上面的结果不符合要求，请修改后重新返回：";
  for (const auto& f : fs) s += "\n- [" + f.rule + "] " + f.message;
  return s;
}

json output_of(const Verdict& v, TemplateKind kind, const std::string& id) {
  if (kind == TemplateKind::kSingleTurn)
    return {{"id", id}, {"patient", v.dialogue->turns.at(0).text}, {"doctor", v.dialogue->turns.at(1).text}};
  Dialogue d = *v.dialogue;
  d.id = id;
  return to_json(d);
}

CurationRecord run_record(const RawRecord& raw, const PromptTemplate& tpl, ChatClient& client,
                          const CurateOptions& opts) {
  CurationRecord rec;
  rec.id = raw.id;
  rec.raw = raw.text;
  rec.prompt = render_prompt(raw.text, tpl);

  ChatRequest req;
  req.model = opts.model;
  req.temperature = opts.temperature;
  req.tag = raw.id;
  req.messages.push_back({"user", rec.prompt});

  std::size_t transport_streak = 0;
  for (std::size_t attempt = 1; attempt <= opts.max_checks; ++attempt) {
    std::string reply;
    try {
      reply = client.complete(req);
    } catch (const TransportError& e) {
      Attempt a;
      a.transport_failed = true;
      a.failures.push_back({"transport", e.what()});
      rec.attempts.push_back(std::move(a));
      if (attempt < opts.max_checks) {
        const double scale = std::pow(opts.backoff_factor, static_cast<double>(transport_streak));
        const auto delay = std::chrono::milliseconds(
            static_cast<std::int64_t>(std::llround(static_cast<double>(opts.backoff_initial.count()) * scale)));
        if (opts.sleep) opts.sleep(delay);
        else std::this_thread::sleep_for(delay);
      }
      ++transport_streak;
      continue;
    }
    transport_streak = 0;
    Verdict v = validate(tpl.kind, reply, opts.rules);
    Attempt a;
    a.response = reply;
    a.passed = v.passed;
    a.failures = v.failures;
    rec.attempts.push_back(std::move(a));
    if (v.passed) {
      rec.status = Status::kAccepted;
      rec.output = output_of(v, tpl.kind, raw.id);
      return rec;
    }
    req.messages.push_back({"assistant", reply});
    req.messages.push_back({"user", feedback(v.failures)});
  }
  rec.status = Status::kQuarantined;
  return rec;
}

std::map<std::string, CurationRecord> load_journal(const std::filesystem::path& path) {
  std::map<std::string, CurationRecord> out;
  if (!std::filesystem::exists(path)) return out;
  for (auto& r : read_records(path)) out[r.id] = std::move(r);
  return out;
}

}  // namespace

CurateResult curate(const std::vector<RawRecord>& records, const PromptTemplate& tpl, ChatClient& client,
                    const CurateOptions& opts) {
  if (opts.max_checks < 1) throw ContractError("max_checks must be at least 1");
  if (opts.max_in_flight < 1) throw ContractError("max_in_flight must be at least 1");
  if (opts.backoff_factor < 1.0) throw ContractError("backoff_factor must be at least 1");
  tpl.validate();
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.id.empty()) throw ContractError("raw record without id");
    if (!ids.insert(r.id).second) throw ContractError("duplicate raw record id '" + r.id + "'");
  }

  std::map<std::string, CurationRecord> journaled;
  if (opts.journal) journaled = load_journal(*opts.journal);

  std::vector<std::optional<CurationRecord>> results(records.size());
  std::vector<std::size_t> todo;
  CurateResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto it = journaled.find(records[i].id);
    if (it != journaled.end() && it->second.status == Status::kAccepted) {
      results[i] = it->second;
      ++out.resumed;
    } else {
      todo.push_back(i);
    }
  }

  std::ofstream journal;
  if (opts.journal) {
    if (opts.journal->has_parent_path()) std::filesystem::create_directories(opts.journal->parent_path());
    journal.open(*opts.journal, std::ios::app);
    if (!journal) throw FormatError("cannot open journal " + opts.journal->string());
  }
  std::mutex journal_mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      {
        std::lock_guard lock(error_mu);
        if (error) return;
      }
      try {
        const std::size_t i = todo[k];
        CurationRecord rec = run_record(records[i], tpl, client, opts);
        if (journal.is_open()) {
          std::lock_guard lock(journal_mu);
          journal << to_json(rec).dump() << '\n';
          journal.flush();
        }
        results[i] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(opts.max_in_flight, todo.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  if (n_threads > 0) worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  for (auto& r : results) {
    if (r->status == Status::kAccepted) out.accepted.push_back(std::move(*r));
    else out.quarantined.push_back(std::move(*r));
  }
  return out;
}

CurateResult import_reviewed(CurateResult current, const std::vector<json>& reviewed, TemplateKind kind) {
  for (const auto& entry : reviewed) {
    if (!entry.is_object() || !entry.contains("id") || !entry.contains("output"))
      throw FormatError("reviewed entry needs 'id' and 'output'");
    const auto id = entry["id"].get<std::string>();
    auto it = std::find_if(current.quarantined.begin(), current.quarantined.end(),
                           [&](const CurationRecord& r) { return r.id == id; });
    if (it == current.quarantined.end()) throw ContractError("reviewed id '" + id + "' is not quarantined");
    const json& output = entry["output"];
    const Verdict v = validate(kind, output.is_string() ? output.get<std::string>() : output.dump(), RuleConfig{});
    if (v.failed("schema")) throw ValidationError("reviewed '" + id + "': " + v.failures.front().message);
    CurationRecord rec = std::move(*it);
    current.quarantined.erase(it);
    rec.status = Status::kAccepted;
    rec.source = "reviewed";
    rec.output = output_of(v, kind, id);
    current.accepted.push_back(std::move(rec));
  }
  return current;
}

}  // namespace eyedoc::curation
