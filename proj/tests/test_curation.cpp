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

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "doctest.h"
#include "eyedoc/curation.hpp"
#include "httplib.h"

using namespace eyedoc;
using namespace eyedoc::curation;
using nlohmann::json;

namespace {

std::string repeat(const std::string& ch, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += ch;
  return s;
}

// `rounds` patient/doctor exchanges, every utterance `chars` long.
json dialogue(std::size_t rounds, std::size_t chars = 12) {
  json turns = json::array();
  for (std::size_t i = 0; i < 2 * rounds; ++i)
    turns.push_back({{"role", i % 2 == 0 ? "patient" : "doctor"}, {"text", repeat(i % 2 == 0 ? "痒" : "视", chars)}});
  return {{"id", "x"}, {"turns", turns}};
}

std::string good_reply() { return dialogue(12).dump(); }
std::string bad_reply() { return dialogue(9).dump(); }

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("eyedoc_curation_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

CurateOptions quick(std::size_t n) {
  CurateOptions o;
  o.max_checks = n;
  o.max_in_flight = 1;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

std::vector<RawRecord> raws(std::size_t n) {
  std::vector<RawRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"r" + std::to_string(i), "{\"turns\": []}"});
  return out;
}

}  // namespace

TEST_CASE("render_prompt substitutes the placeholder verbatim") {
  PromptTemplate t{TemplateKind::kMultiTurn, "A{d}B", {}};
  CHECK(render_prompt("X", t) == "AXB");

  const std::string raw = R"({"turns": [{"role": "patient", "text": "{d} {{}} 眼"}]})";
  const std::string out = render_prompt(raw, t);
  CHECK(out.substr(1, raw.size()) == raw);
  CHECK(out.size() == raw.size() + 2);

  CHECK_THROWS_AS(render_prompt("X", PromptTemplate{TemplateKind::kMultiTurn, "no slot", {}}), TemplateError);
  CHECK_THROWS_AS(render_prompt("X", PromptTemplate{TemplateKind::kMultiTurn, "{d}{d}", {}}), TemplateError);
}

TEST_CASE("multi-turn template carries all eight precautions from the fixture") {
  const auto tpl = load_template(std::filesystem::path(EYEDOC_FIXTURES) / "multi_turn_template.json");
  CHECK(tpl.kind == TemplateKind::kMultiTurn);
  REQUIRE(tpl.precautions.size() == 8);
  const std::string prompt = render_prompt("RAW", tpl);
  for (std::size_t i = 0; i < tpl.precautions.size(); ++i) {
    CAPTURE(i);
    CHECK(prompt.find(std::to_string(i + 1) + ". " + tpl.precautions[i]) != std::string::npos);
  }
  CHECK(prompt.find("10到15轮") != std::string::npos);
  CHECK(PromptTemplate::builtin(TemplateKind::kMultiTurn).text == tpl.text);
  CHECK(PromptTemplate::builtin(TemplateKind::kSingleTurn).precautions.size() == 3);
}

TEST_CASE("multi-turn validator accepts a well-formed dialogue") {
  const Verdict v = validate_multi_turn(good_reply());
  CHECK(v.passed);
  CHECK(v.failures.empty());
  REQUIRE(v.dialogue);
  CHECK(v.dialogue->turns.size() == 24);
  CHECK_NOTHROW(v.dialogue->validate());

  // Fenced replies are unwrapped.
  CHECK(validate_multi_turn("```json\n" + good_reply() + "\n```").passed);
  // Bare arrays of turns are accepted too.
  CHECK(validate_multi_turn(dialogue(10)["turns"].dump()).passed);
}

TEST_CASE("round count boundaries") {
  auto rounds_ok = [](std::size_t r) { return !validate_multi_turn(dialogue(r).dump()).failed("round_count"); };
  CHECK_FALSE(rounds_ok(9));
  CHECK(rounds_ok(10));
  CHECK(rounds_ok(15));
  CHECK_FALSE(rounds_ok(16));

  const Verdict v = validate_multi_turn(dialogue(9).dump());
  REQUIRE(v.failures.size() == 1);
  CHECK(v.failures[0].rule == "round_count");

  // 21 utterances: 11 exchanges, the last one unanswered; alternation still holds.
  json d = dialogue(11);
  d["turns"].erase(d["turns"].size() - 1);
  CHECK(validate_multi_turn(d.dump()).passed);

  RuleConfig by_utterance = RuleConfig::defaults();
  by_utterance.round_mode = RoundMode::kUtterances;
  CHECK(validate_multi_turn(dialogue(5).dump(), by_utterance).passed);
  CHECK(validate_multi_turn(dialogue(12).dump(), by_utterance).failed("round_count"));
  CHECK(count_rounds(20, RoundMode::kExchanges) == 10);
  CHECK(count_rounds(19, RoundMode::kExchanges) == 10);
  CHECK(count_rounds(20, RoundMode::kUtterances) == 20);
}

TEST_CASE("utterance length boundary counts characters after trimming") {
  json d = dialogue(10);
  d["turns"][3]["text"] = repeat("眼", 30);
  CHECK(validate_multi_turn(d.dump()).passed);
  d["turns"][3]["text"] = "  " + repeat("眼", 30) + " \n";
  CHECK(validate_multi_turn(d.dump()).passed);
  d["turns"][3]["text"] = repeat("眼", 31);
  const Verdict v = validate_multi_turn(d.dump());
  CHECK_FALSE(v.passed);
  REQUIRE(v.failures.size() == 1);
  CHECK(v.failures[0].rule == "turn_length");
  // ASCII counts one per byte.
  d["turns"][3]["text"] = repeat("a", 31);
  CHECK(validate_multi_turn(d.dump()).failed("turn_length"));
}

TEST_CASE("alternation, schema and privacy rules") {
  json d = dialogue(10);
  std::swap(d["turns"][0], d["turns"][1]);
  CHECK(validate_multi_turn(d.dump()).failed("alternation"));

  CHECK(validate_multi_turn("not json").failed("schema"));
  CHECK(validate_multi_turn(R"({"dialogue": []})").failed("schema"));
  CHECK(validate_multi_turn(R"({"turns": [{"role": "patient"}]})").failed("schema"));
  CHECK(validate_multi_turn(R"({"turns": [{"role": "nurse", "text": "a"}]})").failed("schema"));
  CHECK(validate_multi_turn(R"({"turns": []})").failed("schema"));

  const std::vector<std::string> leaks = {"电话13812345678", "王医生说过", "在人民医院看过", "110101199003070011",
                                          "拨打010-12345678"};
  for (const auto& leak : leaks) {
    CAPTURE(leak);
    json p = dialogue(10);
    p["turns"][4]["text"] = leak;
    const Verdict v = validate_multi_turn(p.dump());
    CHECK(v.failed("privacy"));
  }
  // Generic mentions are fine.
  json ok = dialogue(10);
  ok["turns"][5]["text"] = "有变化随时来医院。";
  CHECK(validate_multi_turn(ok.dump()).passed);
}

TEST_CASE("failures are reported in rule order") {
  json d = dialogue(9);
  d["turns"][2]["text"] = repeat("眼", 31);
  d["turns"][6]["text"] = "李大夫开的药";
  const Verdict v = validate_multi_turn(d.dump());
  REQUIRE(v.failures.size() == 3);
  CHECK(v.failures[0].rule == "round_count");
  CHECK(v.failures[1].rule == "turn_length");
  CHECK(v.failures[2].rule == "privacy");

  const Verdict again = validate_multi_turn(d.dump());
  REQUIRE(again.failures.size() == v.failures.size());
  for (std::size_t i = 0; i < v.failures.size(); ++i) CHECK(again.failures[i].message == v.failures[i].message);
}

TEST_CASE("single-turn validator") {
  const json ok = {{"patient", "右眼发红发痒三天，需要用什么药？"}, {"doctor", "考虑过敏性结膜炎，可用抗过敏滴眼液。"}};
  const Verdict v = validate_single_turn(ok.dump());
  CHECK(v.passed);
  REQUIRE(v.dialogue);
  CHECK(v.dialogue->turns.size() == 2);

  json missing = ok;
  missing.erase("doctor");
  CHECK(validate_single_turn(missing.dump()).failed("schema"));
  json empty = ok;
  empty["doctor"] = "  ";
  CHECK(validate_single_turn(empty.dump()).failed("schema"));
  json named = ok;
  named["doctor"] = "我是张医生，考虑结膜炎。";
  CHECK(validate_single_turn(named.dump()).failed("privacy"));
  json chatty = ok;
  chatty["patient"] = "眼睛红了咋办哈哈";
  const Verdict c = validate_single_turn(chatty.dump());
  CHECK(c.failed("colloquial"));
  CHECK_FALSE(c.failed("privacy"));

  RuleConfig custom = RuleConfig::defaults();
  custom.privacy_terms.push_back("抗过敏");
  CHECK(validate_single_turn(ok.dump(), custom).failed("privacy"));
}

TEST_CASE("rule config parsing") {
  const auto c = rule_config_from_json(json{{"round_mode", "utterances"}, {"max_chars", 40}});
  CHECK(c.round_mode == RoundMode::kUtterances);
  CHECK(c.max_chars == 40);
  CHECK_FALSE(c.privacy_patterns.empty());
  CHECK_THROWS_AS(rule_config_from_json(json{{"bogus", 1}}), ValidationError);
  CHECK_THROWS_AS(rule_config_from_json(json{{"min_rounds", 9}, {"max_rounds", 3}}), ValidationError);
}

TEST_CASE("curate: valid first try is accepted after one attempt") {
  StubChatClient client({{"r0", {good_reply()}}});
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(3));
  REQUIRE(res.accepted.size() == 1);
  CHECK(res.quarantined.empty());
  const auto& r = res.accepted[0];
  CHECK(r.attempts.size() == 1);
  CHECK(r.status == Status::kAccepted);
  CHECK(r.output["id"] == "r0");
  CHECK(r.output["turns"].size() == 24);
  CHECK(r.prompt.find(r.raw) != std::string::npos);
}

TEST_CASE("curate: always invalid is quarantined with every attempt logged") {
  StubChatClient client({{"r0", {bad_reply()}}});
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(3));
  CHECK(res.accepted.empty());
  REQUIRE(res.quarantined.size() == 1);
  const auto& r = res.quarantined[0];
  REQUIRE(r.attempts.size() == 3);
  for (const auto& a : r.attempts) {
    CHECK_FALSE(a.passed);
    CHECK(a.response == bad_reply());
    REQUIRE(a.failures.size() == 1);
    CHECK(a.failures[0].rule == "round_count");
  }
  CHECK(client.calls("r0") == 3);
}

TEST_CASE("curate: two failures then a pass is accepted on attempt three") {
  StubChatClient client({{"r0", {bad_reply(), "garbage", good_reply()}}});
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(3));
  REQUIRE(res.accepted.size() == 1);
  const auto& r = res.accepted[0];
  REQUIRE(r.attempts.size() == 3);
  CHECK(r.attempts[0].failures[0].rule == "round_count");
  CHECK(r.attempts[1].failures[0].rule == "schema");
  CHECK(r.attempts[2].passed);
}

TEST_CASE("curate resends the full conversation after a failed check") {
  std::vector<std::size_t> message_counts;
  std::string last_feedback;
  FunctionChatClient client([&](const ChatRequest& req) {
    message_counts.push_back(req.messages.size());
    CHECK(req.temperature == 0.0);
    if (req.messages.size() > 1) last_feedback = req.messages.back().content;
    return message_counts.size() < 3 ? bad_reply() : good_reply();
  });
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(5));
  CHECK(res.accepted.size() == 1);
  CHECK(message_counts == std::vector<std::size_t>{1, 3, 5});
  CHECK(last_feedback.find("round_count") != std::string::npos);
}

TEST_CASE("transport failures use the same budget with exponential backoff") {
  const std::string fail(StubChatClient::kTransportFailure);
  std::vector<std::int64_t> delays;
  CurateOptions opts = quick(4);
  opts.backoff_initial = std::chrono::milliseconds(100);
  opts.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d.count()); };

  StubChatClient client({{"r0", {fail, fail, fail, good_reply()}}});
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, opts);
  REQUIRE(res.accepted.size() == 1);
  const auto& r = res.accepted[0];
  REQUIRE(r.attempts.size() == 4);
  for (int i = 0; i < 3; ++i) CHECK(r.attempts[i].transport_failed);
  CHECK(delays == std::vector<std::int64_t>{100, 200, 400});

  StubChatClient down({{"r0", {fail}}});
  delays.clear();
  opts.max_checks = 2;
  const auto q = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), down, opts);
  REQUIRE(q.quarantined.size() == 1);
  CHECK(q.quarantined[0].attempts.size() == 2);
  CHECK(delays.size() == 1);
}

TEST_CASE("curate partitions 200 records with parallel calls") {
  std::map<std::string, std::vector<std::string>> replies;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::string id = "r" + std::to_string(i);
    switch (i % 4) {
      case 0: replies[id] = {good_reply()}; break;
      case 1: replies[id] = {bad_reply()}; break;
      case 2: replies[id] = {bad_reply(), good_reply()}; break;
      default: replies[id] = {std::string(StubChatClient::kTransportFailure), good_reply()}; break;
    }
  }
  StubChatClient client(replies);
  CurateOptions opts = quick(3);
  opts.max_in_flight = 8;
  const auto records = raws(200);
  const auto res = curate(records, PromptTemplate::builtin(TemplateKind::kMultiTurn), client, opts);

  CHECK(res.accepted.size() + res.quarantined.size() == 200);
  CHECK(res.quarantined.size() == 50);
  std::set<std::string> seen;
  std::size_t attempts = 0;
  for (const auto* set : {&res.accepted, &res.quarantined})
    for (const auto& r : *set) {
      CHECK(seen.insert(r.id).second);
      CHECK(r.attempts.size() <= 3);
      attempts += r.attempts.size();
    }
  CHECK(seen.size() == 200);
  CHECK(client.total_calls() == attempts);
  for (const auto& r : res.accepted) CHECK(r.attempts.back().passed);
  // Input order is kept within each set.
  for (std::size_t i = 1; i < res.accepted.size(); ++i)
    CHECK(std::stoi(res.accepted[i - 1].id.substr(1)) < std::stoi(res.accepted[i].id.substr(1)));
}

TEST_CASE("resume skips accepted records and keeps their attempt counts") {
  const auto dir = temp_dir("resume");
  CurateOptions opts = quick(2);
  opts.journal = dir / "journal.jsonl";
  const auto records = raws(6);
  std::map<std::string, std::vector<std::string>> first;
  for (std::size_t i = 0; i < 6; ++i)
    first["r" + std::to_string(i)] = i % 2 == 0 ? std::vector<std::string>{bad_reply(), good_reply()}
                                                : std::vector<std::string>{bad_reply()};
  StubChatClient a(first);
  const auto run1 = curate(records, PromptTemplate::builtin(TemplateKind::kMultiTurn), a, opts);
  CHECK(run1.accepted.size() == 3);
  CHECK(run1.quarantined.size() == 3);

  StubChatClient b({}, {good_reply()});
  const auto run2 = curate(records, PromptTemplate::builtin(TemplateKind::kMultiTurn), b, opts);
  CHECK(run2.resumed == 3);
  CHECK(run2.accepted.size() == 6);
  CHECK(run2.quarantined.empty());
  CHECK(b.total_calls() == 3);
  for (const auto& r : run2.accepted) {
    const bool resumed = std::stoi(r.id.substr(1)) % 2 == 0;
    CHECK(r.attempts.size() == (resumed ? 2u : 1u));
    CHECK(b.calls(r.id) == (resumed ? 0u : 1u));
  }
  // Append-only journal: 6 lines from the first run, 3 from the second.
  CHECK(read_records(*opts.journal).size() == 9);

  StubChatClient c({}, {bad_reply()});
  const auto run3 = curate(records, PromptTemplate::builtin(TemplateKind::kMultiTurn), c, opts);
  CHECK(run3.resumed == 6);
  CHECK(c.total_calls() == 0);
}

TEST_CASE("reviewed import moves quarantined records") {
  StubChatClient client({}, {bad_reply()});
  auto res = curate(raws(3), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(1));
  REQUIRE(res.quarantined.size() == 3);

  auto merged = import_reviewed(res, {json{{"id", "r1"}, {"output", dialogue(3)}}}, TemplateKind::kMultiTurn);
  CHECK(merged.accepted.size() == 1);
  CHECK(merged.quarantined.size() == 2);
  CHECK(merged.accepted[0].source == "reviewed");
  CHECK(merged.accepted[0].attempts.size() == 1);
  CHECK(merged.accepted[0].output["id"] == "r1");

  CHECK_THROWS_AS(import_reviewed(res, {json{{"id", "zz"}, {"output", dialogue(3)}}}, TemplateKind::kMultiTurn),
                  ContractError);
  CHECK_THROWS_AS(import_reviewed(res, {json{{"id", "r0"}, {"output", json{{"turns", 3}}}}}, TemplateKind::kMultiTurn),
                  ValidationError);
}

TEST_CASE("curate contracts") {
  StubChatClient client({}, {good_reply()});
  const auto tpl = PromptTemplate::builtin(TemplateKind::kMultiTurn);
  CHECK_THROWS_AS(curate(raws(1), tpl, client, quick(0)), ContractError);
  auto dup = raws(2);
  dup[1].id = dup[0].id;
  CHECK_THROWS_AS(curate(dup, tpl, client, quick(1)), ContractError);
  CHECK(curate({}, tpl, client, quick(1)).accepted.empty());
}

TEST_CASE("single-turn curation writes patient/doctor output") {
  const json qa = {{"patient", "眼睛干涩怎么办？"}, {"doctor", "考虑干眼症，可用人工泪液。"}};
  StubChatClient client({}, {qa.dump()});
  const auto res = curate(raws(2), PromptTemplate::builtin(TemplateKind::kSingleTurn), client, quick(2));
  REQUIRE(res.accepted.size() == 2);
  CHECK(res.accepted[0].output["doctor"] == qa["doctor"]);
}

TEST_CASE("files round-trip") {
  const auto dir = temp_dir("files");
  {
    std::ofstream raw(dir / "raw.jsonl");
    raw << R"({"id": "a", "text": "患者：眼痒"})" << "\n\n";
    raw << R"({"id": 7, "turns": [{"role": "patient", "text": "眼红"}]})" << "\n";
    std::ofstream stub(dir / "stub.json");
    stub << json{{"a", {good_reply()}}, {"*", {bad_reply()}}}.dump();
  }
  const auto records = read_raw(dir / "raw.jsonl");
  REQUIRE(records.size() == 2);
  CHECK(records[1].id == "7");
  CHECK(records[1].text.find("眼红") != std::string::npos);

  auto client = StubChatClient::from_file(dir / "stub.json");
  const auto res = curate(records, PromptTemplate::builtin(TemplateKind::kMultiTurn), *client, quick(2));
  CHECK(res.accepted.size() == 1);
  CHECK(res.quarantined.size() == 1);

  write_records(dir / "q.jsonl", res.quarantined);
  const auto back = read_records(dir / "q.jsonl");
  REQUIRE(back.size() == 1);
  CHECK(to_json(back[0]) == to_json(res.quarantined[0]));

  std::ofstream(dir / "bad.jsonl") << "{\"text\": 1}\n";
  CHECK_THROWS_AS(read_raw(dir / "bad.jsonl"), FormatError);
}

TEST_CASE("HTTP chat client speaks the chat-completion convention") {
  httplib::Server server;
  std::string seen_auth;
  json seen_body;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", good_reply()}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("EYEDOC_TEST_CHAT_TOKEN", "sekret", 1);
  HttpChatClient::Options o;
  o.base_url = "http://127.0.0.1:" + std::to_string(port);
  o.token_env = "EYEDOC_TEST_CHAT_TOKEN";
  HttpChatClient client(o);
  const auto res = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), client, quick(2));
  CHECK(res.accepted.size() == 1);
  CHECK(seen_auth == "Bearer sekret");
  CHECK(seen_body["temperature"] == 0.0);
  CHECK(seen_body["messages"].size() == 1);
  CHECK(seen_body["messages"][0]["role"] == "user");

  o.path = "/broken";
  HttpChatClient broken(o);
  CHECK_THROWS_AS(broken.complete(ChatRequest{}), TransportError);

  server.stop();
  th.join();

  HttpChatClient::Options dead;
  dead.base_url = "http://127.0.0.1:" + std::to_string(port);
  dead.timeout_seconds = 1;
  HttpChatClient unreachable(dead);
  const auto q = curate(raws(1), PromptTemplate::builtin(TemplateKind::kMultiTurn), unreachable, quick(2));
  REQUIRE(q.quarantined.size() == 1);
  CHECK(q.quarantined[0].attempts[0].transport_failed);
}
