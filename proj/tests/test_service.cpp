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

#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "eyedoc/service.hpp"
#include "eyedoc/toydata.hpp"
#include "httplib.h"

using namespace eyedoc;
using namespace eyedoc::service;
using nlohmann::json;

namespace {

std::shared_ptr<Bundle> make_bundle(bool with_kb = true, trainer::Ablation ablation = {}) {
  auto b = std::make_shared<Bundle>();
  b->tokenizer = std::make_shared<text::CharTokenizer>(text::Vocabulary::build(toydata::vocabulary_lines()));
  encoder::EncoderConfig ec;
  ec.vocab_size = b->tokenizer->vocab_size();
  ec.model_dim = 8;
  ec.heads = 2;
  ec.layers = 1;
  ec.ffn_dim = 16;
  b->encoder = std::make_shared<encoder::Encoder>(ec);
  b->kb = std::make_shared<kb::KbIndex>();
  if (with_kb) {
    const auto ctx = b->context();
    for (const auto& d : toydata::core_diseases()) b->kb->index_document(d, *ctx.embedder);
  }
  decoder::DecoderConfig dc;
  dc.vocab_size = b->tokenizer->vocab_size();
  dc.model_dim = 8;
  dc.heads = 2;
  dc.layers = 2;
  dc.ffn_dim = 16;
  dc.context = 300;
  b->base = std::make_shared<decoder::BaseDecoder>(dc);
  // Larger weights so greedy replies depend visibly on the prompt.
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 0.4);
  for (const auto& [path, t] : b->base->params().items())
    for (double& x : const_cast<ad::Tensor&>(t).mutable_data()) x += n(rng);
  trainer::TrainConfig tc;
  tc.lora_rank = 2;
  tc.prefix_len = 4;
  tc.projection_init_sd = 0.2;
  tc.ablation = ablation;
  b->model = std::make_shared<trainer::PeftModel>(b->base, ec.model_dim, tc);
  return b;
}

ServiceConfig test_config() {
  ServiceConfig c;
  c.max_new_tokens = 12;
  c.admin_token = "admin-secret";
  return c;
}

std::shared_ptr<const Bundle> shared_bundle() {
  static std::shared_ptr<const Bundle> b = make_bundle();
  return b;
}

Service make_service(std::shared_ptr<const Bundle> b = shared_bundle()) {
  return Service(std::move(b), std::make_shared<MemoryStore>(), test_config());
}

const std::vector<std::string>& script_a() {
  static const std::vector<std::string> s = {"右眼发红发痒，有分泌物", "两天了，早上起来眼屎很多", "需要用什么眼药水？"};
  return s;
}

const std::vector<std::string>& script_b() {
  static const std::vector<std::string> s = {"看东西越来越模糊", "六十多岁了，晚上看灯有光晕", "需要做手术吗？"};
  return s;
}

std::vector<std::string> run_alone(Service& svc, const std::vector<std::string>& script) {
  const auto id = svc.create_session();
  std::vector<std::string> replies;
  for (const auto& t : script) replies.push_back(svc.post_turn(id, t).reply);
  return replies;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("eyedoc_service_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sessions get distinct unguessable ids and start empty") {
  Service svc = make_service();
  const auto a = svc.create_session();
  const auto b = svc.create_session();
  CHECK(a != b);
  CHECK(a.size() == 32);
  CHECK(a.find_first_not_of("0123456789abcdef") == std::string::npos);
  const Session s = svc.transcript(a);
  CHECK(s.dialogue.turns.empty());
  CHECK(s.evidence.empty());
  CHECK(s.config["no_kb"] == false);

  const auto c = svc.create_session(json{{"no_kb", true}});
  CHECK(svc.transcript(c).config["no_kb"] == true);
  CHECK_THROWS_AS(svc.create_session(json{{"temperature", 2}}), ValidationError);
  CHECK_THROWS_AS(svc.create_session(json{{"no_kb", "yes"}}), ValidationError);

  std::set<std::string> ids;
  for (int i = 0; i < 200; ++i) ids.insert(new_session_id());
  CHECK(ids.size() == 200);
}

TEST_CASE("a service without a model is unavailable") {
  Service svc(nullptr, std::make_shared<MemoryStore>(), test_config());
  CHECK_FALSE(svc.ready());
  CHECK_THROWS_AS(svc.create_session(), UnavailableError);
  CHECK_THROWS_AS(svc.post_turn("x", "hi"), UnavailableError);
}

TEST_CASE("post_turn appends both turns and returns evidence") {
  Service svc = make_service();
  const auto id = svc.create_session();
  const TurnResponse r = svc.post_turn(id, "  眼睛红，痒  ");
  CHECK(r.turn == 2);
  CHECK_FALSE(r.reply.empty());
  REQUIRE(r.evidence);
  CHECK(r.evidence->turn == 2);
  CHECK(shared_bundle()->kb->get(r.evidence->doc_id).has_value());
  CHECK(r.evidence->doc_name == shared_bundle()->kb->get(r.evidence->doc_id)->name);
  CHECK(r.evidence->similarity >= -1.0);
  CHECK(r.evidence->similarity <= 1.0);
  CHECK(r.evidence->low_confidence == (r.evidence->similarity < kb::kLowConfidence));
  CHECK(r.trace.checkpoint == shared_bundle()->checkpoint_hash());
  CHECK(r.trace.kb_size == toydata::core_diseases().size());
  CHECK(r.trace.config["no_kb"] == false);
  CHECK_FALSE(r.disclaimer.empty());

  const Session s = svc.transcript(id);
  REQUIRE(s.dialogue.turns.size() == 2);
  CHECK(s.dialogue.turns[0].text == "眼睛红，痒");
  CHECK(s.dialogue.turns[1].text == r.reply);
  CHECK_NOTHROW(s.dialogue.validate());
  REQUIRE(s.traces.size() == 1);
  CHECK(to_json(s.traces[0]) == to_json(r.trace));
}

TEST_CASE("retrieval uses the whole history") {
  Service svc = make_service();
  const auto id = svc.create_session();
  svc.post_turn(id, "右眼发红发痒");
  const auto r = svc.post_turn(id, "有分泌物");
  const Session s = svc.transcript(id);

  Dialogue upto = s.dialogue;
  upto.turns.pop_back();
  const auto ctx = shared_bundle()->context();
  const auto expected = shared_bundle()->kb->retrieve_history(render_history(upto, 4), *ctx.embedder);
  REQUIRE(expected);
  REQUIRE(r.evidence);
  CHECK(r.evidence->doc_id == expected->doc_id);
  CHECK(r.evidence->similarity == doctest::Approx(expected->similarity).epsilon(1e-12));
}

TEST_CASE("post_turn errors leave the session unchanged") {
  Service svc = make_service();
  const auto id = svc.create_session();
  svc.post_turn(id, "眼睛干涩");
  const json before = to_json(svc.transcript(id));
  CHECK_THROWS_AS(svc.post_turn(id, "   "), ValidationError);
  CHECK_THROWS_AS(svc.post_turn(id, ""), ValidationError);
  CHECK(to_json(svc.transcript(id)) == before);
  CHECK_THROWS_AS(svc.post_turn("0123456789abcdef0123456789abcdef", "hi"), NotFoundError);
  CHECK_THROWS_AS(svc.transcript("nope"), NotFoundError);
}

TEST_CASE("a pending doctor turn is a conflict") {
  auto store = std::make_shared<MemoryStore>();
  Service svc(shared_bundle(), store, test_config());
  const auto id = svc.create_session();
  Session s = svc.transcript(id);
  s.dialogue.turns.push_back({Role::kPatient, "眼痛", 1});
  store->put(s);
  CHECK(svc.transcript(id).doctor_pending());
  CHECK_THROWS_AS(svc.post_turn(id, "还在吗"), ConflictError);
}

TEST_CASE("no_kb sessions carry no evidence") {
  Service svc = make_service();
  const auto id = svc.create_session(json{{"no_kb", true}});
  for (const auto& t : script_a()) {
    const auto r = svc.post_turn(id, t);
    CHECK_FALSE(r.evidence.has_value());
    CHECK_FALSE(to_json(r).contains("evidence"));
  }
  const Session s = svc.transcript(id);
  CHECK(s.dialogue.turns.size() == 6);
  CHECK(s.evidence.empty());
  CHECK(s.traces.size() == 3);

  // An adapter trained without knowledge forces no_kb on every session.
  trainer::Ablation ab;
  ab.no_kb = true;
  Service forced = make_service(make_bundle(true, ab));
  const auto f = forced.create_session(json{{"no_kb", false}});
  CHECK(forced.transcript(f).config["no_kb"] == true);
  CHECK_FALSE(forced.post_turn(f, "眼痒").evidence.has_value());
}

TEST_CASE("transcripts grow by two turns per post and reads are stable") {
  Service svc = make_service();
  const auto id = svc.create_session();
  for (std::size_t k = 1; k <= 3; ++k) {
    svc.post_turn(id, script_b()[k - 1]);
    const Session s = svc.transcript(id);
    CHECK(s.dialogue.turns.size() == 2 * k);
    CHECK(s.evidence.size() == k);
    CHECK(s.traces.size() == k);
  }
  CHECK(to_json(svc.transcript(id)) == to_json(svc.transcript(id)));
}

TEST_CASE("replaying patient turns reproduces the replies") {
  Service svc = make_service();
  const auto first = run_alone(svc, script_a());
  const auto again = run_alone(svc, script_a());
  CHECK(first == again);
  Service other = make_service();
  CHECK(run_alone(other, script_a()) == first);
}

TEST_CASE("randomized interleavings never mix sessions") {
  Service svc = make_service();
  const auto alone_a = run_alone(svc, script_a());
  const auto alone_b = run_alone(svc, script_b());
  REQUIRE(alone_a != alone_b);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 6; ++trial) {
    const auto a = svc.create_session();
    const auto b = svc.create_session();
    std::size_t ia = 0, ib = 0;
    std::vector<std::string> got_a, got_b;
    while (ia < 3 || ib < 3) {
      const bool pick_a = ib == 3 || (ia < 3 && rng() % 2 == 0);
      if (pick_a) got_a.push_back(svc.post_turn(a, script_a()[ia++]).reply);
      else got_b.push_back(svc.post_turn(b, script_b()[ib++]).reply);
    }
    CHECK(got_a == alone_a);
    CHECK(got_b == alone_b);
    const Session sa = svc.transcript(a);
    for (std::size_t i = 0; i < 3; ++i) CHECK(sa.dialogue.turns[2 * i].text == script_a()[i]);
  }

  // Two threads, one per session.
  const auto a = svc.create_session();
  const auto b = svc.create_session();
  std::vector<std::string> got_a, got_b;
  std::thread ta([&] {
    for (const auto& t : script_a()) got_a.push_back(svc.post_turn(a, t).reply);
  });
  std::thread tb([&] {
    for (const auto& t : script_b()) got_b.push_back(svc.post_turn(b, t).reply);
  });
  ta.join();
  tb.join();
  CHECK(got_a == alone_a);
  CHECK(got_b == alone_b);
}

TEST_CASE("KB administration") {
  auto bundle = make_bundle();
  Service svc = make_service(bundle);
  kb::DiseaseDoc doc;
  doc.name = "测试性角膜病";
  doc.symptoms = "角膜表面出现细小白点，畏光流泪";
  doc.treatment = "人工泪液";
  json j = kb::to_json(doc);
  j.erase("id");

  CHECK_THROWS_AS(svc.kb_add("", j), UnauthorizedError);
  CHECK_THROWS_AS(svc.kb_add("wrong", j), UnauthorizedError);
  const std::size_t before = bundle->kb->size();
  const auto id = svc.kb_add("admin-secret", j);
  CHECK(bundle->kb->size() == before + 1);

  // The full serialized document retrieves itself with similarity 1.
  const auto self = svc.kb_search("admin-secret", kb::compose_document(doc), 2);
  REQUIRE(self.size() == 2);
  CHECK(self[0].doc_id == id);
  CHECK(self[0].name == doc.name);
  CHECK(self[0].similarity == doctest::Approx(1.0).epsilon(1e-9));

  const auto hits = svc.kb_search("admin-secret", doc.symptoms, 4);
  REQUIRE(hits.size() == 4);
  for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].similarity >= hits[i].similarity);

  // Brute force over the stored embeddings.
  const auto ctx = bundle->context();
  const auto q = ctx.embedder->embed_document(doc.symptoms);
  std::int64_t best = -1;
  double best_sim = -2;
  for (const auto& d : bundle->kb->documents()) {
    const double s = kb::cosine(q, bundle->kb->embedding(d.id));
    if (s > best_sim) best_sim = s, best = d.id;
  }
  CHECK(best == hits[0].doc_id);
  CHECK(best_sim == doctest::Approx(hits[0].similarity).epsilon(1e-12));

  json unnamed = j;
  unnamed["name"] = "";
  CHECK_THROWS_AS(svc.kb_add("admin-secret", unnamed), ValidationError);
  try {
    svc.kb_add("admin-secret", json{{"treatment", "x"}});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("name") != std::string::npos);
    CHECK(msg.find("symptoms") != std::string::npos);
  }

  Service empty = make_service(make_bundle(false));
  CHECK(empty.kb_search("admin-secret", "眼痒").empty());

  ServiceConfig closed = test_config();
  closed.admin_token.clear();
  Service locked(bundle, std::make_shared<MemoryStore>(), closed);
  CHECK_THROWS_AS(locked.kb_search("", "眼痒"), UnauthorizedError);
}

TEST_CASE("a document added live is used by the next turn") {
  auto bundle = make_bundle(false);
  Service svc = make_service(bundle);
  const auto id = svc.create_session();
  CHECK_FALSE(svc.post_turn(id, "眼痒").evidence.has_value());
  kb::DiseaseDoc doc;
  doc.name = "过敏性结膜炎";
  doc.symptoms = "眼痒";
  json j = kb::to_json(doc);
  j.erase("id");
  const auto doc_id = svc.kb_add("admin-secret", j);
  const auto r = svc.post_turn(id, "还是痒");
  REQUIRE(r.evidence);
  CHECK(r.evidence->doc_id == doc_id);
  CHECK(r.trace.kb_size == 1);
}

TEST_CASE("sqlite store persists sessions in WAL mode") {
  const auto dir = temp_dir("sqlite");
  std::string id;
  std::vector<std::string> replies;
  {
    auto store = std::make_shared<SqliteStore>(dir / "sessions.db");
    CHECK(store->journal_mode() == "wal");
    Service svc(shared_bundle(), store, test_config());
    id = svc.create_session();
    for (const auto& t : script_a()) replies.push_back(svc.post_turn(id, t).reply);
    CHECK(store->size() == 1);
  }
  auto reopened = std::make_shared<SqliteStore>(dir / "sessions.db");
  Service svc(shared_bundle(), reopened, test_config());
  const Session s = svc.transcript(id);
  REQUIRE(s.dialogue.turns.size() == 6);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.dialogue.turns[2 * i + 1].text == replies[i]);
  CHECK(s.evidence.size() == 3);
  CHECK_FALSE(reopened->get("missing").has_value());
}

TEST_CASE("session JSON round-trips") {
  Service svc = make_service();
  const auto id = svc.create_session();
  svc.post_turn(id, "眼睛胀痛");
  const Session s = svc.transcript(id);
  CHECK(to_json(session_from_json(to_json(s))) == to_json(s));
}

TEST_CASE("bundle directory round-trip keeps replies") {
  const auto dir = temp_dir("bundle");
  save_bundle(dir, *shared_bundle());
  auto loaded = std::make_shared<Bundle>(load_bundle(dir));
  CHECK(loaded->checkpoint_hash() == shared_bundle()->checkpoint_hash());
  CHECK(loaded->kb->size() == shared_bundle()->kb->size());
  Service a = make_service();
  Service b = make_service(loaded);
  CHECK(run_alone(a, script_b()) == run_alone(b, script_b()));
}

TEST_CASE("status codes") {
  CHECK(status_for(NotFoundError("x")) == 404);
  CHECK(status_for(ValidationError("x")) == 422);
  CHECK(status_for(ConflictError("x")) == 409);
  CHECK(status_for(UnavailableError("x")) == 503);
  CHECK(status_for(UnauthorizedError("x")) == 401);
  CHECK(status_for(FormatError("x")) == 400);
  CHECK(status_for(std::runtime_error("x")) == 500);
}

TEST_CASE("service config parsing") {
  const auto c = service_config_from_json(json{{"max_new_tokens", 20}});
  CHECK(c.max_new_tokens == 20);
  CHECK_THROWS_AS(service_config_from_json(json{{"max_new_tokens", 0}}), ValidationError);
  CHECK_THROWS_AS(service_config_from_json(json{{"port", 1}}), ValidationError);
}

namespace {

struct LiveServer {
  Service& svc;
  HttpServer http;
  int port;
  std::thread th;
  httplib::Client client;

  explicit LiveServer(Service& s)
      : svc(s), http(s), port(http.bind("127.0.0.1", 0)), th([this] { http.listen(); }),
        client("127.0.0.1", port) {
    http.wait_until_ready();
  }
  ~LiveServer() {
    http.stop();
    th.join();
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST_CASE("HTTP API") {
  Service svc = make_service(make_bundle());
  LiveServer live(svc);
  auto& cli = live.client;

  auto health = cli.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto created = cli.Post("/v1/sessions", "", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = body_of(created)["id"];
  CHECK(body_of(created)["config"]["no_kb"] == false);

  auto turn = cli.Post("/v1/sessions/" + id + "/turns", json{{"text", "眼睛红痒"}}.dump(), "application/json");
  REQUIRE(turn);
  CHECK(turn->status == 200);
  const json t = body_of(turn);
  CHECK(t["turn"] == 2);
  CHECK_FALSE(t["reply"].get<std::string>().empty());
  CHECK(t.contains("evidence"));
  CHECK(t["trace"]["checkpoint"] == svc.checkpoint());
  CHECK(t.contains("disclaimer"));

  auto transcript = cli.Get("/v1/sessions/" + id);
  REQUIRE(transcript);
  CHECK(transcript->status == 200);
  const json tr = body_of(transcript);
  CHECK(tr["turns"].size() == 2);
  CHECK(tr["evidence"].size() == 1);
  CHECK(tr["turns"][1]["text"] == t["reply"]);

  auto empty = cli.Post("/v1/sessions/" + id + "/turns", json{{"text", " "}}.dump(), "application/json");
  CHECK(empty->status == 422);
  CHECK(body_of(empty)["error"]["status"] == 422);
  auto no_text = cli.Post("/v1/sessions/" + id + "/turns", json{{"msg", "x"}}.dump(), "application/json");
  CHECK(no_text->status == 422);
  auto bad_json = cli.Post("/v1/sessions/" + id + "/turns", "{oops", "application/json");
  CHECK(bad_json->status == 400);
  auto missing = cli.Post("/v1/sessions/ffffffffffffffffffffffffffffffff/turns", json{{"text", "x"}}.dump(),
                          "application/json");
  CHECK(missing->status == 404);
  CHECK(cli.Get("/v1/sessions/ffffffffffffffffffffffffffffffff")->status == 404);
  CHECK(cli.Get("/v1/nowhere")->status == 404);
  CHECK(body_of(cli.Get("/v1/nowhere"))["error"]["status"] == 404);
  CHECK(body_of(cli.Get("/v1/sessions/" + id))["turns"].size() == 2);

  auto bad_override = cli.Post("/v1/sessions", json{{"config", {{"beam", 4}}}}.dump(), "application/json");
  CHECK(bad_override->status == 422);
  auto nokb = cli.Post("/v1/sessions", json{{"config", {{"no_kb", true}}}}.dump(), "application/json");
  REQUIRE(nokb->status == 201);
  const std::string nid = body_of(nokb)["id"];
  auto nt = cli.Post("/v1/sessions/" + nid + "/turns", json{{"text", "眼痒"}}.dump(), "application/json");
  CHECK(nt->status == 200);
  CHECK_FALSE(body_of(nt).contains("evidence"));

  json doc = {{"name", "测试眼病"}, {"symptoms", "眼前黑影飘动"}};
  CHECK(cli.Post("/v1/kb/docs", doc.dump(), "application/json")->status == 401);
  httplib::Headers auth = {{"Authorization", "Bearer admin-secret"}};
  auto added = cli.Post("/v1/kb/docs", auth, doc.dump(), "application/json");
  REQUIRE(added);
  CHECK(added->status == 201);
  const auto new_id = body_of(added)["id"].get<std::int64_t>();
  CHECK(cli.Post("/v1/kb/docs", auth, json{{"name", ""}}.dump(), "application/json")->status == 422);

  kb::DiseaseDoc as_doc;
  as_doc.name = "测试眼病";
  as_doc.symptoms = "眼前黑影飘动";
  const std::string q = kb::compose_document(as_doc);
  auto search = cli.Get("/v1/kb/search?q=" + httplib::detail::encode_url(q) + "&k=3", auth);
  REQUIRE(search);
  CHECK(search->status == 200);
  const json hits = body_of(search)["results"];
  REQUIRE(hits.size() == 3);
  CHECK(hits[0]["doc_id"] == new_id);
  CHECK(cli.Get("/v1/kb/search?q=x", httplib::Headers{})->status == 401);
  CHECK(cli.Get("/v1/kb/search?q=x&k=abc", auth)->status == 422);
}

TEST_CASE("HTTP: empty KB search and missing model") {
  Service svc = make_service(make_bundle(false));
  {
    LiveServer live(svc);
    httplib::Headers auth = {{"Authorization", "Bearer admin-secret"}};
    auto r = live.client.Get("/v1/kb/search?q=abc", auth);
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r)["results"].empty());
  }
  Service none(nullptr, std::make_shared<MemoryStore>(), test_config());
  LiveServer live(none);
  CHECK(live.client.Get("/v1/health")->status == 503);
  CHECK(live.client.Post("/v1/sessions", "", "application/json")->status == 503);
}

TEST_CASE("HTTP: concurrent sessions stay isolated") {
  Service svc = make_service();
  const auto alone_a = run_alone(svc, script_a());
  const auto alone_b = run_alone(svc, script_b());
  LiveServer live(svc);
  auto converse = [&](const std::vector<std::string>& script, std::vector<std::string>& out) {
    httplib::Client cli("127.0.0.1", live.port);
    const std::string id = body_of(cli.Post("/v1/sessions", "", "application/json"))["id"];
    for (const auto& t : script)
      out.push_back(body_of(cli.Post("/v1/sessions/" + id + "/turns", json{{"text", t}}.dump(), "application/json"))
                        ["reply"]);
  };
  std::vector<std::string> got_a, got_b;
  std::thread ta([&] { converse(script_a(), got_a); });
  std::thread tb([&] { converse(script_b(), got_b); });
  ta.join();
  tb.join();
  CHECK(got_a == alone_a);
  CHECK(got_b == alone_b);
}
