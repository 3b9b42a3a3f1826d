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

// Command-line front end: toy data, pretraining, fine-tuning, prediction,
// evaluation, curation, knowledge-base maintenance and the HTTP service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "eyedoc/curation.hpp"
#include "eyedoc/metrics.hpp"
#include "eyedoc/service.hpp"
#include "eyedoc/toydata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eyedoc;

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!text::trim(line).empty()) out.push_back(line);
  return out;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
}

// ---------------------------------------------------------------- toy-data

struct ToyArgs {
  fs::path out = "data";
  std::size_t dialogues = 20;
  std::size_t base_dialogues = 400;
  std::size_t rounds = 1;
  std::size_t kb_docs = 12;
  std::size_t mlm_lines = 500;
  std::uint64_t seed = 1;
};

void run_toy(const ToyArgs& a) {
  fs::create_directories(a.out);
  std::vector<Dialogue> train, base;
  for (auto& l : toydata::dialogues({a.dialogues, a.rounds, a.seed, "toy"})) train.push_back(l.dialogue);
  for (auto& l : toydata::dialogues({a.base_dialogues, a.rounds, a.seed + 998, "base"})) base.push_back(l.dialogue);
  write_dialogues(a.out / "dialogues.jsonl", train);
  write_dialogues(a.out / "base_dialogues.jsonl", base);
  std::vector<std::string> docs;
  for (const auto& d : toydata::knowledge_base(a.kb_docs, a.seed + 2)) docs.push_back(kb::to_json(d).dump());
  write_lines(a.out / "kb.jsonl", docs);
  write_lines(a.out / "mlm.txt", toydata::mlm_corpus(a.mlm_lines, a.seed + 4));
  std::vector<std::string> raw;
  for (const auto& d : train) raw.push_back(json{{"id", d.id}, {"text", to_json(d).dump()}}.dump());
  write_lines(a.out / "raw.jsonl", raw);
  std::printf("wrote %zu dialogues, %zu base dialogues, %zu documents, %zu corpus lines to %s\n", train.size(),
              base.size(), docs.size(), a.mlm_lines, a.out.string().c_str());
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  fs::path data = "data";
  fs::path bundle = "bundle";
  std::size_t enc_dim = 64, enc_layers = 1, mlm_epochs = 5;
  std::size_t dim = 128, layers = 2, context = 768, base_epochs = 12;
  double base_lr = 4e-3;
};

void run_pretrain(const PretrainArgs& a) {
  std::vector<std::string> lines = toydata::vocabulary_lines();
  const auto corpus = read_lines(a.data / "mlm.txt");
  lines.insert(lines.end(), corpus.begin(), corpus.end());
  const auto base_dialogues = read_dialogues(a.data / "base_dialogues.jsonl");
  for (const auto& d : base_dialogues)
    for (const auto& t : d.turns) lines.push_back(t.text);
  const auto docs = kb::load_documents(a.data / "kb.jsonl");
  for (const auto& r : docs.rejected) std::fprintf(stderr, "kb: skipped %s\n", r.c_str());
  for (const auto& d : docs.docs) lines.push_back(kb::compose_document(d));

  service::Bundle b;
  b.tokenizer = std::make_shared<text::CharTokenizer>(text::Vocabulary::build(lines));
  encoder::EncoderConfig ec;
  ec.vocab_size = b.tokenizer->vocab_size();
  ec.model_dim = a.enc_dim;
  ec.layers = a.enc_layers;
  ec.ffn_dim = 2 * a.enc_dim;
  b.encoder = std::make_shared<encoder::Encoder>(ec);
  encoder::PretrainConfig pc;
  pc.epochs = a.mlm_epochs;
  const auto mlm = encoder::pretrain_mlm(*b.encoder, *b.tokenizer, corpus, pc);
  std::printf("mlm loss %.4f -> %.4f\n", mlm.initial_loss, mlm.final_loss);

  b.kb = std::make_shared<kb::KbIndex>();
  const auto ctx = b.context();
  for (const auto& d : docs.docs) b.kb->index_document(d, *ctx.embedder);

  decoder::DecoderConfig dc;
  dc.vocab_size = b.tokenizer->vocab_size();
  dc.model_dim = a.dim;
  dc.layers = a.layers;
  dc.ffn_dim = 4 * a.dim;
  dc.context = a.context;
  b.base = std::make_shared<decoder::BaseDecoder>(dc);
  trainer::TrainConfig tc;
  const auto seqs = trainer::lm_sequences(trainer::build_examples(ctx, base_dialogues, tc, dc.context));
  decoder::BaseTrainConfig bc;
  bc.epochs = a.base_epochs;
  bc.lr = a.base_lr;
  const auto losses = decoder::pretrain_base(*b.base, seqs, bc, [](std::size_t epoch, std::size_t step, double loss) {
    if (step % 50 == 0) std::printf("  base epoch %zu step %zu loss %.4f\n", epoch, step, loss);
  });
  for (std::size_t e = 0; e < losses.size(); ++e) std::printf("base epoch %zu loss %.4f\n", e + 1, losses[e]);

  fs::create_directories(a.bundle);
  b.tokenizer->vocabulary().save(a.bundle / service::kVocabFile);
  encoder::save_encoder(a.bundle / service::kEncoderFile, *b.encoder);
  b.kb->save(a.bundle / service::kKbFile);
  decoder::save_base(a.bundle / service::kBaseFile, *b.base);
  std::printf("bundle written to %s (adapters not trained yet)\n", a.bundle.string().c_str());
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
  fs::path config;
  fs::path bundle = "bundle";
  fs::path dialogues = "data/dialogues.jsonl";
  fs::path out;
  fs::path log;
  bool no_split = false;
};

struct Loaded {
  std::shared_ptr<text::CharTokenizer> tok;
  std::shared_ptr<encoder::Encoder> enc;
  std::shared_ptr<kb::KbIndex> kb;
  std::shared_ptr<decoder::BaseDecoder> base;
};

Loaded load_parts(const fs::path& dir) {
  Loaded l;
  l.tok = std::make_shared<text::CharTokenizer>(text::Vocabulary::load(dir / service::kVocabFile));
  l.enc = std::make_shared<encoder::Encoder>(encoder::load_encoder(dir / service::kEncoderFile));
  l.kb = std::make_shared<kb::KbIndex>();
  if (fs::exists(dir / service::kKbFile)) l.kb->load(dir / service::kKbFile);
  l.base = std::make_shared<decoder::BaseDecoder>(decoder::load_base(dir / service::kBaseFile));
  return l;
}

void run_finetune(const FinetuneArgs& a) {
  const trainer::TrainConfig cfg = a.config.empty() ? trainer::TrainConfig{} : trainer::load_train_config(a.config);
  const Loaded parts = load_parts(a.bundle);
  const auto ctx = trainer::Context::make(parts.tok, parts.enc, parts.kb);
  const auto dialogues = read_dialogues(a.dialogues);
  trainer::Splits splits;
  if (a.no_split || dialogues.size() < 10) splits.train = dialogues;
  else splits = trainer::split_dataset(dialogues);
  const std::size_t context = parts.base->config().context;
  const auto train = trainer::build_examples(ctx, splits.train, cfg, context);
  const auto val = trainer::build_examples(ctx, splits.val, cfg, context);
  std::printf("%zu train / %zu val examples, ablation %s\n", train.size(), val.size(), cfg.ablation.name().c_str());

  trainer::PeftModel model(parts.base, parts.enc->config().model_dim, cfg);
  const auto report = trainer::fit(model, train, val, [](const trainer::StepRecord& r) {
    if (r.split == "train" && r.step % 20 == 0)
      std::printf("  epoch %zu step %zu lr %.2e loss %.4f\n", r.epoch, r.step, r.lr, r.loss);
  });
  for (std::size_t e = 0; e < report.epoch_train_loss.size(); ++e)
    std::printf("epoch %zu train %.4f%s\n", e + 1, report.epoch_train_loss[e],
                e < report.epoch_val_loss.size() ? (" val " + std::to_string(report.epoch_val_loss[e])).c_str() : "");
  std::printf("best epoch %zu, final train loss %.5f\n", report.best_epoch, trainer::evaluate_loss(model, train));
  const fs::path out = a.out.empty() ? a.bundle / service::kAdapterFile : a.out;
  model.save(out);
  if (!a.log.empty()) trainer::write_log(a.log, report.log);
  std::printf("adapters written to %s\n", out.string().c_str());
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  fs::path bundle = "bundle";
  fs::path dialogues;
  fs::path pred = "pred.jsonl";
  fs::path ref;
  std::size_t max_new_tokens = 96;
};

void run_predict(const PredictArgs& a) {
  const auto bundle = service::load_bundle(a.bundle);
  const auto ctx = bundle.context();
  const auto& cfg = bundle.model->config();
  const std::size_t context = bundle.base->config().context;
  std::vector<std::string> preds, refs;
  for (const auto& d : read_dialogues(a.dialogues)) {
    for (std::size_t t : d.doctor_turns()) {
      const auto p = trainer::prepare_turn(ctx, d, t, !cfg.ablation.no_kb, context - a.max_new_tokens);
      decoder::GenerateOptions g;
      g.max_new_tokens = a.max_new_tokens;
      const auto out = bundle.model->generate(p.input.ids, p.cls, g);
      const std::string id = d.id + "#" + std::to_string(t);
      preds.push_back(json{{"id", id}, {"text", bundle.tokenizer->decode(out.ids)}}.dump());
      refs.push_back(json{{"id", id}, {"text", d.turns[t - 1].text}}.dump());
    }
  }
  write_lines(a.pred, preds);
  if (!a.ref.empty()) write_lines(a.ref, refs);
  std::printf("%zu predictions written to %s\n", preds.size(), a.pred.string().c_str());
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path pred, ref, compare, json_out, bundle;
  std::string name = "model";
  std::string compare_name = "baseline";
  bool rouge_l = false;
};

void run_evaluate(const EvaluateArgs& a) {
  std::unique_ptr<metrics::EncoderTokenEmbedder> embedder;
  metrics::EvalConfig cfg;
  cfg.rouge_l = a.rouge_l;
  if (!a.bundle.empty()) {
    const Loaded parts = load_parts(a.bundle);
    embedder = std::make_unique<metrics::EncoderTokenEmbedder>(parts.enc, parts.tok);
    cfg.embedder = embedder.get();
  }
  auto report = metrics::evaluate_file(a.pred, a.ref, cfg);
  std::vector<std::pair<std::string, metrics::Aggregates>> rows = {{a.name, report.aggregate}};
  if (!a.compare.empty()) {
    const auto other = metrics::evaluate_file(a.compare, a.ref, cfg);
    metrics::compare(report, other);
    rows.emplace_back(a.compare_name, other.aggregate);
  }
  std::cout << metrics::render_generation_table(rows);
  if (cfg.embedder) std::cout << '\n' << metrics::render_bert_table(rows);
  for (const auto& [metric, t] : report.significance)
    std::printf("%-10s t=%9.4f p=%.4g%s\n", metric.c_str(), t.t, t.p, t.degenerate ? " (degenerate)" : "");
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (!a.json_out.empty()) {
    std::ofstream out(a.json_out);
    out << metrics::to_json(report).dump(2) << '\n';
  }
}

// ---------------------------------------------------------------- curate

struct CurateArgs {
  std::string tpl = "multi_turn";
  fs::path input;
  std::size_t max_checks = 3;
  fs::path stub;
  fs::path out = "curated";
  fs::path rules;
  std::string endpoint = "http://127.0.0.1:8000";
  std::string model = "gpt-3.5-turbo";
  std::size_t parallel = 4;
};

curation::PromptTemplate resolve_template(const std::string& spec) {
  if (spec == "multi_turn" || spec == "single_turn") return curation::PromptTemplate::builtin(curation::parse_kind(spec));
  return curation::load_template(spec);
}

void run_curate(const CurateArgs& a) {
  const auto tpl = resolve_template(a.tpl);
  curation::CurateOptions opts;
  opts.max_checks = a.max_checks;
  opts.max_in_flight = a.parallel;
  opts.model = a.model;
  opts.journal = a.out / "journal.jsonl";
  if (!a.rules.empty()) {
    std::ifstream in(a.rules);
    opts.rules = curation::rule_config_from_json(json::parse(in));
  }
  std::unique_ptr<curation::ChatClient> client;
  if (!a.stub.empty()) {
    client = curation::StubChatClient::from_file(a.stub);
  } else {
    curation::HttpChatClient::Options o;
    o.base_url = a.endpoint;
    client = std::make_unique<curation::HttpChatClient>(o);
  }
  const auto records = curation::read_raw(a.input);
  const auto res = curation::curate(records, tpl, *client, opts);
  curation::write_records(a.out / "accepted.jsonl", res.accepted);
  curation::write_records(a.out / "quarantine.jsonl", res.quarantined);
  std::printf("%zu accepted (%zu resumed), %zu quarantined, journal %s\n", res.accepted.size(), res.resumed,
              res.quarantined.size(), opts.journal->string().c_str());
}

struct ImportArgs {
  fs::path dir = "curated";
  fs::path reviewed;
  std::string kind = "multi_turn";
};

void run_import(const ImportArgs& a) {
  curation::CurateResult current;
  current.accepted = curation::read_records(a.dir / "accepted.jsonl");
  current.quarantined = curation::read_records(a.dir / "quarantine.jsonl");
  std::vector<json> reviewed;
  for (const auto& line : read_lines(a.reviewed)) reviewed.push_back(json::parse(line));
  const auto merged = curation::import_reviewed(std::move(current), reviewed, curation::parse_kind(a.kind));
  curation::write_records(a.dir / "accepted.jsonl", merged.accepted);
  curation::write_records(a.dir / "quarantine.jsonl", merged.quarantined);
  std::printf("%zu accepted, %zu still quarantined\n", merged.accepted.size(), merged.quarantined.size());
}

// ---------------------------------------------------------------- kb

struct KbArgs {
  fs::path bundle = "bundle";
  fs::path docs;
  std::string query;
  std::size_t k = 5;
};

void run_kb_add(const KbArgs& a) {
  const Loaded parts = load_parts(a.bundle);
  const auto ctx = trainer::Context::make(parts.tok, parts.enc, parts.kb);
  const auto report = kb::load_documents(a.docs);
  for (const auto& r : report.rejected) std::fprintf(stderr, "rejected %s\n", r.c_str());
  for (auto d : report.docs) {
    d.id = -1;
    const auto id = parts.kb->index_document(d, *ctx.embedder);
    std::printf("added %lld %s\n", static_cast<long long>(id), d.name.c_str());
  }
  parts.kb->save(a.bundle / service::kKbFile);
}

void run_kb_search(const KbArgs& a) {
  const Loaded parts = load_parts(a.bundle);
  const auto ctx = trainer::Context::make(parts.tok, parts.enc, parts.kb);
  const auto r = parts.kb->search(a.query, *ctx.embedder, a.k == 0 ? 0 : a.k - 1);
  if (!r) {
    std::printf("knowledge base is empty\n");
    return;
  }
  auto show = [&](std::int64_t id, double sim) {
    std::printf("%6lld  %.4f  %s\n", static_cast<long long>(id), sim, parts.kb->get(id)->name.c_str());
  };
  show(r->doc_id, r->similarity);
  for (const auto& [id, sim] : r->runner_ups) show(id, sim);
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  fs::path config;
  fs::path checkpoint = "bundle";
  fs::path adapters;
  std::string sessions = "sessions.db";
};

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void run_serve(const ServeArgs& a) {
  service::ServiceConfig cfg = service::ServiceConfig::from_env();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw FormatError("cannot open " + a.config.string());
    cfg = service::service_config_from_json(json::parse(in));
  }
  auto bundle = std::make_shared<service::Bundle>(service::load_bundle(
      a.checkpoint, a.adapters.empty() ? std::nullopt : std::optional<fs::path>(a.adapters)));
  std::shared_ptr<service::SessionStore> store;
  if (a.sessions == ":memory:") store = std::make_shared<service::MemoryStore>();
  else store = std::make_shared<service::SqliteStore>(a.sessions);
  service::Service svc(bundle, store, cfg);
  service::HttpServer server(svc);
  const int port = server.bind(a.host, a.port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("serving on http://%s:%d/v1 (checkpoint %s)%s\n", a.host.c_str(), port, svc.checkpoint().c_str(),
              cfg.admin_token.empty() ? ", KB admin disabled" : "");
  std::fflush(stdout);
  server.listen();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EyeDoc: knowledge-augmented ophthalmic consultation models"};
  app.require_subcommand(1);

  ToyArgs toy;
  auto* c_toy = app.add_subcommand("toy-data", "Write a synthetic corpus, knowledge base and MLM corpus");
  c_toy->add_option("--out", toy.out, "Output directory");
  c_toy->add_option("--dialogues", toy.dialogues, "Fine-tuning dialogues");
  c_toy->add_option("--base-dialogues", toy.base_dialogues, "Dialogues for base-model pretraining");
  c_toy->add_option("--rounds", toy.rounds, "Patient/doctor exchanges per dialogue");
  c_toy->add_option("--kb-docs", toy.kb_docs, "Knowledge-base documents");
  c_toy->add_option("--mlm-lines", toy.mlm_lines, "MLM corpus lines");
  c_toy->add_option("--seed", toy.seed, "Random seed");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "MLM-adapt the encoder, index the KB, pretrain the base decoder");
  c_pre->add_option("--data", pre.data, "Directory written by toy-data")->check(CLI::ExistingDirectory);
  c_pre->add_option("--bundle", pre.bundle, "Output bundle directory");
  c_pre->add_option("--enc-dim", pre.enc_dim);
  c_pre->add_option("--enc-layers", pre.enc_layers);
  c_pre->add_option("--mlm-epochs", pre.mlm_epochs);
  c_pre->add_option("--dim", pre.dim);
  c_pre->add_option("--layers", pre.layers);
  c_pre->add_option("--context", pre.context);
  c_pre->add_option("--base-epochs", pre.base_epochs);
  c_pre->add_option("--base-lr", pre.base_lr);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Train LoRA and role-conditioned prefixes on a frozen base");
  c_ft->add_option("--config", ft.config, "Training config (JSON or key = value)")->check(CLI::ExistingFile);
  c_ft->add_option("--bundle", ft.bundle, "Bundle directory")->check(CLI::ExistingDirectory);
  c_ft->add_option("--dialogues", ft.dialogues, "Dialogue JSONL")->check(CLI::ExistingFile);
  c_ft->add_option("--out", ft.out, "Adapter checkpoint (default <bundle>/adapters.ckpt)");
  c_ft->add_option("--log", ft.log, "Step log (JSONL)");
  c_ft->add_flag("--no-split", ft.no_split, "Train on every dialogue");

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Greedy replies for every doctor turn of a dialogue file");
  c_pr->add_option("--bundle", pr.bundle)->check(CLI::ExistingDirectory);
  c_pr->add_option("--dialogues", pr.dialogues)->required()->check(CLI::ExistingFile);
  c_pr->add_option("--out", pr.pred, "Predictions JSONL");
  c_pr->add_option("--ref", pr.ref, "Also write references JSONL");
  c_pr->add_option("--max-new-tokens", pr.max_new_tokens);

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score predictions against references");
  c_ev->add_option("--pred", ev.pred)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--ref", ev.ref)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--compare", ev.compare, "Second prediction file for paired t-tests")->check(CLI::ExistingFile);
  c_ev->add_option("--name", ev.name);
  c_ev->add_option("--compare-name", ev.compare_name);
  c_ev->add_option("--json", ev.json_out, "Write the full report");
  c_ev->add_option("--bundle", ev.bundle, "Use this bundle's encoder for BERTScore");
  c_ev->add_flag("--rouge-l", ev.rouge_l, "Also compute ROUGE-L");

  CurateArgs cu;
  auto* c_cu = app.add_subcommand("curate", "Rewrite raw dialogues through a chat service and validate them");
  c_cu->add_option("--template", cu.tpl, "multi_turn, single_turn or a template JSON file");
  c_cu->add_option("--input", cu.input)->required()->check(CLI::ExistingFile);
  c_cu->add_option("--max-checks", cu.max_checks, "Attempts per record")->check(CLI::PositiveNumber);
  c_cu->add_option("--stub", cu.stub, "Canned replies instead of a live service")->check(CLI::ExistingFile);
  c_cu->add_option("--out", cu.out, "Output directory");
  c_cu->add_option("--rules", cu.rules, "Rule overrides (JSON)")->check(CLI::ExistingFile);
  c_cu->add_option("--endpoint", cu.endpoint, "Chat-completion base URL (token from EYEDOC_CHAT_TOKEN)");
  c_cu->add_option("--model", cu.model);
  c_cu->add_option("--parallel", cu.parallel, "Concurrent requests")->check(CLI::PositiveNumber);

  ImportArgs im;
  auto* c_im = app.add_subcommand("review-import", "Move reviewed quarantine records into the accepted set");
  c_im->add_option("--dir", im.dir, "Curation output directory")->check(CLI::ExistingDirectory);
  c_im->add_option("--reviewed", im.reviewed, "JSONL of {id, output}")->required()->check(CLI::ExistingFile);
  c_im->add_option("--template", im.kind, "multi_turn or single_turn");

  KbArgs kba;
  auto* c_kb = app.add_subcommand("kb", "Knowledge-base maintenance");
  c_kb->require_subcommand(1);
  auto* c_kb_add = c_kb->add_subcommand("add", "Index documents from a JSONL file");
  c_kb_add->add_option("--bundle", kba.bundle)->check(CLI::ExistingDirectory);
  c_kb_add->add_option("--docs", kba.docs)->required()->check(CLI::ExistingFile);
  auto* c_kb_search = c_kb->add_subcommand("search", "Rank documents for a query");
  c_kb_search->add_option("--bundle", kba.bundle)->check(CLI::ExistingDirectory);
  c_kb_search->add_option("-q,--query", kba.query)->required();
  c_kb_search->add_option("-k", kba.k);

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Run the HTTP consultation service");
  c_sv->add_option("--host", sv.host);
  c_sv->add_option("--port", sv.port);
  c_sv->add_option("--config", sv.config, "Service settings (JSON)")->check(CLI::ExistingFile);
  c_sv->add_option("--checkpoint", sv.checkpoint, "Bundle directory")->check(CLI::ExistingDirectory);
  c_sv->add_option("--adapters", sv.adapters, "Adapter checkpoint overriding the bundle's")->check(CLI::ExistingFile);
  c_sv->add_option("--sessions", sv.sessions, "SQLite session file, or :memory:");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_toy) run_toy(toy);
    else if (*c_pre) run_pretrain(pre);
    else if (*c_ft) run_finetune(ft);
    else if (*c_pr) run_predict(pr);
    else if (*c_ev) run_evaluate(ev);
    else if (*c_cu) run_curate(cu);
    else if (*c_im) run_import(im);
    else if (*c_kb_add) run_kb_add(kba);
    else if (*c_kb_search) run_kb_search(kba);
    else if (*c_sv) run_serve(sv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
