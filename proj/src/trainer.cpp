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


#include "eyedoc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <limits>
#include <numeric>

#include "eyedoc/errors.hpp"
#include "eyedoc/init.hpp"
#include "eyedoc/ops.hpp"
#include "eyedoc/optim.hpp"

namespace eyedoc::trainer {

using ad::Tensor;
using json = nlohmann::json;

void Ablation::validate() const {
  if (only_lora && only_prefix)
    throw ContractError("ablation: only_lora and only_prefix leave nothing to train together");
}

std::string Ablation::name() const {
  std::string s;
  auto add = [&](bool flag, const char* n) {
    if (!flag) return;
    if (!s.empty()) s += "+";
    s += n;
  };
  add(no_kb, "no_kb");
  add(no_roles, "no_roles");
  add(only_lora, "only_lora");
  add(only_prefix, "only_prefix");
  return s.empty() ? "full" : s;
}

void TrainConfig::validate() const {
  ablation.validate();
  if (!(lr > 0)) throw ContractError("train config: lr must be positive");
  if (batch_size == 0 || epochs == 0) throw ContractError("train config: batch_size and epochs must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1))
    throw ContractError("train config: warmup_fraction must lie in [0, 1)");
  if (schedule != "constant" && schedule != "cosine")
    throw ContractError("train config: schedule must be 'constant' or 'cosine'");
  if (!ablation.only_prefix && lora_rank == 0)
    throw ContractError("train config: lora_rank must be positive unless only_prefix");
  if (!ablation.only_lora && prefix_len == 0)
    throw ContractError("train config: prefix_len must be positive unless only_lora");
  if (max_target_tokens == 0) throw ContractError("train config: max_target_tokens must be positive");
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"warmup_fraction", c.warmup_fraction},
          {"schedule", c.schedule},
          {"lora_rank", c.lora_rank},
          {"lora_alpha", c.lora_alpha},
          {"prefix_len", c.prefix_len},
          {"dendritic_form", c.dendritic_form == roles::DendriticForm::kCubic ? "cubic" : "quadratic"},
          {"dense_activation", c.dense_activation == roles::DenseActivation::kTanh ? "tanh" : "identity"},
          {"projection_init_sd", c.projection_init_sd},
          {"weight_decay", c.weight_decay},
          {"clip_norm", c.clip_norm},
          {"max_target_tokens", c.max_target_tokens},
          {"no_kb", c.ablation.no_kb},
          {"no_roles", c.ablation.no_roles},
          {"only_lora", c.ablation.only_lora},
          {"only_prefix", c.ablation.only_prefix},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ValidationError("train config: unknown key '" + key + "'");
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.schedule = j.value("schedule", c.schedule);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
    c.prefix_len = j.value("prefix_len", c.prefix_len);
    c.dendritic_form = roles::parse_form(j.value("dendritic_form", std::string("cubic")));
    c.dense_activation = roles::parse_activation(j.value("dense_activation", std::string("tanh")));
    c.projection_init_sd = j.value("projection_init_sd", c.projection_init_sd);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_target_tokens = j.value("max_target_tokens", c.max_target_tokens);
    c.ablation.no_kb = j.value("no_kb", false);
    c.ablation.no_roles = j.value("no_roles", false);
    c.ablation.only_lora = j.value("only_lora", false);
    c.ablation.only_prefix = j.value("only_prefix", false);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string trimmed = text::trim(all);
  if (!trimmed.empty() && trimmed.front() == '{') {
    try {
      return train_config_from_json(json::parse(trimmed));
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  json j = json::object();
  std::size_t start = 0, lineno = 0;
  while (start < all.size()) {
    std::size_t end = all.find('\n', start);
    if (end == std::string::npos) end = all.size();
    std::string line = all.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = text::trim(line.substr(0, eq));
    const std::string value = text::trim(line.substr(eq + 1));
    json parsed = json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return train_config_from_json(j);
}

Splits split_dataset(const std::vector<Dialogue>& dialogues, const SplitSpec& spec) {
  if (dialogues.size() < 10) throw ContractError("split_dataset: needs at least 10 dialogues");
  const std::size_t parts = spec.train + spec.val + spec.test;
  if (parts == 0) throw ContractError("split_dataset: ratios sum to zero");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dialogues.size(); ++i) groups[dialogues[i].id].push_back(i);
  std::vector<std::string> ids;
  for (const auto& [id, members] : groups) ids.push_back(id);
  Rng rng(spec.seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const double n = static_cast<double>(ids.size());
  const std::size_t n_val = static_cast<std::size_t>(std::llround(n * double(spec.val) / double(parts)));
  const std::size_t n_test = static_cast<std::size_t>(std::llround(n * double(spec.test) / double(parts)));
  Splits s;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    auto& dest = k < n_val ? s.val : (k < n_val + n_test ? s.test : s.train);
    for (std::size_t i : groups[ids[k]]) dest.push_back(dialogues[i]);
  }
  return s;
}

double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  if (step > total_steps) throw ContractError("lr_schedule: step beyond total_steps");
  const double warm = config.warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warm) return config.lr * s / warm;
  if (config.schedule == "cosine" && total_steps > 0) {
    const double span = std::max(1.0, static_cast<double>(total_steps) - warm);
    return config.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * (s - warm) / span));
  }
  return config.lr;
}

Context Context::make(std::shared_ptr<const text::Tokenizer> tok, std::shared_ptr<const encoder::Encoder> enc,
                      std::shared_ptr<kb::KbIndex> index) {
  Context c;
  c.tokenizer = std::move(tok);
  c.encoder = std::move(enc);
  c.kb = std::move(index);
  c.embedder = std::make_shared<kb::EncoderEmbedder>(c.encoder, c.tokenizer);
  return c;
}

PreparedTurn prepare_turn(const Context& ctx, const Dialogue& dialogue, std::size_t turn, bool use_kb,
                          std::size_t max_prompt_tokens) {
  PreparedTurn p;
  std::optional<std::string> knowledge;
  if (use_kb && ctx.kb && ctx.kb->size() > 0) {
    p.retrieval = ctx.kb->retrieve_history(render_history(dialogue, turn), *ctx.embedder);
    if (p.retrieval) knowledge = kb::compose_document(*ctx.kb->get(p.retrieval->doc_id));
  }
  p.input = decoder::assemble_input(knowledge, dialogue, turn, *ctx.tokenizer, max_prompt_tokens);
  p.cls = roles::role_cls(*ctx.encoder, *ctx.tokenizer, dialogue, turn);
  return p;
}

std::vector<TrainingExample> build_examples(const Context& ctx, const std::vector<Dialogue>& dialogues,
                                            const TrainConfig& config, std::size_t context_tokens) {
  std::vector<TrainingExample> out;
  for (const Dialogue& d : dialogues) {
    d.validate();
    for (std::size_t t : d.doctor_turns()) {
      TrainingExample ex;
      ex.dialogue_id = d.id;
      ex.turn = t;
      ex.target = ctx.tokenizer->encode(d.turns[t - 1].text);
      if (ex.target.size() + 1 > config.max_target_tokens) ex.target.resize(config.max_target_tokens - 1);
      ex.target.push_back(text::kEos);
      if (ex.target.size() + 2 > context_tokens)
        throw ContractError("build_examples: target does not fit the context");
      PreparedTurn p = prepare_turn(ctx, d, t, !config.ablation.no_kb, context_tokens - ex.target.size());
      if (p.retrieval) ex.knowledge = p.retrieval->doc_id;
      ex.knowledge_tokens = p.input.knowledge_tokens;
      ex.prompt = std::move(p.input.ids);
      ex.cls = std::move(p.cls);
      if (config.ablation.no_kb && ex.knowledge_tokens != 0)
        throw ContractError("build_examples: knowledge present under no_kb");
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<std::vector<std::int64_t>> lm_sequences(const std::vector<TrainingExample>& examples) {
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    auto s = ex.prompt;
    s.insert(s.end(), ex.target.begin(), ex.target.end());
    out.push_back(std::move(s));
  }
  return out;
}

PeftModel::PeftModel(std::shared_ptr<const decoder::BaseDecoder> base, std::size_t enc_dim,
                     const TrainConfig& config)
    : base_(std::move(base)),
      config_(config),
      lora_(base_->config(),
            {config.ablation.only_prefix ? 0 : config.lora_rank, config.lora_alpha, config.seed * 31 + 1}),
      roles_([&] {
        roles::RoleConfig rc;
        rc.enc_dim = enc_dim;
        rc.model_dim = base_->config().model_dim;
        rc.prefix_len = config.ablation.only_lora ? 0 : config.prefix_len;
        rc.decoder_layers = base_->config().layers;
        rc.form = config.dendritic_form;
        rc.activation = config.dense_activation;
        rc.role_conditioned = !config.ablation.no_roles;
        rc.projection_init_sd = config.projection_init_sd;
        rc.seed = config.seed * 31 + 2;
        return rc;
      }()) {
  config_.validate();
  auto t = trainable();
  t.set_requires_grad(true);
}

ad::ParameterSet PeftModel::trainable() const {
  ad::ParameterSet out;
  if (lora_.enabled()) out.merge(lora_.params());
  if (roles_.config().prefix_len > 0) {
    out.merge(roles_.params().subset("prefix/"));
    if (roles_.config().role_conditioned) out.merge(roles_.params().subset("role/"));
  }
  return out;
}

ad::ParameterSet PeftModel::adapter_params() const {
  ad::ParameterSet out;
  out.merge(lora_.params());
  out.merge(roles_.params());
  return out;
}

decoder::PrefixPack PeftModel::prefix_for(const roles::RoleCls& cls) const {
  if (roles_.config().prefix_len == 0) return {};
  return decoder::PrefixPack::from(roles_.encode(cls.doctor, cls.patient));
}

Tensor PeftModel::example_loss(const TrainingExample& ex) const {
  if (ex.prompt.empty() || ex.target.empty()) throw ContractError("example_loss: empty prompt or target");
  std::vector<std::int64_t> ids = ex.prompt;
  ids.insert(ids.end(), ex.target.begin(), ex.target.end() - 1);
  const decoder::PrefixPack prefix = prefix_for(ex.cls);
  Tensor logits = decoder::forward(*base_, ids, lora_or_null(), &prefix);
  Tensor rows = ad::slice_rows(logits, ex.prompt.size() - 1, ids.size());
  return ad::cross_entropy(rows, ex.target, ad::Reduction::kSum);
}

Tensor PeftModel::batch_loss(std::span<const TrainingExample> batch) const {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  Tensor total = example_loss(batch[0]);
  for (std::size_t i = 1; i < batch.size(); ++i) total = ad::add(total, example_loss(batch[i]));
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

decoder::GenerateResult PeftModel::generate(const std::vector<std::int64_t>& prompt, const roles::RoleCls& cls,
                                            const decoder::GenerateOptions& options) const {
  ad::NoGradGuard guard;
  return decoder::generate(*base_, lora_or_null(), prefix_for(cls), prompt, options);
}

void PeftModel::save(const std::filesystem::path& path, const json& extra) const {
  json meta = extra;
  meta["format_version"] = 1;
  meta["kind"] = "peft_adapters";
  meta["train_config"] = to_json(config_);
  meta["base_version"] = base_->version_tag();
  meta["enc_dim"] = roles_.config().enc_dim;
  ad::Checkpoint ck;
  ck.metadata = meta.dump();
  ck.params = adapter_params();
  ad::save_checkpoint(path, ck);
}

TrainConfig PeftModel::saved_config(const std::filesystem::path& path) {
  const auto ck = ad::load_checkpoint(path);
  const json meta = json::parse(ck.metadata);
  if (meta.value("kind", "") != "peft_adapters") throw FormatError(path.string() + " is not an adapter checkpoint");
  return train_config_from_json(meta.at("train_config"));
}

void PeftModel::load_weights(const std::filesystem::path& path) {
  const auto ck = ad::load_checkpoint(path);
  const json meta = json::parse(ck.metadata);
  if (meta.value("base_version", "") != base_->version_tag())
    throw ContractError("adapter checkpoint was trained on a different base model");
  auto params = adapter_params();
  params.load_values(ck.params, true);
}

double train_step(PeftModel& model, std::span<const TrainingExample> batch, ad::AdamW& optimizer, double lr,
                  double clip_norm) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  optimizer.zero_grad();
  Tensor loss = model.batch_loss(batch);
  loss.backward();
  std::vector<Tensor> params = optimizer.params();
  for (Tensor& p : params)
    if (!p.has_grad()) p.zero_grad();
  if (clip_norm > 0) ad::clip_grad_norm(params, clip_norm);
  optimizer.set_lr(lr);
  optimizer.step();
  return loss.item();
}

double evaluate_loss(const PeftModel& model, std::span<const TrainingExample> examples) {
  if (examples.empty()) throw ContractError("evaluate_loss: no examples");
  ad::NoGradGuard guard;
  double total = 0;
  for (const auto& ex : examples) total += model.example_loss(ex).item();
  return total / static_cast<double>(examples.size());
}

FitReport fit(PeftModel& model, const std::vector<TrainingExample>& train,
              const std::vector<TrainingExample>& val, const FitLogFn& log) {
  if (train.empty()) throw ContractError("fit: no training examples");
  const TrainConfig& cfg = model.config();
  ad::ParameterSet trainable = model.trainable();
  std::vector<Tensor> params = trainable.tensors();
  ad::AdamW opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  FitReport report;
  report.base_checksum = model.base().params().checksum();
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::vector<std::vector<double>> best;
  double best_val = std::numeric_limits<double>::infinity();

  auto emit = [&](StepRecord r) {
    if (log) log(r);
    report.log.push_back(std::move(r));
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<TrainingExample> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(train.size(), (b + 1) * cfg.batch_size); ++i)
        batch.push_back(train[order[i]]);
      const double lr = lr_schedule(report.steps + 1, total, cfg);
      const double loss = train_step(model, batch, opt, lr, cfg.clip_norm);
      ++report.steps;
      sum += loss;
      emit({epoch, report.steps, lr, loss, "train"});
    }
    report.epoch_train_loss.push_back(sum / double(per_epoch));
    if (model.base().params().checksum() != report.base_checksum)
      throw ContractError("fit: frozen base weights changed");
    double score = -static_cast<double>(epoch);  // without validation the last epoch wins
    if (!val.empty()) {
      score = evaluate_loss(model, val);
      report.epoch_val_loss.push_back(score);
      emit({epoch, report.steps, opt.lr(), score, "val"});
    }
    if (score < best_val) {
      best_val = score;
      report.best_epoch = epoch;
      best.clear();
      for (const Tensor& p : params) best.emplace_back(p.data().begin(), p.data().end());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(best[i].begin(), best[i].end(), params[i].mutable_data().begin());
  for (Tensor& p : params) p.clear_grad();
  report.best_val_loss = val.empty() ? 0.0 : best_val;
  return report;
}

void write_log(const std::filesystem::path& path, const std::vector<StepRecord>& log) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write log " + path.string());
  for (const auto& r : log)
    out << json{{"epoch", r.epoch}, {"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"split", r.split}}.dump()
        << '\n';
}

}  // namespace eyedoc::trainer
