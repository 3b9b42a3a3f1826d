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


#include "eyedoc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "eyedoc/errors.hpp"
#include "eyedoc/init.hpp"
#include "eyedoc/ops.hpp"
#include "eyedoc/optim.hpp"

namespace eyedoc::decoder {

using ad::Tensor;
using json = nlohmann::json;

namespace {

std::string layer_key(std::size_t l, const std::string& name) {
  return "base/layer" + std::to_string(l) + "/" + name;
}

std::string lora_key(std::size_t l, char proj, const char* part) {
  return "lora/layer" + std::to_string(l) + "/" + proj + "/" + part;
}

Tensor project(const Tensor& h, const Tensor& w, const LoraAdapters* lora, std::size_t layer, char proj) {
  if (lora == nullptr || !lora->enabled()) return ad::matmul(h, w);
  return lora_fused_projection(h, w, lora->down(layer, proj), lora->up(layer, proj), lora->config().alpha);
}

// One pre-LN block. `keys`/`values` receive this call's K/V rows; `past_k`
// and `past_v` (cached rows) are prepended when defined.
Tensor block(const BaseDecoder& base, std::size_t l, const Tensor& x, const LoraAdapters* lora,
             const PrefixPack* prefix, const Tensor* past_k, const Tensor* past_v, Tensor* keys,
             Tensor* values, std::size_t offset) {
  const auto& p = base.params();
  Tensor h = ad::layer_norm(x, p.at(layer_key(l, "ln1_g")), p.at(layer_key(l, "ln1_b")));
  Tensor q = project(h, p.at(layer_key(l, "wq")), lora, l, 'q');
  Tensor k = ad::matmul(h, p.at(layer_key(l, "wk")));
  Tensor v = project(h, p.at(layer_key(l, "wv")), lora, l, 'v');
  if (past_k && past_k->defined()) {
    k = ad::concat({*past_k, k}, 0);
    v = ad::concat({*past_v, v}, 0);
  }
  if (keys) *keys = k;
  if (values) *values = v;
  ad::AttentionOptions opt;
  opt.heads = base.config().heads;
  opt.causal = true;
  opt.query_offset = offset;
  std::optional<Tensor> pk, pv;
  if (prefix && !prefix->empty()) {
    pk = prefix->keys.at(l);
    pv = prefix->values.at(l);
  }
  Tensor a = ad::attention(q, k, v, pk, pv, opt);
  Tensor y = ad::add(x, ad::matmul(a, p.at(layer_key(l, "wo"))));
  h = ad::layer_norm(y, p.at(layer_key(l, "ln2_g")), p.at(layer_key(l, "ln2_b")));
  Tensor u = ad::gelu(ad::add_bias(ad::matmul(h, p.at(layer_key(l, "w1"))), p.at(layer_key(l, "b1"))));
  return ad::add(y, ad::add_bias(ad::matmul(u, p.at(layer_key(l, "w2"))), p.at(layer_key(l, "b2"))));
}

Tensor embed(const BaseDecoder& base, std::span<const std::int64_t> ids, std::size_t offset) {
  const auto& c = base.config();
  if (ids.empty()) throw ContractError("decoder: empty input");
  if (offset + ids.size() > c.context)
    throw ContractError("decoder: " + std::to_string(offset + ids.size()) + " positions exceed context " +
                        std::to_string(c.context));
  std::vector<std::int64_t> pos(ids.size());
  std::iota(pos.begin(), pos.end(), static_cast<std::int64_t>(offset));
  return ad::add(ad::embedding(base.params().at("base/tok_emb"), ids),
                 ad::embedding(base.params().at("base/pos_emb"), pos));
}

Tensor head(const BaseDecoder& base, const Tensor& x) {
  const auto& p = base.params();
  return ad::matmul(ad::layer_norm(x, p.at("base/lnf_g"), p.at("base/lnf_b")), p.at("base/head"));
}

}  // namespace

json to_json(const DecoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"model_dim", c.model_dim}, {"heads", c.heads},
          {"layers", c.layers},         {"ffn_dim", c.ffn_dim},     {"context", c.context},
          {"seed", c.seed}};
}

DecoderConfig decoder_config_from_json(const json& j) {
  DecoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.model_dim = j.at("model_dim");
  c.heads = j.at("heads");
  c.layers = j.at("layers");
  c.ffn_dim = j.at("ffn_dim");
  c.context = j.at("context");
  c.seed = j.value("seed", c.seed);
  return c;
}

BaseDecoder::BaseDecoder(DecoderConfig config) : config_(config) {
  if (config_.vocab_size <= text::kReservedCount)
    throw ContractError("decoder: vocabulary holds no content tokens");
  if (config_.heads == 0 || config_.model_dim % config_.heads != 0)
    throw ContractError("decoder: model_dim must be divisible by heads");
  Rng rng(config_.seed);
  const std::size_t d = config_.model_dim, f = config_.ffn_dim;
  const double sd = 0.02;
  const double out_sd = sd / std::sqrt(2.0 * static_cast<double>(config_.layers));
  params_.add("base/tok_emb", normal_tensor({config_.vocab_size, d}, sd, rng));
  params_.add("base/pos_emb", normal_tensor({config_.context, d}, sd, rng));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    params_.add(layer_key(l, "ln1_g"), Tensor::full({d}, 1.0));
    params_.add(layer_key(l, "ln1_b"), Tensor::zeros({d}));
    params_.add(layer_key(l, "wq"), normal_tensor({d, d}, sd, rng));
    params_.add(layer_key(l, "wk"), normal_tensor({d, d}, sd, rng));
    params_.add(layer_key(l, "wv"), normal_tensor({d, d}, sd, rng));
    params_.add(layer_key(l, "wo"), normal_tensor({d, d}, out_sd, rng));
    params_.add(layer_key(l, "ln2_g"), Tensor::full({d}, 1.0));
    params_.add(layer_key(l, "ln2_b"), Tensor::zeros({d}));
    params_.add(layer_key(l, "w1"), normal_tensor({d, f}, sd, rng));
    params_.add(layer_key(l, "b1"), Tensor::zeros({f}));
    params_.add(layer_key(l, "w2"), normal_tensor({f, d}, out_sd, rng));
    params_.add(layer_key(l, "b2"), Tensor::zeros({d}));
  }
  params_.add("base/lnf_g", Tensor::full({d}, 1.0));
  params_.add("base/lnf_b", Tensor::zeros({d}));
  params_.add("base/head", normal_tensor({d, config_.vocab_size}, sd, rng));
}

LoraAdapters::LoraAdapters(const DecoderConfig& decoder, LoraConfig config) : config_(config) {
  if (config_.rank == 0) return;
  const std::size_t d = decoder.model_dim, r = config_.rank;
  if (r > d) throw ContractError("lora: rank " + std::to_string(r) + " exceeds model width");
  Rng rng(config_.seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < decoder.layers; ++l)
    for (char proj : {'q', 'v'}) {
      params_.add(lora_key(l, proj, "down"), normal_tensor({d, r}, sd, rng));
      params_.add(lora_key(l, proj, "up"), Tensor::zeros({r, d}));
    }
}

const Tensor& LoraAdapters::down(std::size_t layer, char proj) const {
  return params_.at(lora_key(layer, proj, "down"));
}

const Tensor& LoraAdapters::up(std::size_t layer, char proj) const {
  return params_.at(lora_key(layer, proj, "up"));
}

Tensor lora_fused_projection(const Tensor& h, const Tensor& base_weight, const Tensor& down,
                             const Tensor& up, double alpha) {
  if (down.rank() != 2 || up.rank() != 2 || down.dim(1) != up.dim(0))
    throw DimensionError("lora: down [d, r] and up [r, d] do not line up");
  if (down.dim(1) > down.dim(0)) throw ContractError("lora: rank exceeds model width");
  return ad::add(ad::matmul(h, base_weight), ad::scale(ad::matmul(ad::matmul(h, down), up), alpha));
}

PrefixPack PrefixPack::from(const roles::RoleEncoding& enc) {
  return {enc.key_prefix, enc.value_prefix};
}

void PrefixPack::validate(std::size_t layers, std::size_t model_dim) const {
  if (keys.empty() && values.empty()) return;
  if (keys.size() != layers || values.size() != layers)
    throw ContractError("prefix: expected one key and one value prefix per layer");
  for (std::size_t l = 0; l < layers; ++l) {
    if (keys[l].shape() != values[l].shape() || keys[l].dim(0) != length())
      throw ContractError("prefix: key and value prefixes differ in length");
    if (keys[l].dim(1) != model_dim) throw DimensionError("prefix: width differs from model width");
  }
}

Tensor prefix_attention(const Tensor& q, const Tensor& k, const Tensor& v, const PrefixPack* prefix,
                        std::size_t layer, std::size_t heads, std::vector<double>* weights) {
  ad::AttentionOptions opt;
  opt.heads = heads;
  opt.causal = true;
  std::optional<Tensor> pk, pv;
  if (prefix && !(prefix->keys.empty() && prefix->values.empty())) {
    if (layer >= prefix->keys.size() || layer >= prefix->values.size())
      throw ContractError("prefix_attention: no prefix for layer " + std::to_string(layer));
    pk = prefix->keys[layer];
    pv = prefix->values[layer];
    if (pk->dim(0) == 0 && pv->dim(0) == 0) pk = pv = std::nullopt;
  }
  return ad::attention_with_weights(q, k, v, pk, pv, opt, weights);
}

Tensor forward(const BaseDecoder& base, std::span<const std::int64_t> ids, const LoraAdapters* lora,
               const PrefixPack* prefix) {
  if (prefix) prefix->validate(base.config().layers, base.config().model_dim);
  Tensor x = embed(base, ids, 0);
  for (std::size_t l = 0; l < base.config().layers; ++l)
    x = block(base, l, x, lora, prefix, nullptr, nullptr, nullptr, nullptr, 0);
  return head(base, x);
}

DecodeSession::DecodeSession(const BaseDecoder& base, const LoraAdapters* lora, PrefixPack prefix)
    : base_(base), lora_(lora), prefix_(std::move(prefix)) {
  prefix_.validate(base.config().layers, base.config().model_dim);
  keys_.resize(base.config().layers);
  values_.resize(base.config().layers);
}

Tensor DecodeSession::feed(std::span<const std::int64_t> ids) {
  ad::NoGradGuard guard;
  Tensor x = embed(base_, ids, length_);
  for (std::size_t l = 0; l < base_.config().layers; ++l) {
    Tensor k, v;
    x = block(base_, l, x, lora_, &prefix_, &keys_[l], &values_[l], &k, &v, length_);
    keys_[l] = k;
    values_[l] = v;
  }
  length_ += ids.size();
  return head(base_, x);
}

GenerateResult generate(const BaseDecoder& base, const LoraAdapters* lora, const PrefixPack& prefix,
                        std::span<const std::int64_t> prompt, const GenerateOptions& options) {
  if (prompt.empty()) throw ContractError("generate: empty input");
  const std::size_t vocab = base.config().vocab_size;
  DecodeSession session(base, lora, prefix);
  Tensor logits = session.feed(prompt);
  Rng rng(options.seed);
  GenerateResult out;
  std::vector<double> row(vocab);
  while (out.ids.size() < options.max_new_tokens) {
    const auto data = logits.data();
    std::copy(data.end() - static_cast<std::ptrdiff_t>(vocab), data.end(), row.begin());
    for (std::int64_t r = 0; r < text::kReservedCount; ++r)
      if (r != text::kEos) row[static_cast<std::size_t>(r)] = -std::numeric_limits<double>::infinity();
    std::int64_t next = 0;
    if (options.mode == DecodeMode::kGreedy) {
      next = std::max_element(row.begin(), row.end()) - row.begin();
    } else {
      std::vector<std::size_t> order(vocab);
      std::iota(order.begin(), order.end(), 0);
      const std::size_t k = std::clamp<std::size_t>(options.top_k, 1, vocab);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
      std::vector<double> w(k);
      const double t = options.temperature > 0 ? options.temperature : 1.0;
      for (std::size_t i = 0; i < k; ++i) w[i] = std::exp((row[order[i]] - row[order[0]]) / t);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      next = static_cast<std::int64_t>(order[pick(rng)]);
    }
    if (next == text::kEos) {
      out.stopped_at_eos = true;
      break;
    }
    out.ids.push_back(next);
    if (session.length() >= base.config().context) break;
    const std::int64_t one[1] = {next};
    logits = session.feed(one);
  }
  return out;
}

ModelInput assemble_input(const std::optional<std::string>& knowledge, const Dialogue& dialogue,
                          std::size_t upto_turn, const text::Tokenizer& tok, std::size_t max_tokens,
                          const InputBudget& budget) {
  if (upto_turn < 1) throw ContractError("assemble_input: turn index starts at 1");
  std::vector<std::int64_t> know;
  if (knowledge) {
    know.push_back(text::kKnowledge);
    const auto body = tok.encode(text::utf8_head(*knowledge, budget.knowledge_chars));
    know.insert(know.end(), body.begin(), body.end());
  }
  struct Block {
    std::int64_t marker;
    std::vector<std::int64_t> body;
  };
  std::vector<Block> turns;
  for (const Turn& t : dialogue.turns) {
    if (t.index >= upto_turn) break;
    turns.push_back({t.role == Role::kPatient ? text::kPatient : text::kDoctor, tok.encode(t.text)});
  }
  ModelInput in;
  auto dialogue_tokens = [&] {
    std::size_t n = 0;
    for (const Block& b : turns) n += 1 + b.body.size();
    return n;
  };
  auto dialogue_chars = [&] {
    std::size_t n = 0;
    for (const Block& b : turns) n += b.body.size();
    return n;
  };
  auto total = [&] { return know.size() + dialogue_tokens() + 1; };
  while (turns.size() > 1 && (dialogue_chars() > budget.dialogue_chars || total() > max_tokens)) {
    turns.erase(turns.begin());
    ++in.dropped_turns;
  }
  if (!turns.empty() && turns.front().body.size() > budget.dialogue_chars) {
    auto& b = turns.front().body;
    b.erase(b.begin(), b.end() - static_cast<std::ptrdiff_t>(budget.dialogue_chars));
  }
  if (total() > max_tokens && !know.empty()) {
    const std::size_t excess = total() - max_tokens;
    know.resize(know.size() > excess + 1 ? know.size() - excess : 1);
  }
  if (total() > max_tokens && !turns.empty()) {
    auto& b = turns.front().body;
    const std::size_t excess = std::min(b.size(), total() - max_tokens);
    b.erase(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(excess));
  }
  if (total() > max_tokens) throw ContractError("assemble_input: token budget too small");
  in.ids = know;
  in.knowledge_tokens = know.size();
  for (const Block& b : turns) {
    in.ids.push_back(b.marker);
    in.ids.insert(in.ids.end(), b.body.begin(), b.body.end());
  }
  in.ids.push_back(text::kDoctor);
  return in;
}

std::vector<double> pretrain_base(BaseDecoder& base, const std::vector<std::vector<std::int64_t>>& sequences,
                                  const BaseTrainConfig& config, const BaseLogFn& log) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (sequences[i].size() >= 2) usable.push_back(i);
  if (usable.empty()) throw ContractError("pretrain_base: no sequence with at least two tokens");
  if (config.batch_size == 0) throw ContractError("pretrain_base: batch_size must be positive");
  auto& params = base.params();
  params.set_requires_grad(true);
  std::vector<Tensor> trainable = params.tensors();
  ad::AdamW opt(trainable, {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const std::size_t per_epoch = (usable.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::size_t warmup = std::max<std::size_t>(1, static_cast<std::size_t>(config.warmup_fraction * double(total)));
  Rng rng(config.seed);
  std::vector<double> epoch_loss;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), rng);
    double sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < usable.size(); start += config.batch_size) {
      // Linear warmup, then cosine decay to a tenth of the peak.
      double lr = config.lr;
      if (step < warmup) {
        lr *= double(step + 1) / double(warmup);
      } else {
        const double t = double(step - warmup) / double(std::max<std::size_t>(1, total - warmup));
        lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
      }
      opt.set_lr(lr);
      opt.zero_grad();
      std::vector<Tensor> parts;
      std::size_t tokens = 0;
      for (std::size_t j = start; j < std::min(usable.size(), start + config.batch_size); ++j) {
        const auto& seq = sequences[usable[j]];
        std::span<const std::int64_t> in(seq.data(), seq.size() - 1);
        std::span<const std::int64_t> target(seq.data() + 1, seq.size() - 1);
        parts.push_back(ad::cross_entropy(forward(base, in), target, ad::Reduction::kSum));
        tokens += target.size();
      }
      Tensor loss = parts.front();
      for (std::size_t i = 1; i < parts.size(); ++i) loss = ad::add(loss, parts[i]);
      loss = ad::scale(loss, 1.0 / double(tokens));
      loss.backward();
      for (Tensor& p : trainable)
        if (!p.has_grad()) p.zero_grad();
      ad::clip_grad_norm(trainable, 1.0);
      opt.step();
      ++step;
      sum += loss.item();
      ++batches;
      if (log) log(epoch, step, loss.item());
    }
    epoch_loss.push_back(sum / double(batches));
  }
  params.set_requires_grad(false);
  for (Tensor& p : trainable) p.clear_grad();
  return epoch_loss;
}

void save_base(const std::filesystem::path& path, const BaseDecoder& base,
               const std::string& extra_metadata_json) {
  json meta = json::parse(extra_metadata_json);
  meta["format_version"] = 1;
  meta["kind"] = "base_decoder";
  meta["decoder"] = to_json(base.config());
  ad::Checkpoint ck;
  ck.metadata = meta.dump();
  ck.params = base.params();
  ad::save_checkpoint(path, ck);
}

BaseDecoder load_base(const std::filesystem::path& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  json meta = json::parse(ck.metadata);
  if (!meta.contains("decoder")) throw FormatError("checkpoint has no decoder config");
  BaseDecoder base(decoder_config_from_json(meta["decoder"]));
  base.params().load_values(ck.params.subset("base/"), true);
  return base;
}

}  // namespace eyedoc::decoder
