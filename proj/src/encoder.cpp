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

#include "eyedoc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eyedoc/errors.hpp"
#include "eyedoc/ops.hpp"
#include "eyedoc/optim.hpp"
#include "json.hpp"

namespace eyedoc::encoder {

using ad::Tensor;
using json = nlohmann::json;

namespace {

std::string layer_key(std::size_t l, const char* name) {
  return "encoder/layer" + std::to_string(l) + "/" + name;
}

}  // namespace

Encoder::Encoder(EncoderConfig config) : config_(config) {
  if (config_.vocab_size <= text::kReservedCount)
    throw ContractError("encoder: vocabulary holds no content tokens");
  if (config_.model_dim % config_.heads != 0)
    throw ContractError("encoder: model_dim must be divisible by heads");
  Rng rng(config_.seed);
  const std::size_t d = config_.model_dim, f = config_.ffn_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_sd = sd / std::sqrt(2.0 * static_cast<double>(config_.layers));
  params_.add("encoder/tok_emb", normal_tensor({config_.vocab_size, d}, 0.5, rng));
  params_.add("encoder/pos_emb", normal_tensor({config_.max_positions, d}, 0.5, rng));
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
    params_.add(layer_key(l, "w2"), normal_tensor({f, d}, out_sd * std::sqrt(double(d) / double(f)), rng));
    params_.add(layer_key(l, "b2"), Tensor::zeros({d}));
  }
  params_.add("encoder/lnf_g", Tensor::full({d}, 1.0));
  params_.add("encoder/lnf_b", Tensor::zeros({d}));
  params_.add("encoder/mlm/w", normal_tensor({d, config_.vocab_size}, 0.01, rng));
  params_.add("encoder/mlm/b", Tensor::zeros({config_.vocab_size}));
}

EncoderOutput Encoder::encode(std::span<const std::int64_t> ids,
                              std::span<const unsigned char> attention_mask) const {
  if (ids.empty()) throw ContractError("encoder: empty input");
  if (!attention_mask.empty() && attention_mask.size() != ids.size())
    throw DimensionError("encoder: attention mask length differs from input length");
  const std::size_t len = std::min(ids.size(), config_.max_positions);
  std::vector<std::int64_t> tok(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(len));
  std::vector<std::int64_t> pos(len);
  std::iota(pos.begin(), pos.end(), 0);

  Tensor x = ad::add(ad::embedding(params_.at("encoder/tok_emb"), tok),
                     ad::embedding(params_.at("encoder/pos_emb"), pos));
  ad::AttentionOptions opt;
  opt.heads = config_.heads;
  opt.causal = false;
  if (!attention_mask.empty()) opt.key_valid.assign(attention_mask.begin(), attention_mask.begin() + static_cast<std::ptrdiff_t>(len));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Tensor h = ad::layer_norm(x, params_.at(layer_key(l, "ln1_g")), params_.at(layer_key(l, "ln1_b")));
    Tensor q = ad::matmul(h, params_.at(layer_key(l, "wq")));
    Tensor k = ad::matmul(h, params_.at(layer_key(l, "wk")));
    Tensor v = ad::matmul(h, params_.at(layer_key(l, "wv")));
    Tensor a = ad::attention(q, k, v, std::nullopt, std::nullopt, opt);
    x = ad::add(x, ad::matmul(a, params_.at(layer_key(l, "wo"))));
    h = ad::layer_norm(x, params_.at(layer_key(l, "ln2_g")), params_.at(layer_key(l, "ln2_b")));
    Tensor u = ad::gelu(ad::add_bias(ad::matmul(h, params_.at(layer_key(l, "w1"))),
                                     params_.at(layer_key(l, "b1"))));
    x = ad::add(x, ad::add_bias(ad::matmul(u, params_.at(layer_key(l, "w2"))),
                                params_.at(layer_key(l, "b2"))));
  }
  Tensor hidden = ad::layer_norm(x, params_.at("encoder/lnf_g"), params_.at("encoder/lnf_b"));
  Tensor cls = ad::slice_rows(hidden, 0, 1);
  return {hidden, cls};
}

std::vector<double> Encoder::cls(std::span<const std::int64_t> ids) const {
  ad::NoGradGuard guard;
  auto out = encode(ids);
  return {out.cls_vector.data().begin(), out.cls_vector.data().end()};
}

Tensor Encoder::mlm_logits(const Tensor& hidden_states,
                           std::span<const std::int64_t> positions) const {
  for (std::int64_t p : positions)
    if (p < 0 || static_cast<std::size_t>(p) >= hidden_states.dim(0))
      throw IndexError("mlm_logits: position " + std::to_string(p) + " outside sequence");
  Tensor rows = ad::embedding(hidden_states, positions);
  return ad::add_bias(ad::matmul(rows, params_.at("encoder/mlm/w")), params_.at("encoder/mlm/b"));
}

Tensor Encoder::mlm_probabilities(const Tensor& hidden_states,
                                  std::span<const std::int64_t> positions) const {
  return ad::softmax(mlm_logits(hidden_states, positions), 1);
}

std::size_t MaskedBatch::flagged() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), 1));
}

MaskedBatch mask_tokens(std::span<const std::int64_t> ids, double rate, std::uint64_t seed,
                        std::size_t vocab_size, MaskPolicy policy) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractError("mask_tokens: rate must lie in [0,1]");
  if (policy.mask_fraction < 0 || policy.random_fraction < 0 ||
      policy.mask_fraction + policy.random_fraction > 1.0 + 1e-12)
    throw ContractError("mask_tokens: invalid policy fractions");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> content(text::kReservedCount,
                                                      static_cast<std::int64_t>(vocab_size) - 1);
  MaskedBatch b;
  b.original_ids.assign(ids.begin(), ids.end());
  b.input_ids = b.original_ids;
  b.flags.assign(ids.size(), 0);
  b.attention_mask.assign(ids.size(), 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == text::kPad) b.attention_mask[i] = 0;
    if (text::Vocabulary::is_reserved(ids[i])) continue;
    if (u(rng) >= rate) continue;
    b.flags[i] = 1;
    const double r = u(rng);
    if (r < policy.mask_fraction)
      b.input_ids[i] = text::kMask;
    else if (r < policy.mask_fraction + policy.random_fraction)
      b.input_ids[i] = content(rng);
  }
  return b;
}

Tensor mlm_loss(const Encoder& encoder, const MaskedBatch& batch) {
  return mlm_loss(encoder, std::span<const MaskedBatch>(&batch, 1));
}

Tensor mlm_loss(const Encoder& encoder, std::span<const MaskedBatch> batches) {
  std::vector<Tensor> logits;
  std::vector<std::int64_t> targets;
  for (const MaskedBatch& b : batches) {
    std::vector<std::int64_t> positions;
    for (std::size_t i = 0; i < b.flags.size(); ++i)
      if (b.flags[i]) {
        positions.push_back(static_cast<std::int64_t>(i));
        targets.push_back(b.original_ids[i]);
      }
    if (positions.empty()) continue;
    auto out = encoder.encode(b.input_ids, b.attention_mask);
    logits.push_back(encoder.mlm_logits(out.hidden_states, positions));
  }
  if (targets.empty()) throw ContractError("mlm_loss: no flagged positions");
  Tensor all = logits.size() == 1 ? logits.front() : ad::concat(logits, 0);
  return ad::cross_entropy(all, targets, ad::Reduction::kMean);
}

PretrainReport pretrain_mlm(Encoder& encoder, const text::Tokenizer& tokenizer,
                            const std::vector<std::string>& corpus, const PretrainConfig& config,
                            const PretrainLogFn& log) {
  std::vector<std::vector<std::int64_t>> seqs;
  for (const auto& line : corpus) {
    if (text::trim(line).empty()) continue;
    seqs.push_back(text::sequence_ids(tokenizer, line, std::min(config.max_len, encoder.config().max_positions),
                                      text::Truncate::kKeepHead));
  }
  if (seqs.empty()) throw ContractError("pretrain_mlm: empty corpus");
  if (config.batch_size == 0) throw ContractError("pretrain_mlm: batch_size must be positive");
  const std::size_t vocab = encoder.config().vocab_size;

  // Fixed held-out masking for before/after comparison.
  std::vector<MaskedBatch> probe;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto b = mask_tokens(seqs[i], config.mask_rate, config.seed * 7919 + i, vocab);
    if (b.flagged()) probe.push_back(std::move(b));
  }
  auto probe_loss = [&] {
    ad::NoGradGuard guard;
    return probe.empty() ? 0.0 : mlm_loss(encoder, probe).item();
  };

  PretrainReport report;
  report.initial_loss = probe_loss();

  ad::ParameterSet& params = encoder.params();
  params.set_requires_grad(true);
  std::vector<Tensor> trainable = params.tensors();
  ad::AdamW opt(trainable, {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const std::size_t per_epoch = (seqs.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::size_t warmup = std::max<std::size_t>(1, total / 20);
  Rng rng(config.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<MaskedBatch> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + config.batch_size); ++j) {
        const std::size_t i = order[j];
        auto b = mask_tokens(seqs[i], config.mask_rate,
                             config.seed + 1000003ull * (epoch + 1) + i, vocab);
        if (b.flagged()) batch.push_back(std::move(b));
      }
      if (batch.empty()) continue;
      opt.set_lr(config.lr * std::min(1.0, double(report.steps + 1) / double(warmup)));
      opt.zero_grad();
      Tensor loss = mlm_loss(encoder, batch);
      loss.backward();
      for (Tensor& p : trainable)
        if (!p.has_grad()) p.zero_grad();
      ad::clip_grad_norm(trainable, 1.0);
      opt.step();
      ++report.steps;
      epoch_total += loss.item();
      ++epoch_batches;
      if (log) log(epoch, report.steps, loss.item());
    }
    report.epoch_train_loss.push_back(epoch_batches ? epoch_total / double(epoch_batches) : 0.0);
  }
  params.set_requires_grad(false);
  for (Tensor& p : trainable) p.clear_grad();
  report.final_loss = probe_loss();
  return report;
}

void save_encoder(const std::filesystem::path& path, const Encoder& encoder,
                  const std::string& extra_metadata_json) {
  const auto& c = encoder.config();
  json meta = json::parse(extra_metadata_json);
  meta["format_version"] = 1;
  meta["kind"] = "encoder";
  meta["encoder"] = {{"vocab_size", c.vocab_size}, {"model_dim", c.model_dim},
                     {"heads", c.heads},           {"layers", c.layers},
                     {"ffn_dim", c.ffn_dim},       {"max_positions", c.max_positions},
                     {"seed", c.seed}};
  ad::Checkpoint ck;
  ck.metadata = meta.dump();
  ck.params = encoder.params();
  ad::save_checkpoint(path, ck);
}

Encoder load_encoder(const std::filesystem::path& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  json meta = json::parse(ck.metadata);
  if (!meta.contains("encoder")) throw FormatError("encoder: checkpoint has no encoder config");
  const auto& e = meta["encoder"];
  EncoderConfig c;
  c.vocab_size = e.at("vocab_size");
  c.model_dim = e.at("model_dim");
  c.heads = e.at("heads");
  c.layers = e.at("layers");
  c.ffn_dim = e.at("ffn_dim");
  c.max_positions = e.at("max_positions");
  c.seed = e.at("seed");
  Encoder enc(c);
  enc.params().load_values(ck.params.subset("encoder/"), true);
  return enc;
}

}  // namespace eyedoc::encoder
