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


// Decoder-only language model with LoRA on the query/value projections and
// role-derived key/value prefixes, plus input assembly and generation.
//
// Input layout:  [KB] knowledge [PAT] p1 [DOC] d1 ... [PAT] pt [DOC]
// followed during training by the target response and [EOS].

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eyedoc/checkpoint.hpp"
#include "eyedoc/dialogue.hpp"
#include "eyedoc/roles.hpp"
#include "eyedoc/text.hpp"

namespace eyedoc::decoder {

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 256;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t ffn_dim = 1024;
  std::size_t context = 1536;
  std::uint64_t seed = 2024;
};

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

/// Frozen base weights under "base/...".
class BaseDecoder {
 public:
  explicit BaseDecoder(DecoderConfig config);

  const DecoderConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  std::string version_tag() const { return params_.checksum(); }

 private:
  DecoderConfig config_;
  ad::ParameterSet params_;
};

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 2.0;
  std::uint64_t seed = 77;
};

/// Down [d, r] (random) and up [r, d] (zero) pairs for Q and V of every
/// layer, under "lora/layer<l>/{q,v}/{down,up}". Rank 0 means no adapters.
class LoraAdapters {
 public:
  LoraAdapters(const DecoderConfig& decoder, LoraConfig config);

  const LoraConfig& config() const { return config_; }
  bool enabled() const { return config_.rank > 0; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const ad::Tensor& down(std::size_t layer, char proj) const;
  const ad::Tensor& up(std::size_t layer, char proj) const;

 private:
  LoraConfig config_;
  ad::ParameterSet params_;
};

/// h W + alpha (h down) up. Throws ContractError when rank exceeds the
/// model width.
ad::Tensor lora_fused_projection(const ad::Tensor& h, const ad::Tensor& base_weight,
                                 const ad::Tensor& down, const ad::Tensor& up, double alpha);

/// Per-layer key prefix (doctor-derived) and value prefix (patient-derived).
struct PrefixPack {
  std::vector<ad::Tensor> keys;
  std::vector<ad::Tensor> values;

  static PrefixPack from(const roles::RoleEncoding& enc);
  std::size_t length() const { return keys.empty() ? 0 : keys.front().dim(0); }
  bool empty() const { return length() == 0; }
  /// Throws ContractError on mismatched key/value lengths or layer counts.
  void validate(std::size_t layers, std::size_t model_dim) const;
};

/// Causal multi-head attention where every query also sees the prefix rows.
ad::Tensor prefix_attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v,
                            const PrefixPack* prefix, std::size_t layer, std::size_t heads,
                            std::vector<double>* weights = nullptr);

/// Logits [len, vocab] for a full sequence. `lora` and `prefix` may be null.
ad::Tensor forward(const BaseDecoder& base, std::span<const std::int64_t> ids,
                   const LoraAdapters* lora = nullptr, const PrefixPack* prefix = nullptr);

/// Incremental decoding with a per-session key/value cache.
class DecodeSession {
 public:
  DecodeSession(const BaseDecoder& base, const LoraAdapters* lora, PrefixPack prefix);

  /// Appends `ids` and returns their logits [ids.size(), vocab].
  ad::Tensor feed(std::span<const std::int64_t> ids);
  std::size_t length() const { return length_; }

 private:
  const BaseDecoder& base_;
  const LoraAdapters* lora_;
  PrefixPack prefix_;
  std::vector<ad::Tensor> keys_, values_;
  std::size_t length_ = 0;
};

enum class DecodeMode { kGreedy, kTopK };

struct GenerateOptions {
  std::size_t max_new_tokens = 160;
  DecodeMode mode = DecodeMode::kGreedy;
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 1;
};

struct GenerateResult {
  std::vector<std::int64_t> ids;  // without [EOS]
  bool stopped_at_eos = false;
};

/// Stops at [EOS], at max_new_tokens or when the context is full. Reserved
/// ids other than [EOS] are never emitted. Throws ContractError on an empty
/// prompt.
GenerateResult generate(const BaseDecoder& base, const LoraAdapters* lora, const PrefixPack& prefix,
                        std::span<const std::int64_t> prompt, const GenerateOptions& options = {});

struct InputBudget {
  std::size_t knowledge_chars = 512;
  std::size_t dialogue_chars = 1024;
};

struct ModelInput {
  std::vector<std::int64_t> ids;
  std::size_t knowledge_tokens = 0;  // [KB] marker plus content; 0 without knowledge
  std::size_t dropped_turns = 0;     // oldest turns removed to fit
  std::size_t cursor() const { return ids.size(); }
};

/// Builds the prompt for the doctor response at turn `upto_turn` (turns with
/// index < upto_turn form the history). Oldest turns go first when the
/// budget is exceeded; knowledge is cut from the right only after that.
ModelInput assemble_input(const std::optional<std::string>& knowledge, const Dialogue& dialogue,
                          std::size_t upto_turn, const text::Tokenizer& tok,
                          std::size_t max_tokens, const InputBudget& budget = {});

struct BaseTrainConfig {
  std::size_t epochs = 4;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double warmup_fraction = 0.05;
  std::uint64_t seed = 5;
};

using BaseLogFn = std::function<void(std::size_t epoch, std::size_t step, double loss)>;

/// Full-parameter next-token training of the base model on whole sequences
/// (mean token cross-entropy). Returns the mean loss of each epoch.
std::vector<double> pretrain_base(BaseDecoder& base,
                                  const std::vector<std::vector<std::int64_t>>& sequences,
                                  const BaseTrainConfig& config, const BaseLogFn& log = {});

void save_base(const std::filesystem::path& path, const BaseDecoder& base,
               const std::string& extra_metadata_json = "{}");
BaseDecoder load_base(const std::filesystem::path& path);

}  // namespace eyedoc::decoder
