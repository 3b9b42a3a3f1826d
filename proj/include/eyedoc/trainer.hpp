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


// Parameter-efficient fine-tuning: the frozen base decoder is adapted by
// LoRA pairs and role-conditioned prefixes, trained on (prompt, response)
// examples unrolled from consultation dialogues.

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eyedoc/decoder.hpp"
#include "eyedoc/encoder.hpp"
#include "eyedoc/kb.hpp"
#include "eyedoc/optim.hpp"
#include "eyedoc/roles.hpp"
#include "json.hpp"

namespace eyedoc::trainer {

struct Ablation {
  bool no_kb = false;        // empty knowledge segment
  bool no_roles = false;     // free prefixes instead of role-derived ones
  bool only_lora = false;    // no prefixes at all
  bool only_prefix = false;  // no LoRA pairs

  /// Throws ContractError for only_lora together with only_prefix.
  void validate() const;
  std::string name() const;
};

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  double warmup_fraction = 0.10;
  std::string schedule = "constant";  // after warmup: "constant" or "cosine"
  std::size_t lora_rank = 8;
  double lora_alpha = 2.0;
  std::size_t prefix_len = 100;
  roles::DendriticForm dendritic_form = roles::DendriticForm::kCubic;
  roles::DenseActivation dense_activation = roles::DenseActivation::kTanh;
  double projection_init_sd = 0.02;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::size_t max_target_tokens = 256;
  Ablation ablation;
  std::uint64_t seed = 42;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
/// Reads JSON, or flat "key = value" lines ('#' starts a comment).
TrainConfig load_train_config(const std::filesystem::path& path);

struct SplitSpec {
  std::size_t train = 8, val = 1, test = 1;
  std::uint64_t seed = 7;
};

struct Splits {
  std::vector<Dialogue> train, val, test;
};

/// Assigns whole dialogues (grouped by id) to splits. Needs at least ten
/// dialogues.
Splits split_dataset(const std::vector<Dialogue>& dialogues, const SplitSpec& spec = {});

/// Linear ramp from 0 over the first warmup_fraction of steps, then
/// constant (or cosine decay to zero at total_steps).
double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& config);

/// Shared read-only inference context: tokenizer, frozen encoder and the
/// knowledge index used for retrieval.
struct Context {
  std::shared_ptr<const text::Tokenizer> tokenizer;
  std::shared_ptr<const encoder::Encoder> encoder;
  std::shared_ptr<kb::KbIndex> kb;  // may be empty
  std::shared_ptr<const kb::Embedder> embedder;

  static Context make(std::shared_ptr<const text::Tokenizer> tok,
                      std::shared_ptr<const encoder::Encoder> enc,
                      std::shared_ptr<kb::KbIndex> index = nullptr);
};

struct TrainingExample {
  std::string dialogue_id;
  std::size_t turn = 0;                  // index of the target doctor turn
  std::optional<std::int64_t> knowledge;  // retrieved document id
  std::size_t knowledge_tokens = 0;
  std::vector<std::int64_t> prompt;
  std::vector<std::int64_t> target;  // response ids followed by [EOS]
  roles::RoleCls cls;
};

/// Prompt, retrieval result and role vectors for the doctor turn `turn`.
struct PreparedTurn {
  decoder::ModelInput input;
  std::optional<kb::RetrievalResult> retrieval;
  roles::RoleCls cls;
};

PreparedTurn prepare_turn(const Context& ctx, const Dialogue& dialogue, std::size_t turn,
                          bool use_kb, std::size_t max_prompt_tokens);

/// One example per doctor turn.
std::vector<TrainingExample> build_examples(const Context& ctx, const std::vector<Dialogue>& dialogues,
                                            const TrainConfig& config, std::size_t context_tokens);

/// Prompt followed by target, per example: whole sequences for
/// decoder::pretrain_base.
std::vector<std::vector<std::int64_t>> lm_sequences(const std::vector<TrainingExample>& examples);

/// Frozen base plus the trainable groups selected by the ablation flags.
class PeftModel {
 public:
  PeftModel(std::shared_ptr<const decoder::BaseDecoder> base, std::size_t enc_dim,
            const TrainConfig& config);

  const decoder::BaseDecoder& base() const { return *base_; }
  std::shared_ptr<const decoder::BaseDecoder> base_ptr() const { return base_; }
  const decoder::LoraAdapters& lora() const { return lora_; }
  const roles::RoleDualEncoder& roles() const { return roles_; }
  const TrainConfig& config() const { return config_; }

  /// Adapter, prefix and (when role-conditioned) dendritic parameters.
  ad::ParameterSet trainable() const;
  /// Every adapter-side parameter including bypassed ones.
  ad::ParameterSet adapter_params() const;

  decoder::PrefixPack prefix_for(const roles::RoleCls& cls) const;
  const decoder::LoraAdapters* lora_or_null() const { return lora_.enabled() ? &lora_ : nullptr; }

  /// Sum over target tokens of -log p(target | prompt).
  ad::Tensor example_loss(const TrainingExample& ex) const;
  /// Mean over the batch of example_loss.
  ad::Tensor batch_loss(std::span<const TrainingExample> batch) const;

  decoder::GenerateResult generate(const std::vector<std::int64_t>& prompt, const roles::RoleCls& cls,
                                   const decoder::GenerateOptions& options = {}) const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  /// Loads adapter weights saved by `save` (config must match).
  void load_weights(const std::filesystem::path& path);
  static TrainConfig saved_config(const std::filesystem::path& path);

 private:
  std::shared_ptr<const decoder::BaseDecoder> base_;
  TrainConfig config_;
  decoder::LoraAdapters lora_;
  roles::RoleDualEncoder roles_;
};

/// One optimiser update on `batch`; returns the batch loss.
double train_step(PeftModel& model, std::span<const TrainingExample> batch, ad::AdamW& optimizer,
                  double lr, double clip_norm);

/// Mean example loss without recording a graph.
double evaluate_loss(const PeftModel& model, std::span<const TrainingExample> examples);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::string split;
};

struct FitReport {
  std::vector<double> epoch_train_loss;  // mean of step losses
  std::vector<double> epoch_val_loss;    // empty when there is no validation set
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t steps = 0;
  std::string base_checksum;
  std::vector<StepRecord> log;
};

using FitLogFn = std::function<void(const StepRecord&)>;

/// Trains for config.epochs; after each epoch scores the validation set and
/// keeps the weights of the best epoch, which are restored at the end (the
/// last epoch wins when `val` is empty). Throws ContractError if the base
/// weights change.
FitReport fit(PeftModel& model, const std::vector<TrainingExample>& train,
              const std::vector<TrainingExample>& val, const FitLogFn& log = {});

/// Line-delimited JSON training log.
void write_log(const std::filesystem::path& path, const std::vector<StepRecord>& log);

}  // namespace eyedoc::trainer
