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

// Bidirectional transformer encoder with a masked-language-model head.
//
// After domain adaptation on consultation text it is the shared text
// representation model: its [CLS] vector embeds dialogue histories and
// disease documents, and its token states feed BERTScore.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eyedoc/checkpoint.hpp"
#include "eyedoc/init.hpp"
#include "eyedoc/text.hpp"

namespace eyedoc::encoder {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 512;
  std::size_t max_positions = 512;
  std::uint64_t seed = 1234;
};

struct EncoderOutput {
  ad::Tensor hidden_states;  // [len, model_dim]
  ad::Tensor cls_vector;     // [1, model_dim], row 0 of hidden_states
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  /// Every parameter, under "encoder/...".
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  /// Runs the encoder. `attention_mask` flags real tokens (1) vs padding
  /// (0); empty means all real. Inputs longer than max_positions are cut
  /// from the right.
  EncoderOutput encode(std::span<const std::int64_t> ids,
                       std::span<const unsigned char> attention_mask = {}) const;

  /// Inference-only [CLS] vector (no graph recorded).
  std::vector<double> cls(std::span<const std::int64_t> ids) const;

  /// MLM logits W*h + b for the selected rows of `hidden_states`.
  ad::Tensor mlm_logits(const ad::Tensor& hidden_states,
                        std::span<const std::int64_t> positions) const;
  /// softmax(mlm_logits); each row sums to one.
  ad::Tensor mlm_probabilities(const ad::Tensor& hidden_states,
                               std::span<const std::int64_t> positions) const;

  /// Tag identifying the current weights (parameter checksum).
  std::string version_tag() const { return params_.checksum(); }

 private:
  EncoderConfig config_;
  ad::ParameterSet params_;
};

struct MaskPolicy {
  double mask_fraction = 0.8;    // selected -> [MASK]
  double random_fraction = 0.1;  // selected -> random content token
  // remainder: selected but left unchanged
};

struct MaskedBatch {
  std::vector<std::int64_t> input_ids;     // after masking
  std::vector<std::int64_t> original_ids;  // before masking
  std::vector<unsigned char> flags;        // 1 = scored position
  std::vector<unsigned char> attention_mask;

  std::size_t flagged() const;
};

/// Selects each non-reserved position with probability `rate` and applies
/// the policy. Reserved ids ([CLS], [SEP], [PAD], ...) are never selected.
MaskedBatch mask_tokens(std::span<const std::int64_t> ids, double rate, std::uint64_t seed,
                        std::size_t vocab_size, MaskPolicy policy = {});

/// Mean over flagged positions of -log P(original | masked input).
ad::Tensor mlm_loss(const Encoder& encoder, const MaskedBatch& batch);
/// Same, flagged positions pooled over several sequences.
ad::Tensor mlm_loss(const Encoder& encoder, std::span<const MaskedBatch> batches);

struct PretrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double weight_decay = 0.0;
  double mask_rate = 0.15;
  std::size_t max_len = 128;
  std::uint64_t seed = 99;
};

struct PretrainReport {
  double initial_loss = 0.0;            // held-out masking, before training
  double final_loss = 0.0;              // same masking, after training
  std::vector<double> epoch_train_loss;  // mean over batches
  std::size_t steps = 0;
};

using PretrainLogFn = std::function<void(std::size_t epoch, std::size_t step, double loss)>;

/// Full-parameter MLM adaptation of `encoder` on one sentence per line.
PretrainReport pretrain_mlm(Encoder& encoder, const text::Tokenizer& tokenizer,
                            const std::vector<std::string>& corpus, const PretrainConfig& config,
                            const PretrainLogFn& log = {});

void save_encoder(const std::filesystem::path& path, const Encoder& encoder,
                  const std::string& extra_metadata_json = "{}");
Encoder load_encoder(const std::filesystem::path& path);

}  // namespace eyedoc::encoder
