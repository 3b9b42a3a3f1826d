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

// Doctor/patient dual coding: each role's history is embedded by the
// encoder, lifted by a role-specific dendritic network and projected to
// per-layer attention prefixes (doctor -> keys, patient -> values).

#pragma once

#include <span>
#include <string>
#include <vector>

#include "eyedoc/checkpoint.hpp"
#include "eyedoc/dialogue.hpp"
#include "eyedoc/encoder.hpp"

namespace eyedoc::roles {

/// cubic:     H' = W2((W1 T) * T * T)
/// quadratic: H' = W2((W1 T) * T)
enum class DendriticForm { kCubic, kQuadratic };
enum class DenseActivation { kTanh, kIdentity };

DendriticForm parse_form(std::string_view s);
DenseActivation parse_activation(std::string_view s);

struct DendriticWeights {
  ad::Tensor dense;  // [d_enc, d_enc], bias-free
  ad::Tensor w1;     // [d_enc, d_enc]
  ad::Tensor w2;     // [d_enc, d_enc]
};

/// T = act(cls Dense); returns H' as [1, d_enc]. `cls` is [1, d_enc].
ad::Tensor dendritic_forward(const ad::Tensor& cls, const DendriticWeights& w,
                             DendriticForm form = DendriticForm::kCubic,
                             DenseActivation act = DenseActivation::kTanh);

/// role_vec [1, d_enc] times projection [d_enc, prefix_len * model_dim],
/// reshaped to [prefix_len, model_dim].
ad::Tensor to_prefix(const ad::Tensor& role_vec, const ad::Tensor& projection,
                     std::size_t prefix_len, std::size_t model_dim);

struct SplitHistory {
  std::vector<std::string> doctor;   // doctor turns with index < t, in order
  std::vector<std::string> patient;  // patient turns with index < t, in order
};

SplitHistory split_history(const Dialogue& dialogue, std::size_t upto_turn);

struct RoleConfig {
  std::size_t enc_dim = 128;
  std::size_t model_dim = 256;
  std::size_t prefix_len = 100;
  std::size_t decoder_layers = 4;
  DendriticForm form = DendriticForm::kCubic;
  DenseActivation activation = DenseActivation::kTanh;
  /// false: prefixes are free parameters and the dendritic weights are
  /// bypassed entirely.
  bool role_conditioned = true;
  double projection_init_sd = 0.02;
  std::uint64_t seed = 4321;
};

struct RoleEncoding {
  ad::Tensor doctor_vec;   // H'_d [1, d_enc] (undefined when not role-conditioned)
  ad::Tensor patient_vec;  // H'_p [1, d_enc]
  std::vector<ad::Tensor> key_prefix;    // per layer [prefix_len, model_dim], doctor-derived
  std::vector<ad::Tensor> value_prefix;  // per layer [prefix_len, model_dim], patient-derived

  std::size_t prefix_len() const { return key_prefix.empty() ? 0 : key_prefix.front().dim(0); }
};

/// Encoder [CLS] vectors for both sides of a split history.
struct RoleCls {
  std::vector<double> doctor;
  std::vector<double> patient;
};

RoleCls role_cls(const encoder::Encoder& enc, const text::Tokenizer& tok, const Dialogue& dialogue,
                 std::size_t upto_turn);

/// Parameters live under "role/{doctor,patient}/..." and
/// "prefix/layer<l>/{doctor,patient}" (or ".../free_key", ".../free_value").
class RoleDualEncoder {
 public:
  explicit RoleDualEncoder(RoleConfig config);

  const RoleConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  DendriticWeights weights(Role role) const;

  /// Builds H' vectors and per-layer prefixes from [CLS] vectors. Records a
  /// graph when gradients are enabled. Empty prefixes when prefix_len is 0.
  RoleEncoding encode(std::span<const double> cls_doctor, std::span<const double> cls_patient) const;

 private:
  RoleConfig config_;
  ad::ParameterSet params_;
};

RoleEncoding encode_roles(const encoder::Encoder& enc, const text::Tokenizer& tok,
                          const RoleDualEncoder& roles, const Dialogue& dialogue,
                          std::size_t upto_turn);

}  // namespace eyedoc::roles
