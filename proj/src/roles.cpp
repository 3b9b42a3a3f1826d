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

#include "eyedoc/roles.hpp"

#include <cmath>

#include "eyedoc/errors.hpp"
#include "eyedoc/init.hpp"
#include "eyedoc/ops.hpp"

namespace eyedoc::roles {

using ad::Tensor;

DendriticForm parse_form(std::string_view s) {
  if (s == "cubic") return DendriticForm::kCubic;
  if (s == "quadratic") return DendriticForm::kQuadratic;
  throw ValidationError("unknown dendritic form '" + std::string(s) + "'");
}

DenseActivation parse_activation(std::string_view s) {
  if (s == "tanh") return DenseActivation::kTanh;
  if (s == "identity") return DenseActivation::kIdentity;
  throw ValidationError("unknown dense activation '" + std::string(s) + "'");
}

Tensor dendritic_forward(const Tensor& cls, const DendriticWeights& w, DendriticForm form,
                         DenseActivation act) {
  if (cls.rank() != 2 || cls.dim(0) != 1) throw DimensionError("dendritic_forward: cls must be [1, d]");
  const std::size_t d = cls.dim(1);
  for (const Tensor* m : {&w.dense, &w.w1, &w.w2})
    if (m->rank() != 2 || m->dim(0) != d || m->dim(1) != d)
      throw DimensionError("dendritic_forward: weights must be [d, d] with d = " + std::to_string(d));
  Tensor t = ad::matmul(cls, w.dense);
  if (act == DenseActivation::kTanh) t = ad::tanh(t);
  Tensor h = ad::hadamard(ad::matmul(t, w.w1), t);
  if (form == DendriticForm::kCubic) h = ad::hadamard(h, t);
  return ad::matmul(h, w.w2);
}

Tensor to_prefix(const Tensor& role_vec, const Tensor& projection, std::size_t prefix_len,
                 std::size_t model_dim) {
  if (projection.rank() != 2 || projection.dim(1) != prefix_len * model_dim)
    throw DimensionError("to_prefix: projection must be [d_enc, prefix_len * model_dim]");
  return ad::reshape(ad::matmul(role_vec, projection), {prefix_len, model_dim});
}

SplitHistory split_history(const Dialogue& dialogue, std::size_t upto_turn) {
  if (upto_turn < 1) throw ContractError("split_history: turn index starts at 1");
  SplitHistory s;
  for (const Turn& t : dialogue.turns) {
    if (t.index >= upto_turn) break;
    (t.role == Role::kDoctor ? s.doctor : s.patient).push_back(t.text);
  }
  return s;
}

RoleCls role_cls(const encoder::Encoder& enc, const text::Tokenizer& tok, const Dialogue& dialogue,
                 std::size_t upto_turn) {
  const SplitHistory s = split_history(dialogue, upto_turn);
  const std::size_t budget = enc.config().max_positions;
  return {enc.cls(text::turns_ids(tok, s.doctor, budget, text::Truncate::kKeepTail)),
          enc.cls(text::turns_ids(tok, s.patient, budget, text::Truncate::kKeepTail))};
}

RoleDualEncoder::RoleDualEncoder(RoleConfig config) : config_(config) {
  Rng rng(config_.seed);
  const std::size_t d = config_.enc_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* role : {"doctor", "patient"}) {
    const std::string base = std::string("role/") + role + "/";
    params_.add(base + "dense", normal_tensor({d, d}, sd, rng));
    params_.add(base + "w1", normal_tensor({d, d}, sd, rng));
    params_.add(base + "w2", normal_tensor({d, d}, sd, rng));
  }
  if (config_.prefix_len == 0) return;
  const std::size_t width = config_.prefix_len * config_.model_dim;
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string base = "prefix/layer" + std::to_string(l) + "/";
    if (config_.role_conditioned) {
      params_.add(base + "doctor", normal_tensor({d, width}, config_.projection_init_sd, rng));
      params_.add(base + "patient", normal_tensor({d, width}, config_.projection_init_sd, rng));
    } else {
      params_.add(base + "free_key",
                  normal_tensor({config_.prefix_len, config_.model_dim}, config_.projection_init_sd, rng));
      params_.add(base + "free_value",
                  normal_tensor({config_.prefix_len, config_.model_dim}, config_.projection_init_sd, rng));
    }
  }
}

DendriticWeights RoleDualEncoder::weights(Role role) const {
  const std::string base = std::string("role/") + std::string(role_name(role)) + "/";
  return {params_.at(base + "dense"), params_.at(base + "w1"), params_.at(base + "w2")};
}

RoleEncoding RoleDualEncoder::encode(std::span<const double> cls_doctor,
                                     std::span<const double> cls_patient) const {
  const std::size_t d = config_.enc_dim;
  if (cls_doctor.size() != d || cls_patient.size() != d)
    throw DimensionError("RoleDualEncoder: cls vectors must have " + std::to_string(d) + " entries");
  RoleEncoding out;
  if (!config_.role_conditioned) {
    for (std::size_t l = 0; l < config_.decoder_layers && config_.prefix_len > 0; ++l) {
      const std::string base = "prefix/layer" + std::to_string(l) + "/";
      out.key_prefix.push_back(params_.at(base + "free_key"));
      out.value_prefix.push_back(params_.at(base + "free_value"));
    }
    return out;
  }
  Tensor cd = Tensor::from({1, d}, {cls_doctor.begin(), cls_doctor.end()});
  Tensor cp = Tensor::from({1, d}, {cls_patient.begin(), cls_patient.end()});
  out.doctor_vec = dendritic_forward(cd, weights(Role::kDoctor), config_.form, config_.activation);
  out.patient_vec = dendritic_forward(cp, weights(Role::kPatient), config_.form, config_.activation);
  for (std::size_t l = 0; l < config_.decoder_layers && config_.prefix_len > 0; ++l) {
    const std::string base = "prefix/layer" + std::to_string(l) + "/";
    out.key_prefix.push_back(
        to_prefix(out.doctor_vec, params_.at(base + "doctor"), config_.prefix_len, config_.model_dim));
    out.value_prefix.push_back(
        to_prefix(out.patient_vec, params_.at(base + "patient"), config_.prefix_len, config_.model_dim));
  }
  return out;
}

RoleEncoding encode_roles(const encoder::Encoder& enc, const text::Tokenizer& tok,
                          const RoleDualEncoder& roles, const Dialogue& dialogue,
                          std::size_t upto_turn) {
  const RoleCls c = role_cls(enc, tok, dialogue, upto_turn);
  return roles.encode(c.doctor, c.patient);
}

}  // namespace eyedoc::roles
