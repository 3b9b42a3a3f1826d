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

// Consultation dialogues and their line-delimited JSON record format:
//   {"id": "...", "turns": [{"role": "patient", "text": "..."}, ...]}

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace eyedoc {

enum class Role { kPatient, kDoctor };

std::string_view role_name(Role r);
/// Parses "patient" / "doctor"; anything else is a ValidationError.
Role parse_role(std::string_view s);

struct Turn {
  Role role = Role::kPatient;
  std::string text;
  std::size_t index = 1;  // 1-based position in the dialogue
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;

  /// Builds a dialogue from alternating texts, patient first.
  static Dialogue alternating(std::string id, const std::vector<std::string>& texts);

  /// Throws ValidationError unless turns are non-empty after trimming,
  /// indexed 1..n and strictly alternate starting with the patient.
  void validate() const;

  /// Indices of doctor turns (each one is a training target).
  std::vector<std::size_t> doctor_turns() const;
};

nlohmann::json to_json(const Dialogue& d);
/// Parses and validates one record. Turn indices are assigned 1..n.
Dialogue dialogue_from_json(const nlohmann::json& j);

/// Renders turns with index < upto as "patient: ...\ndoctor: ..." lines.
std::string render_history(const Dialogue& d, std::size_t upto);

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path);
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

}  // namespace eyedoc
