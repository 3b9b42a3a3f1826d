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

#include "eyedoc/dialogue.hpp"

#include <fstream>

#include "eyedoc/errors.hpp"
#include "eyedoc/text.hpp"

namespace eyedoc {

std::string_view role_name(Role r) { return r == Role::kPatient ? "patient" : "doctor"; }

Role parse_role(std::string_view s) {
  if (s == "patient") return Role::kPatient;
  if (s == "doctor") return Role::kDoctor;
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

Dialogue Dialogue::alternating(std::string id, const std::vector<std::string>& texts) {
  Dialogue d;
  d.id = std::move(id);
  for (std::size_t i = 0; i < texts.size(); ++i)
    d.turns.push_back({i % 2 == 0 ? Role::kPatient : Role::kDoctor, texts[i], i + 1});
  return d;
}

void Dialogue::validate() const {
  if (turns.empty()) throw ValidationError("dialogue " + id + ": no turns");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Turn& t = turns[i];
    if (t.index != i + 1) throw ValidationError("dialogue " + id + ": turn indices must run 1..n");
    if (text::trim(t.text).empty())
      throw ValidationError("dialogue " + id + ": turn " + std::to_string(t.index) + " is empty");
    const Role expected = i % 2 == 0 ? Role::kPatient : Role::kDoctor;
    if (t.role != expected)
      throw ValidationError("dialogue " + id + ": roles must alternate starting with the patient");
  }
}

std::vector<std::size_t> Dialogue::doctor_turns() const {
  std::vector<std::size_t> out;
  for (const Turn& t : turns)
    if (t.role == Role::kDoctor) out.push_back(t.index);
  return out;
}

nlohmann::json to_json(const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const Turn& t : d.turns) turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
  return {{"id", d.id}, {"turns", turns}};
}

Dialogue dialogue_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("turns") || !j["turns"].is_array())
    throw ValidationError("dialogue record needs 'id' and a 'turns' array");
  Dialogue d;
  d.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  std::size_t index = 1;
  for (const auto& t : j["turns"]) {
    if (!t.is_object() || !t.contains("role") || !t.contains("text") || !t["text"].is_string() ||
        !t["role"].is_string())
      throw ValidationError("dialogue " + d.id + ": turn needs string 'role' and 'text'");
    d.turns.push_back({parse_role(t["role"].get<std::string>()), t["text"].get<std::string>(), index++});
  }
  d.validate();
  return d;
}

std::string render_history(const Dialogue& d, std::size_t upto) {
  std::string out;
  for (const Turn& t : d.turns) {
    if (t.index >= upto) break;
    if (!out.empty()) out += '\n';
    out += role_name(t.role);
    out += ": ";
    out += t.text;
  }
  return out;
}

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dialogue file " + path.string());
  std::vector<Dialogue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(dialogue_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write dialogue file " + path.string());
  for (const Dialogue& d : dialogues) out << to_json(d).dump() << '\n';
}

}  // namespace eyedoc
