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


// Synthetic ophthalmic consultation data for tests, demos and the
// acceptance suite: a small disease knowledge base, templated single- and
// multi-round dialogues and an MLM sentence corpus.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eyedoc/dialogue.hpp"
#include "eyedoc/kb.hpp"

namespace eyedoc::toydata {

/// The hand-written core diseases (12 documents, ids 0..11).
std::vector<kb::DiseaseDoc> core_diseases();

/// `n` documents: the core diseases followed by seeded variants with
/// recombined field text.
std::vector<kb::DiseaseDoc> knowledge_base(std::size_t n, std::uint64_t seed);

/// Doctor phrasing. kGeneral is loose and varied; kClinic is a fixed
/// template whose follow-up interval and closing follow the patient's
/// stated duration and question.
enum class Style { kGeneral, kClinic };

struct DialogueSpec {
  std::size_t count = 20;
  std::size_t rounds = 1;  // patient/doctor pairs per dialogue
  std::uint64_t seed = 1;
  std::string id_prefix = "toy";
  Style style = Style::kClinic;
};

struct LabeledDialogue {
  Dialogue dialogue;
  std::size_t disease = 0;  // index into core_diseases()
};

/// Dialogues about the core diseases; the first doctor turn names the
/// disease and its treatment, later rounds cover medication, prevention
/// and follow-up.
std::vector<LabeledDialogue> dialogues(const DialogueSpec& spec);

/// One sentence per line: every utterance plus every document field.
std::vector<std::string> mlm_corpus(std::size_t lines, std::uint64_t seed);

/// Every string the toy generators can emit, for building a vocabulary.
std::vector<std::string> vocabulary_lines();

}  // namespace eyedoc::toydata
