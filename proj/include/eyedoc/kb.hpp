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


// Disease knowledge base: ten-field documents, their encoder embeddings and
// exhaustive cosine-similarity retrieval.
//
// Serialized document layout: one "<Label>: <value>" line per non-empty
// field, in the order name, overview, symptoms, treatment, examination,
// identification, etiology, prevention, complications, medication. The
// whole string is cut to 512 characters from the right.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "eyedoc/encoder.hpp"
#include "json.hpp"

namespace eyedoc::kb {

inline constexpr std::size_t kDocumentChars = 512;
inline constexpr std::size_t kHistoryChars = 1024;
inline constexpr double kLowConfidence = 0.2;

struct DiseaseDoc {
  std::int64_t id = -1;  // assigned by the index when negative
  std::string name;
  std::string overview;
  std::string symptoms;
  std::string treatment;
  std::string examination;
  std::string identification;
  std::string etiology;
  std::string prevention;
  std::string complications;
  std::string medication;
};

/// Field keys in serialization order, and their labels.
const std::array<const char*, 10>& field_keys();
const std::array<const char*, 10>& field_labels();
std::string& field(DiseaseDoc& doc, std::size_t i);
const std::string& field(const DiseaseDoc& doc, std::size_t i);

/// Throws ValidationError when the name is empty.
std::string compose_document(const DiseaseDoc& doc);
/// Inverse of compose_document for untruncated serializations.
DiseaseDoc parse_document(const std::string& serialized);

nlohmann::json to_json(const DiseaseDoc& doc);
/// Missing optional fields default to empty; a missing or empty name is a
/// ValidationError.
DiseaseDoc doc_from_json(const nlohmann::json& j);

struct LoadReport {
  std::vector<DiseaseDoc> docs;
  std::vector<std::string> rejected;  // "line N: reason"
};
/// One JSON record per line.
LoadReport load_documents(const std::filesystem::path& path);

/// Text -> vector model with a version tag identifying its weights.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed_document(const std::string& serialized) const = 0;
  /// Dialogue history; only the most recent kHistoryChars characters count.
  virtual std::vector<double> embed_history(const std::string& history) const = 0;
  virtual std::string version() const = 0;
};

/// [CLS] vectors of the diag encoder.
class EncoderEmbedder : public Embedder {
 public:
  EncoderEmbedder(std::shared_ptr<const encoder::Encoder> enc,
                  std::shared_ptr<const text::Tokenizer> tok);
  std::vector<double> embed_document(const std::string& serialized) const override;
  std::vector<double> embed_history(const std::string& history) const override;
  std::string version() const override { return version_; }

 private:
  std::shared_ptr<const encoder::Encoder> enc_;
  std::shared_ptr<const text::Tokenizer> tok_;
  std::string version_;
};

/// Cosine similarity clamped to [-1, 1]; 0 when either norm is below 1e-12.
double cosine(std::span<const double> a, std::span<const double> b);

struct RetrievalResult {
  std::int64_t doc_id = -1;
  double similarity = 0.0;
  bool low_confidence = false;  // similarity below kLowConfidence
  std::vector<std::pair<std::int64_t, double>> runner_ups;  // best first
};

/// Thread-safe document index. Readers run concurrently; insertion takes an
/// exclusive lock, so a reader sees the index either before or after it.
class KbIndex {
 public:
  explicit KbIndex(std::string encoder_version = "") : version_(std::move(encoder_version)) {}

  KbIndex(const KbIndex&) = delete;
  KbIndex& operator=(const KbIndex&) = delete;

  /// Embeds and stores `doc`; returns its id. Throws ReindexRequiredError
  /// if the embedder's version differs from the index's.
  std::int64_t index_document(DiseaseDoc doc, const Embedder& embedder);
  /// Stores a precomputed embedding.
  std::int64_t add(DiseaseDoc doc, std::vector<double> embedding, const std::string& version);

  /// Recomputes every embedding with `embedder` and adopts its version.
  void reindex(const Embedder& embedder);

  /// Scans every document; ties go to the lowest id. Empty index -> nullopt.
  std::optional<RetrievalResult> retrieve_top1(std::span<const double> query,
                                               std::size_t runner_ups = 3) const;
  std::optional<RetrievalResult> retrieve_history(const std::string& history, const Embedder& embedder,
                                                  std::size_t runner_ups = 3) const;
  /// Free-text search embedded like a document.
  std::optional<RetrievalResult> search(const std::string& query, const Embedder& embedder,
                                        std::size_t runner_ups = 3) const;

  std::size_t size() const;
  std::string version() const;
  std::optional<DiseaseDoc> get(std::int64_t id) const;
  std::vector<double> embedding(std::int64_t id) const;
  std::vector<DiseaseDoc> documents() const;

  void save(const std::filesystem::path& path) const;
  /// Replaces the contents with a saved index.
  void load(const std::filesystem::path& path);

 private:
  void check_version(const std::string& version) const;

  struct Entry {
    DiseaseDoc doc;
    std::vector<double> embedding;
  };
  mutable std::shared_mutex mu_;
  std::string version_;
  std::map<std::int64_t, Entry> entries_;
};

}  // namespace eyedoc::kb
