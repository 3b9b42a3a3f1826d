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


#include "eyedoc/kb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>

#include "eyedoc/errors.hpp"
#include "eyedoc/text.hpp"

namespace eyedoc::kb {

using json = nlohmann::json;

const std::array<const char*, 10>& field_keys() {
  static const std::array<const char*, 10> keys{
      "name",           "overview", "symptoms",   "treatment",     "examination",
      "identification", "etiology", "prevention", "complications", "medication"};
  return keys;
}

const std::array<const char*, 10>& field_labels() {
  static const std::array<const char*, 10> labels{
      "Disease Name: ",   "Overview: ",  "Symptoms: ",   "Treatment: ",     "Examination: ",
      "Identification: ", "Etiology: ",  "Prevention: ", "Complications: ", "Medication: "};
  return labels;
}

std::string& field(DiseaseDoc& d, std::size_t i) {
  std::string* f[] = {&d.name,           &d.overview, &d.symptoms,   &d.treatment,     &d.examination,
                      &d.identification, &d.etiology, &d.prevention, &d.complications, &d.medication};
  if (i >= 10) throw IndexError("field index " + std::to_string(i));
  return *f[i];
}

const std::string& field(const DiseaseDoc& d, std::size_t i) {
  return field(const_cast<DiseaseDoc&>(d), i);
}

std::string compose_document(const DiseaseDoc& doc) {
  if (text::trim(doc.name).empty()) throw ValidationError("disease document needs a name");
  std::string out;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::string value = text::collapse_whitespace(field(doc, i));
    if (value.empty()) continue;
    if (!out.empty()) out += '\n';
    out += field_labels()[i];
    out += value;
  }
  return text::utf8_head(out, kDocumentChars);
}

DiseaseDoc parse_document(const std::string& serialized) {
  DiseaseDoc doc;
  std::size_t start = 0;
  while (start <= serialized.size()) {
    std::size_t end = serialized.find('\n', start);
    if (end == std::string::npos) end = serialized.size();
    const std::string line = serialized.substr(start, end - start);
    bool matched = false;
    for (std::size_t i = 0; i < 10 && !matched; ++i) {
      const std::string label = field_labels()[i];
      if (line.rfind(label, 0) == 0) {
        field(doc, i) = line.substr(label.size());
        matched = true;
      }
    }
    if (!matched && !line.empty()) throw FormatError("unlabelled document line: " + line);
    start = end + 1;
  }
  if (doc.name.empty()) throw FormatError("document has no name line");
  return doc;
}

json to_json(const DiseaseDoc& doc) {
  json j;
  if (doc.id >= 0) j["id"] = doc.id;
  for (std::size_t i = 0; i < 10; ++i) j[field_keys()[i]] = field(doc, i);
  return j;
}

DiseaseDoc doc_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("disease record must be an object");
  DiseaseDoc doc;
  for (std::size_t i = 0; i < 10; ++i) {
    const char* key = field_keys()[i];
    if (!j.contains(key) || j[key].is_null()) continue;
    if (!j[key].is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
    field(doc, i) = j[key].get<std::string>();
  }
  if (text::trim(doc.name).empty()) throw ValidationError("disease record has no name");
  if (j.contains("id") && j["id"].is_number_integer()) doc.id = j["id"].get<std::int64_t>();
  return doc;
}

LoadReport load_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open knowledge file " + path.string());
  LoadReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      report.docs.push_back(doc_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      report.rejected.push_back("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      report.rejected.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return report;
}

EncoderEmbedder::EncoderEmbedder(std::shared_ptr<const encoder::Encoder> enc,
                                 std::shared_ptr<const text::Tokenizer> tok)
    : enc_(std::move(enc)), tok_(std::move(tok)), version_(enc_->version_tag()) {}

std::vector<double> EncoderEmbedder::embed_document(const std::string& serialized) const {
  return enc_->cls(text::sequence_ids(*tok_, serialized, enc_->config().max_positions,
                                      text::Truncate::kKeepHead));
}

std::vector<double> EncoderEmbedder::embed_history(const std::string& history) const {
  return enc_->cls(text::sequence_ids(*tok_, text::utf8_tail(history, kHistoryChars),
                                      enc_->config().max_positions, text::Truncate::kKeepTail));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: vector lengths differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

void KbIndex::check_version(const std::string& version) const {
  if (!entries_.empty() && version != version_)
    throw ReindexRequiredError("knowledge index was built with encoder " + version_ +
                               ", current encoder is " + version);
}

std::int64_t KbIndex::index_document(DiseaseDoc doc, const Embedder& embedder) {
  const std::string serialized = compose_document(doc);
  {
    std::shared_lock lock(mu_);
    check_version(embedder.version());
  }
  return add(std::move(doc), embedder.embed_document(serialized), embedder.version());
}

std::int64_t KbIndex::add(DiseaseDoc doc, std::vector<double> embedding, const std::string& version) {
  compose_document(doc);
  std::unique_lock lock(mu_);
  check_version(version);
  if (!entries_.empty() && entries_.begin()->second.embedding.size() != embedding.size())
    throw DimensionError("knowledge index: embedding width differs from stored documents");
  if (doc.id < 0) doc.id = entries_.empty() ? 0 : entries_.rbegin()->first + 1;
  if (entries_.count(doc.id)) throw ValidationError("document id " + std::to_string(doc.id) + " already indexed");
  version_ = version;
  const std::int64_t id = doc.id;
  entries_.emplace(id, Entry{std::move(doc), std::move(embedding)});
  return id;
}

void KbIndex::reindex(const Embedder& embedder) {
  std::unique_lock lock(mu_);
  for (auto& [id, e] : entries_) e.embedding = embedder.embed_document(compose_document(e.doc));
  version_ = embedder.version();
}

std::optional<RetrievalResult> KbIndex::retrieve_top1(std::span<const double> query,
                                                      std::size_t runner_ups) const {
  std::shared_lock lock(mu_);
  if (entries_.empty()) return std::nullopt;
  std::vector<std::pair<std::int64_t, double>> scored;
  scored.reserve(entries_.size());
  for (const auto& [id, e] : entries_) scored.emplace_back(id, cosine(query, e.embedding));
  // Stable sort keeps ascending id order among equal similarities.
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  RetrievalResult r;
  r.doc_id = scored.front().first;
  r.similarity = scored.front().second;
  r.low_confidence = r.similarity < kLowConfidence;
  for (std::size_t i = 1; i < scored.size() && i <= runner_ups; ++i) r.runner_ups.push_back(scored[i]);
  return r;
}

std::optional<RetrievalResult> KbIndex::retrieve_history(const std::string& history,
                                                         const Embedder& embedder,
                                                         std::size_t runner_ups) const {
  {
    std::shared_lock lock(mu_);
    check_version(embedder.version());
  }
  return retrieve_top1(embedder.embed_history(history), runner_ups);
}

std::optional<RetrievalResult> KbIndex::search(const std::string& query, const Embedder& embedder,
                                               std::size_t runner_ups) const {
  {
    std::shared_lock lock(mu_);
    check_version(embedder.version());
  }
  return retrieve_top1(embedder.embed_document(query), runner_ups);
}

std::size_t KbIndex::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::string KbIndex::version() const {
  std::shared_lock lock(mu_);
  return version_;
}

std::optional<DiseaseDoc> KbIndex::get(std::int64_t id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.doc;
}

std::vector<double> KbIndex::embedding(std::int64_t id) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw NotFoundError("no document " + std::to_string(id));
  return it->second.embedding;
}

std::vector<DiseaseDoc> KbIndex::documents() const {
  std::shared_lock lock(mu_);
  std::vector<DiseaseDoc> out;
  for (const auto& [id, e] : entries_) out.push_back(e.doc);
  return out;
}

void KbIndex::save(const std::filesystem::path& path) const {
  json j;
  {
    std::shared_lock lock(mu_);
    j["format_version"] = 1;
    j["encoder_version"] = version_;
    j["documents"] = json::array();
    for (const auto& [id, e] : entries_) {
      json d = to_json(e.doc);
      d["embedding"] = e.embedding;
      j["documents"].push_back(std::move(d));
    }
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw FormatError("cannot write knowledge index " + path.string());
    out << j.dump();
  }
  std::filesystem::rename(tmp, path);
}

void KbIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open knowledge index " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  std::map<std::int64_t, Entry> entries;
  for (const auto& d : j.at("documents")) {
    DiseaseDoc doc = doc_from_json(d);
    if (doc.id < 0) throw FormatError("stored document without id");
    entries[doc.id] = Entry{doc, d.at("embedding").get<std::vector<double>>()};
  }
  std::unique_lock lock(mu_);
  version_ = j.at("encoder_version").get<std::string>();
  entries_ = std::move(entries);
}

}  // namespace eyedoc::kb
