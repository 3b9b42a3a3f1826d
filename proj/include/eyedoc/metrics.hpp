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


// Text generation metrics over the shared tokenization: whitespace-separated
// words, with every non-ASCII character (CJK) a token of its own.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eyedoc/encoder.hpp"
#include "eyedoc/text.hpp"
#include "json.hpp"

namespace eyedoc::metrics {

using Tokens = std::vector<std::string>;

Tokens tokenize(std::string_view text);

/// Collects non-fatal notes ("all texts shorter than n", smoothing use).
using Warnings = std::vector<std::string>;

/// Distinct n-grams over the corpus divided by the total n-gram count.
double distinct_n(const std::vector<Tokens>& texts, std::size_t n, Warnings* warnings = nullptr);
double distinct_n(const std::vector<std::string>& texts, std::size_t n, Warnings* warnings = nullptr);

/// Sentence BLEU with uniform weights over orders 1..n. Orders for which
/// neither side has any n-gram are left out; a zero match count is
/// replaced by 1e-9 and reported.
double bleu_n(const Tokens& candidate, const Tokens& reference, std::size_t n, Warnings* warnings = nullptr);
double bleu_n(std::string_view candidate, std::string_view reference, std::size_t n,
              Warnings* warnings = nullptr);

inline constexpr double kBleuEpsilon = 1e-9;

/// Unigram F1 with clipped counts.
double rouge_1(const Tokens& candidate, const Tokens& reference);
double rouge_1(std::string_view candidate, std::string_view reference);
/// Longest-common-subsequence F1.
double rouge_l(const Tokens& candidate, const Tokens& reference);
double rouge_l(std::string_view candidate, std::string_view reference);

/// Per-token vectors for BERTScore.
class TokenEmbedder {
 public:
  virtual ~TokenEmbedder() = default;
  virtual std::vector<std::vector<double>> embed(std::string_view text) const = 0;
};

/// Final-layer encoder states, one per character ([CLS]/[SEP] dropped).
class EncoderTokenEmbedder : public TokenEmbedder {
 public:
  EncoderTokenEmbedder(std::shared_ptr<const encoder::Encoder> enc,
                       std::shared_ptr<const text::Tokenizer> tok)
      : enc_(std::move(enc)), tok_(std::move(tok)) {}
  std::vector<std::vector<double>> embed(std::string_view text) const override;

 private:
  std::shared_ptr<const encoder::Encoder> enc_;
  std::shared_ptr<const text::Tokenizer> tok_;
};

struct BertScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

/// Greedy cosine matching without IDF weighting.
BertScore bert_score(const std::vector<std::vector<double>>& candidate,
                     const std::vector<std::vector<double>>& reference, Warnings* warnings = nullptr);
BertScore bert_score(std::string_view candidate, std::string_view reference, const TokenEmbedder& embedder,
                     Warnings* warnings = nullptr);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
  bool degenerate = false;  // differences have zero variance
};

/// Two-sided paired t-test on a - b.
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct EvalPair {
  std::string id;
  std::string candidate;
  std::string reference;
};

/// Reads line-delimited {"id", "text"} records.
std::vector<std::pair<std::string, std::string>> read_texts(const std::filesystem::path& path);

/// Pairs predictions with references by id (reference order). Throws
/// AlignmentError naming every unmatched or duplicated id.
std::vector<EvalPair> align(const std::vector<std::pair<std::string, std::string>>& predictions,
                            const std::vector<std::pair<std::string, std::string>>& references);

struct ExampleScores {
  std::string id;
  double rouge1 = 0.0;
  double rougel = 0.0;
  double bleu[4] = {0, 0, 0, 0};
  double distinct[4] = {0, 0, 0, 0};
  BertScore bert;
};

/// Corpus aggregates in table order.
struct Aggregates {
  double rouge1 = 0.0;
  double rougel = 0.0;
  double bleu[4] = {0, 0, 0, 0};
  double distinct[4] = {0, 0, 0, 0};
  std::optional<BertScore> bert;
};

struct MetricReport {
  std::vector<ExampleScores> examples;
  Aggregates aggregate;
  Warnings warnings;
  std::map<std::string, TTest> significance;  // filled by compare()
};

struct EvalConfig {
  const TokenEmbedder* embedder = nullptr;  // BERTScore skipped when null
  bool rouge_l = false;
};

MetricReport evaluate(const std::vector<EvalPair>& pairs, const EvalConfig& config = {});
MetricReport evaluate_file(const std::filesystem::path& predictions, const std::filesystem::path& references,
                           const EvalConfig& config = {});

/// Paired t-tests of `a` against `b` on every per-example metric; the
/// results are stored in a.significance. Example ids must line up.
void compare(MetricReport& a, const MetricReport& b);

nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const Aggregates& a);
Aggregates aggregates_from_json(const nlohmann::json& j);

/// Fixed-width table with columns Name, R-1, Bleu-1..4, Dist-1..4.
std::string render_generation_table(const std::vector<std::pair<std::string, Aggregates>>& rows);
/// Fixed-width table with columns Name, R_BERT, P_BERT, F_BERT.
std::string render_bert_table(const std::vector<std::pair<std::string, Aggregates>>& rows);

std::vector<std::string> generation_columns();

}  // namespace eyedoc::metrics
