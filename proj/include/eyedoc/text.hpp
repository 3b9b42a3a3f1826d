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

// UTF-8 helpers, the shared vocabulary and the character tokenizer.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace eyedoc::text {

/// Splits a UTF-8 string into one string per Unicode scalar value.
/// Invalid bytes are passed through as single-byte units.
std::vector<std::string> utf8_chars(std::string_view s);

/// Number of Unicode scalar values.
std::size_t utf8_length(std::string_view s);

/// First / last `n` scalar values.
std::string utf8_head(std::string_view s, std::size_t n);
std::string utf8_tail(std::string_view s, std::size_t n);

std::string trim(std::string_view s);

/// Trims and replaces every run of whitespace with a single space.
std::string collapse_whitespace(std::string_view s);

/// Fixed ids shared by the encoder and the decoder.
enum Reserved : std::int64_t {
  kPad = 0,
  kCls = 1,
  kSep = 2,
  kMask = 3,
  kUnk = 4,
  kKnowledge = 5,  // starts the knowledge segment
  kPatient = 6,    // starts a patient utterance
  kDoctor = 7,     // starts a doctor utterance
  kEos = 8,        // ends a generated response
  kTurn = 9,       // separates same-role turns in a history
  kReservedCount = 10,
};

class Vocabulary {
 public:
  /// Reserved tokens only.
  Vocabulary();

  /// Reserved tokens followed by every distinct character of `lines`
  /// (after whitespace collapse), in first-seen order.
  static Vocabulary build(const std::vector<std::string>& lines);

  static const std::vector<std::string>& reserved_tokens();

  /// Appends a token if absent; returns its id.
  std::int64_t add(const std::string& token);
  /// Id of `token`, or kUnk.
  std::int64_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::int64_t id) const;
  std::size_t size() const { return tokens_.size(); }
  static bool is_reserved(std::int64_t id) { return id >= 0 && id < kReservedCount; }

  /// One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
};

/// Pluggable text <-> id mapping.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  /// Content ids only, no [CLS]/[SEP].
  virtual std::vector<std::int64_t> encode(std::string_view text) const = 0;
  /// Joins ids back into text; reserved ids are skipped.
  virtual std::string decode(std::span<const std::int64_t> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

/// One id per character after whitespace collapse.
class CharTokenizer : public Tokenizer {
 public:
  explicit CharTokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

  std::vector<std::int64_t> encode(std::string_view text) const override;
  std::string decode(std::span<const std::int64_t> ids) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }
  const Vocabulary& vocabulary() const { return vocab_; }

 private:
  Vocabulary vocab_;
};

enum class Truncate { kKeepHead, kKeepTail };

/// [CLS] content [SEP] for a single text, cut to `max_len` ids in total.
std::vector<std::int64_t> sequence_ids(const Tokenizer& tok, std::string_view text,
                                       std::size_t max_len, Truncate side);

/// [CLS] t1 [TURN] t2 ... [SEP] for a list of turns, cut to `max_len` ids.
/// An empty list yields the sentinel [CLS][SEP].
std::vector<std::int64_t> turns_ids(const Tokenizer& tok, const std::vector<std::string>& turns,
                                    std::size_t max_len, Truncate side);

}  // namespace eyedoc::text
