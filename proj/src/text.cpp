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

#include "eyedoc/text.hpp"

#include <fstream>

#include "eyedoc/errors.hpp"

namespace eyedoc::text {

namespace {

std::size_t unit_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::vector<std::int64_t> frame(std::vector<std::int64_t> body, std::size_t max_len,
                                Truncate side) {
  if (max_len < 2) throw ContractError("sequence: budget must fit [CLS] and [SEP]");
  const std::size_t room = max_len - 2;
  if (body.size() > room) {
    if (side == Truncate::kKeepHead)
      body.resize(room);
    else
      body.erase(body.begin(), body.end() - static_cast<std::ptrdiff_t>(room));
  }
  std::vector<std::int64_t> out;
  out.reserve(body.size() + 2);
  out.push_back(kCls);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(kSep);
  return out;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t n = unit_length(static_cast<unsigned char>(s[i]));
    if (i + n > s.size()) n = 1;
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

std::size_t utf8_length(std::string_view s) {
  std::size_t count = 0, i = 0;
  while (i < s.size()) {
    std::size_t n = unit_length(static_cast<unsigned char>(s[i]));
    if (i + n > s.size()) n = 1;
    i += n;
    ++count;
  }
  return count;
}

std::string utf8_head(std::string_view s, std::size_t n) {
  std::size_t i = 0, count = 0;
  while (i < s.size() && count < n) {
    std::size_t u = unit_length(static_cast<unsigned char>(s[i]));
    if (i + u > s.size()) u = 1;
    i += u;
    ++count;
  }
  return std::string(s.substr(0, i));
}

std::string utf8_tail(std::string_view s, std::size_t n) {
  const std::size_t total = utf8_length(s);
  if (total <= n) return std::string(s);
  const std::string head = utf8_head(s, total - n);
  return std::string(s.substr(head.size()));
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> kTokens{"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]",
                                                "[KB]",  "[PAT]", "[DOC]", "[EOS]",  "[TURN]"};
  return kTokens;
}

Vocabulary::Vocabulary() {
  for (const auto& t : reserved_tokens()) add(t);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& lines) {
  Vocabulary v;
  for (const auto& line : lines)
    for (auto& ch : utf8_chars(collapse_whitespace(line))) v.add(ch);
  return v;
}

std::int64_t Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<std::int64_t>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::int64_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IndexError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("vocabulary: cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("vocabulary: cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size())
    throw FormatError("vocabulary: missing reserved tokens in " + path.string());
  for (std::size_t i = 0; i < reserved.size(); ++i)
    if (tokens[i] != reserved[i])
      throw FormatError("vocabulary: line " + std::to_string(i + 1) + " must be " + reserved[i]);
  Vocabulary v;
  for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw FormatError("vocabulary: duplicate token on line " + std::to_string(i + 1));
    v.add(tokens[i]);
  }
  return v;
}

std::vector<std::int64_t> CharTokenizer::encode(std::string_view text) const {
  std::vector<std::int64_t> ids;
  for (const auto& ch : utf8_chars(collapse_whitespace(text))) ids.push_back(vocab_.id(ch));
  return ids;
}

std::string CharTokenizer::decode(std::span<const std::int64_t> ids) const {
  std::string out;
  for (std::int64_t id : ids) {
    if (Vocabulary::is_reserved(id)) continue;
    out += vocab_.token(id);
  }
  return out;
}

std::vector<std::int64_t> sequence_ids(const Tokenizer& tok, std::string_view text,
                                       std::size_t max_len, Truncate side) {
  return frame(tok.encode(text), max_len, side);
}

std::vector<std::int64_t> turns_ids(const Tokenizer& tok, const std::vector<std::string>& turns,
                                    std::size_t max_len, Truncate side) {
  std::vector<std::int64_t> body;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i) body.push_back(kTurn);
    auto ids = tok.encode(turns[i]);
    body.insert(body.end(), ids.begin(), ids.end());
  }
  return frame(std::move(body), max_len, side);
}

}  // namespace eyedoc::text
