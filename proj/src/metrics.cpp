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


#include "eyedoc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "eyedoc/errors.hpp"
#include "eyedoc/ops.hpp"

namespace eyedoc::metrics {

using json = nlohmann::json;

namespace {

void warn(Warnings* w, std::string msg) {
  if (w) w->push_back(std::move(msg));
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                               t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : cand)
    if (auto it = ref.find(g); it != ref.end()) m += std::min(c, it->second);
  return m;
}

double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (const std::string& ch : text::utf8_chars(text)) {
    const unsigned char c = static_cast<unsigned char>(ch[0]);
    if (ch.size() == 1 && std::isspace(c)) {
      flush();
    } else if (ch.size() > 1) {
      flush();
      out.push_back(ch);
    } else {
      word += ch;
    }
  }
  flush();
  return out;
}

double distinct_n(const std::vector<Tokens>& texts, std::size_t n, Warnings* warnings) {
  if (n == 0) throw ContractError("distinct_n: n must be at least 1");
  std::set<std::vector<std::string>> seen;
  std::size_t total = 0;
  for (const Tokens& t : texts)
    for (const auto& [g, c] : ngrams(t, n)) {
      seen.insert(g);
      total += c;
    }
  if (total == 0) {
    warn(warnings, "distinct-" + std::to_string(n) + ": every text is shorter than n");
    return 0.0;
  }
  return double(seen.size()) / double(total);
}

double distinct_n(const std::vector<std::string>& texts, std::size_t n, Warnings* warnings) {
  std::vector<Tokens> t;
  for (const auto& s : texts) t.push_back(tokenize(s));
  return distinct_n(t, n, warnings);
}

double bleu_n(const Tokens& candidate, const Tokens& reference, std::size_t n, Warnings* warnings) {
  if (n < 1 || n > 4) throw ContractError("bleu_n: n must lie in 1..4");
  if (candidate.empty()) return 0.0;
  double log_sum = 0;
  std::size_t orders = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto c = ngrams(candidate, k);
    const auto r = ngrams(reference, k);
    if (c.empty() && r.empty()) continue;
    std::size_t total = 0;
    for (const auto& [g, cnt] : c) total += cnt;
    const std::size_t match = clipped_overlap(c, r);
    double p;
    if (match == 0) {
      p = kBleuEpsilon;
      warn(warnings, "bleu-" + std::to_string(n) + ": no " + std::to_string(k) + "-gram match, smoothed");
    } else {
      p = double(match) / double(total);
    }
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double c = double(candidate.size()), r = double(reference.size());
  const double bp = std::exp(std::min(0.0, 1.0 - r / c));
  return bp * std::exp(log_sum / double(orders));
}

double bleu_n(std::string_view candidate, std::string_view reference, std::size_t n, Warnings* warnings) {
  return bleu_n(tokenize(candidate), tokenize(reference), n, warnings);
}

double rouge_1(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double m = double(clipped_overlap(ngrams(candidate, 1), ngrams(reference, 1)));
  return f1(m / double(candidate.size()), m / double(reference.size()));
}

double rouge_1(std::string_view candidate, std::string_view reference) {
  return rouge_1(tokenize(candidate), tokenize(reference));
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (const auto& c : candidate) {
    for (std::size_t j = 1; j <= reference.size(); ++j)
      cur[j] = c == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = double(prev.back());
  return f1(lcs / double(candidate.size()), lcs / double(reference.size()));
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(tokenize(candidate), tokenize(reference));
}

std::vector<std::vector<double>> EncoderTokenEmbedder::embed(std::string_view text) const {
  ad::NoGradGuard guard;
  const auto ids = text::sequence_ids(*tok_, text, enc_->config().max_positions, text::Truncate::kKeepHead);
  const auto out = enc_->encode(ids);
  const std::size_t d = enc_->config().model_dim;
  const auto h = out.hidden_states.data();
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) rows.emplace_back(h.begin() + long(i * d), h.begin() + long((i + 1) * d));
  return rows;
}

BertScore bert_score(const std::vector<std::vector<double>>& candidate,
                     const std::vector<std::vector<double>>& reference, Warnings* warnings) {
  if (candidate.empty() || reference.empty()) {
    warn(warnings, "bert_score: empty side");
    return {};
  }
  auto greedy = [](const auto& from, const auto& to) {
    double s = 0;
    for (const auto& a : from) {
      double best = -1.0;
      for (const auto& b : to) best = std::max(best, cosine(a, b));
      s += best;
    }
    return s / double(from.size());
  };
  BertScore b;
  b.precision = greedy(candidate, reference);
  b.recall = greedy(reference, candidate);
  b.f1 = f1(b.precision, b.recall);
  return b;
}

BertScore bert_score(std::string_view candidate, std::string_view reference, const TokenEmbedder& embedder,
                     Warnings* warnings) {
  return bert_score(embedder.embed(candidate), embedder.embed(reference), warnings);
}

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ContractError("paired_t_test: needs two equal-length vectors of at least two scores");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  double ss = 0;
  for (double x : d) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / double(n - 1));
  TTest r;
  r.df = n - 1;
  if (sd < 1e-15 * std::max(1.0, std::abs(m))) {
    r.degenerate = true;
    if (m == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), m);
    r.p = 0.0;
    return r;
  }
  r.t = m / (sd / std::sqrt(double(n)));
  boost::math::students_t dist(static_cast<double>(r.df));
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

std::vector<std::pair<std::string, std::string>> read_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const json& id = j.at("id");
      out.emplace_back(id.is_string() ? id.get<std::string>() : id.dump(), j.at("text").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EvalPair> align(const std::vector<std::pair<std::string, std::string>>& predictions,
                            const std::vector<std::pair<std::string, std::string>>& references) {
  std::unordered_map<std::string, const std::string*> pred;
  std::vector<std::string> problems;
  for (const auto& [id, t] : predictions)
    if (!pred.emplace(id, &t).second) problems.push_back("duplicate prediction " + id);
  std::set<std::string> ref_ids;
  std::vector<EvalPair> out;
  for (const auto& [id, t] : references) {
    if (!ref_ids.insert(id).second) {
      problems.push_back("duplicate reference " + id);
      continue;
    }
    auto it = pred.find(id);
    if (it == pred.end()) {
      problems.push_back("no prediction for " + id);
      continue;
    }
    out.push_back({id, *it->second, t});
  }
  for (const auto& [id, t] : predictions)
    if (!ref_ids.count(id)) problems.push_back("no reference for " + id);
  if (!problems.empty()) {
    std::string msg = "alignment failed:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw AlignmentError(msg);
  }
  return out;
}

MetricReport evaluate(const std::vector<EvalPair>& pairs, const EvalConfig& config) {
  MetricReport rep;
  const std::size_t n = pairs.size();
  rep.examples.resize(n);
  std::vector<Tokens> cand(n);
  std::vector<Warnings> notes(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    const Tokens c = tokenize(pairs[i].candidate), r = tokenize(pairs[i].reference);
    ExampleScores& s = rep.examples[i];
    s.id = pairs[i].id;
    s.rouge1 = rouge_1(c, r);
    if (config.rouge_l) s.rougel = rouge_l(c, r);
    for (std::size_t k = 0; k < 4; ++k) {
      s.bleu[k] = bleu_n(c, r, k + 1, &notes[i]);
      s.distinct[k] = distinct_n(std::vector<Tokens>{c}, k + 1);
    }
    if (config.embedder) s.bert = bert_score(pairs[i].candidate, pairs[i].reference, *config.embedder, &notes[i]);
    cand[i] = c;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (auto& w : notes[i]) rep.warnings.push_back(pairs[i].id + ": " + w);

  Aggregates& a = rep.aggregate;
  auto avg = [&](auto get) {
    std::vector<double> v;
    for (const auto& e : rep.examples) v.push_back(get(e));
    return mean(v);
  };
  a.rouge1 = avg([](const ExampleScores& e) { return e.rouge1; });
  a.rougel = avg([](const ExampleScores& e) { return e.rougel; });
  for (std::size_t k = 0; k < 4; ++k) {
    a.bleu[k] = avg([k](const ExampleScores& e) { return e.bleu[k]; });
    a.distinct[k] = distinct_n(cand, k + 1, &rep.warnings);
  }
  if (config.embedder)
    a.bert = BertScore{avg([](const ExampleScores& e) { return e.bert.recall; }),
                       avg([](const ExampleScores& e) { return e.bert.precision; }),
                       avg([](const ExampleScores& e) { return e.bert.f1; })};
  return rep;
}

MetricReport evaluate_file(const std::filesystem::path& predictions, const std::filesystem::path& references,
                           const EvalConfig& config) {
  return evaluate(align(read_texts(predictions), read_texts(references)), config);
}

void compare(MetricReport& a, const MetricReport& b) {
  if (a.examples.size() != b.examples.size()) throw AlignmentError("compare: reports differ in length");
  for (std::size_t i = 0; i < a.examples.size(); ++i)
    if (a.examples[i].id != b.examples[i].id)
      throw AlignmentError("compare: example " + a.examples[i].id + " vs " + b.examples[i].id);
  auto test = [&](const std::string& name, auto get) {
    std::vector<double> x, y;
    for (const auto& e : a.examples) x.push_back(get(e));
    for (const auto& e : b.examples) y.push_back(get(e));
    a.significance[name] = paired_t_test(x, y);
  };
  test("R-1", [](const ExampleScores& e) { return e.rouge1; });
  for (std::size_t k = 0; k < 4; ++k) {
    test("Bleu-" + std::to_string(k + 1), [k](const ExampleScores& e) { return e.bleu[k]; });
    test("Dist-" + std::to_string(k + 1), [k](const ExampleScores& e) { return e.distinct[k]; });
  }
  if (a.aggregate.bert && b.aggregate.bert) {
    test("R_BERT", [](const ExampleScores& e) { return e.bert.recall; });
    test("P_BERT", [](const ExampleScores& e) { return e.bert.precision; });
    test("F_BERT", [](const ExampleScores& e) { return e.bert.f1; });
  }
}

json to_json(const Aggregates& a) {
  json j = {{"R-1", a.rouge1}};
  for (std::size_t k = 0; k < 4; ++k) j["Bleu-" + std::to_string(k + 1)] = a.bleu[k];
  for (std::size_t k = 0; k < 4; ++k) j["Dist-" + std::to_string(k + 1)] = a.distinct[k];
  j["R-L"] = a.rougel;
  if (a.bert) {
    j["R_BERT"] = a.bert->recall;
    j["P_BERT"] = a.bert->precision;
    j["F_BERT"] = a.bert->f1;
  }
  return j;
}

Aggregates aggregates_from_json(const json& j) {
  Aggregates a;
  try {
    a.rouge1 = j.at("R-1").get<double>();
    for (std::size_t k = 0; k < 4; ++k) {
      a.bleu[k] = j.at("Bleu-" + std::to_string(k + 1)).get<double>();
      a.distinct[k] = j.at("Dist-" + std::to_string(k + 1)).get<double>();
    }
    a.rougel = j.value("R-L", 0.0);
    if (j.contains("F_BERT"))
      a.bert = BertScore{j.at("R_BERT").get<double>(), j.at("P_BERT").get<double>(), j.at("F_BERT").get<double>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("aggregates: ") + e.what());
  }
  return a;
}

json to_json(const MetricReport& r) {
  json ex = json::array();
  for (const auto& e : r.examples) {
    json x = {{"id", e.id}, {"R-1", e.rouge1}, {"R-L", e.rougel}};
    for (std::size_t k = 0; k < 4; ++k) {
      x["Bleu-" + std::to_string(k + 1)] = e.bleu[k];
      x["Dist-" + std::to_string(k + 1)] = e.distinct[k];
    }
    x["R_BERT"] = e.bert.recall;
    x["P_BERT"] = e.bert.precision;
    x["F_BERT"] = e.bert.f1;
    ex.push_back(x);
  }
  json sig = json::object();
  for (const auto& [name, t] : r.significance) {
    json tj = {{"p", t.p}, {"df", t.df}, {"degenerate", t.degenerate}};
    tj["t"] = std::isfinite(t.t) ? json(t.t) : json(t.t > 0 ? "inf" : "-inf");
    sig[name] = tj;
  }
  return {{"aggregate", to_json(r.aggregate)}, {"examples", ex}, {"warnings", r.warnings}, {"significance", sig}};
}

std::vector<std::string> generation_columns() {
  return {"R-1", "Bleu-1", "Bleu-2", "Bleu-3", "Bleu-4", "Dist-1", "Dist-2", "Dist-3", "Dist-4"};
}

namespace {

std::string render(const std::vector<std::string>& columns,
                   const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::size_t name_w = 4;
  for (const auto& [name, v] : rows) name_w = std::max(name_w, text::utf8_length(name));
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, text::utf8_length(s)), ' '); };
  std::string out = pad("Name", name_w);
  for (const auto& c : columns) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "  %8s", c.c_str());
    out += buf;
  }
  out += "\n";
  for (const auto& [name, values] : rows) {
    out += pad(name, name_w);
    for (double v : values) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "  %8.4f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace

std::string render_generation_table(const std::vector<std::pair<std::string, Aggregates>>& rows) {
  std::vector<std::pair<std::string, std::vector<double>>> r;
  for (const auto& [name, a] : rows)
    r.push_back({name, {a.rouge1, a.bleu[0], a.bleu[1], a.bleu[2], a.bleu[3], a.distinct[0], a.distinct[1],
                        a.distinct[2], a.distinct[3]}});
  return render(generation_columns(), r);
}

std::string render_bert_table(const std::vector<std::pair<std::string, Aggregates>>& rows) {
  std::vector<std::pair<std::string, std::vector<double>>> r;
  for (const auto& [name, a] : rows) {
    if (!a.bert) throw ContractError("render_bert_table: row " + name + " has no BERTScore");
    r.push_back({name, {a.bert->recall, a.bert->precision, a.bert->f1}});
  }
  return render({"R_BERT", "P_BERT", "F_BERT"}, r);
}

}  // namespace eyedoc::metrics
