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


#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "eyedoc/errors.hpp"
#include "eyedoc/metrics.hpp"

using namespace eyedoc;
using namespace eyedoc::metrics;

namespace {

// Fixed random vectors per token string.
class HashEmbedder : public TokenEmbedder {
 public:
  std::vector<std::vector<double>> embed(std::string_view text) const override {
    std::vector<std::vector<double>> out;
    for (const auto& t : tokenize(text)) {
      std::mt19937_64 rng(std::hash<std::string>{}(t));
      std::normal_distribution<double> n;
      std::vector<double> v(6);
      for (double& x : v) x = n(rng);
      out.push_back(v);
    }
    return out;
  }
};

// Two-sided p-value of Student's t by Simpson integration of the density.
double t_pvalue_oracle(double t, double df) {
  auto density = [df](double x) {
    return std::tgamma((df + 1) / 2) / (std::sqrt(df * M_PI) * std::tgamma(df / 2)) *
           std::pow(1 + x * x / df, -(df + 1) / 2);
  };
  const double a = 0, b = std::abs(t);
  const int n = 20000;
  const double h = (b - a) / n;
  double s = density(a) + density(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * density(a + i * h);
  return 2 * (0.5 - s * h / 3);
}

void write_jsonl(const std::filesystem::path& p, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(p);
  for (const auto& [id, t] : rows) out << nlohmann::json{{"id", id}, {"text", t}}.dump() << "\n";
}

}  // namespace

TEST_CASE("tokenize splits words and CJK characters") {
  CHECK(tokenize("red  eye\n") == Tokens{"red", "eye"});
  CHECK(tokenize("眼睛 红") == Tokens{"眼", "睛", "红"});
  CHECK(tokenize("ab眼c") == Tokens{"ab", "眼", "c"});
  CHECK(tokenize("   ").empty());
}

TEST_CASE("distinct_n") {
  const std::vector<Tokens> abab{{"a", "b", "a", "b"}};
  CHECK(distinct_n(abab, 1) == 0.5);
  CHECK(distinct_n(abab, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(distinct_n(std::vector<Tokens>{{"a", "b"}, {"c", "d"}}, 1) == 1.0);
  Warnings w;
  CHECK(distinct_n(std::vector<Tokens>{{"a"}, {"b"}}, 2, &w) == 0.0);
  CHECK(w.size() == 1);
  CHECK_THROWS_AS(distinct_n(abab, 0), ContractError);

  // Corpus order does not matter.
  std::vector<std::string> corpus{"the eye is red", "red eye again", "the lid", "眼睛红肿", "红肿疼痛"};
  const double base = distinct_n(corpus, 2);
  std::mt19937 rng(3);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(corpus.begin(), corpus.end(), rng);
    CHECK(distinct_n(corpus, 2) == base);
  }
}

TEST_CASE("bleu_n hand cases") {
  CHECK(bleu_n("the the the", "the cat", 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(bleu_n("the cat", "the cat sat", 1) - std::exp(-0.5)) < 1e-6);
  CHECK(bleu_n("the cat sat on the mat", "the cat sat on the mat", 4) == doctest::Approx(1.0));
  CHECK(bleu_n("a b c d", "a b d c", 2) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-12));
  CHECK(bleu_n("", "the cat", 1) == 0.0);
  // Short identical texts skip the orders neither side has.
  CHECK(bleu_n("red eye", "red eye", 4) == doctest::Approx(1.0));
  CHECK_THROWS_AS(bleu_n("a", "a", 5), ContractError);
}

TEST_CASE("bleu_n smoothing is flagged") {
  Warnings w;
  const double b = bleu_n("a b c", "a c b", 2, &w);
  CHECK(w.size() == 1);
  CHECK(b == doctest::Approx(std::sqrt(1.0 * kBleuEpsilon)).epsilon(1e-9));
}

TEST_CASE("bleu_n is non-increasing in n when no smoothing triggers") {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> tok(0, 3), len(6, 14);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Tokens c, r;
    for (int i = len(rng); i > 0; --i) c.push_back(std::string(1, char('a' + tok(rng))));
    for (int i = len(rng); i > 0; --i) r.push_back(std::string(1, char('a' + tok(rng))));
    Warnings w;
    double prev = 2.0;
    std::vector<double> v;
    for (std::size_t n = 1; n <= 4; ++n) v.push_back(bleu_n(c, r, n, &w));
    if (!w.empty()) continue;
    for (double x : v) {
      CHECK(x <= prev + 1e-12);
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
      prev = x;
    }
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("rouge") {
  CHECK(rouge_1("red eye", "red eye") == 1.0);
  CHECK(std::abs(rouge_1("red eye", "red swollen eye") - 0.8) < 1e-9);
  CHECK(rouge_1("red eye", "blue lid") == 0.0);
  CHECK(rouge_1("", "") == 0.0);
  CHECK(rouge_l("a b c d", "a c b d") == doctest::Approx(0.75));
  CHECK(rouge_l("眼睛红", "眼睛红") == 1.0);
}

TEST_CASE("bert_score") {
  HashEmbedder e;
  auto self = bert_score("the red eye is swollen", "the red eye is swollen", e);
  CHECK(std::abs(self.recall - 1) < 1e-6);
  CHECK(std::abs(self.precision - 1) < 1e-6);
  CHECK(std::abs(self.f1 - 1) < 1e-6);

  auto ortho = bert_score(std::vector<std::vector<double>>{{1, 0}}, std::vector<std::vector<double>>{{0, 1}});
  CHECK(ortho.recall == 0.0);
  CHECK(ortho.precision == 0.0);
  CHECK(ortho.f1 == 0.0);

  Warnings w;
  auto empty = bert_score("", "red", e, &w);
  CHECK(empty.f1 == 0.0);
  CHECK(w.size() == 1);

  // Brute-force greedy matching oracle.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> c(5, std::vector<double>(4)), r(5, std::vector<double>(4));
    for (auto& v : c) for (double& x : v) x = n(rng);
    for (auto& v : r) for (double& x : v) x = n(rng);
    double sim[5][5];
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double dot = 0, a = 0, b = 0;
        for (int k = 0; k < 4; ++k) {
          dot += c[i][k] * r[j][k];
          a += c[i][k] * c[i][k];
          b += r[j][k] * r[j][k];
        }
        sim[i][j] = dot / std::sqrt(a * b);
      }
    double p = 0, rr = 0;
    for (int i = 0; i < 5; ++i) p += *std::max_element(sim[i], sim[i] + 5) / 5;
    for (int j = 0; j < 5; ++j) {
      double best = -2;
      for (int i = 0; i < 5; ++i) best = std::max(best, sim[i][j]);
      rr += best / 5;
    }
    auto got = bert_score(c, r);
    CHECK(got.precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(got.recall == doctest::Approx(rr).epsilon(1e-12));
    CHECK(got.f1 == doctest::Approx(2 * p * rr / (p + rr)).epsilon(1e-12));
  }
}

TEST_CASE("bert_score with the encoder embedder") {
  auto tok = std::make_shared<text::CharTokenizer>(text::Vocabulary::build({"眼睛红肿疼痛"}));
  encoder::EncoderConfig ec;
  ec.vocab_size = tok->vocab_size();
  ec.model_dim = 8;
  ec.heads = 2;
  ec.layers = 1;
  ec.ffn_dim = 16;
  EncoderTokenEmbedder e(std::make_shared<encoder::Encoder>(ec), tok);
  CHECK(e.embed("眼睛红").size() == 3);
  auto s = bert_score("眼睛红肿", "眼睛红肿", e);
  CHECK(std::abs(s.f1 - 1) < 1e-6);
  auto d = bert_score("眼睛", "疼痛", e);
  CHECK(d.f1 < 1.0);
}

TEST_CASE("paired_t_test") {
  auto same = paired_t_test({0.1, 0.5, 0.3}, {0.1, 0.5, 0.3});
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  CHECK(same.degenerate);

  auto shift = paired_t_test({2, 3, 4, 5}, {1, 2, 3, 4});
  CHECK(shift.degenerate);
  CHECK(std::isinf(shift.t));
  CHECK(shift.p == 0.0);

  auto balanced = paired_t_test({1, 0, 1, 0}, {0, 1, 0, 1});
  CHECK(balanced.t == 0.0);
  CHECK(balanced.p == doctest::Approx(1.0));
  CHECK_FALSE(balanced.degenerate);

  auto r = paired_t_test({1, 2, 3, 4, 5}, {0, 2, 1, 5, 3});
  const double t = 0.8 / (std::sqrt(1.7) / std::sqrt(5.0));
  CHECK(r.t == doctest::Approx(t).epsilon(1e-12));
  CHECK(r.df == 4);
  CHECK(r.p == doctest::Approx(t_pvalue_oracle(t, 4)).epsilon(1e-8));

  CHECK_THROWS_AS(paired_t_test({1}, {1}), ContractError);
  CHECK_THROWS_AS(paired_t_test({1, 2}, {1, 2, 3}), ContractError);
}

TEST_CASE("evaluate: identical predictions score one") {
  HashEmbedder e;
  std::vector<EvalPair> pairs{{"1", "the eye is red and swollen", "the eye is red and swollen"},
                              {"2", "眼睛红肿疼痛三天", "眼睛红肿疼痛三天"}};
  auto rep = evaluate(pairs, {&e, true});
  CHECK(rep.aggregate.rouge1 == 1.0);
  CHECK(rep.aggregate.rougel == 1.0);
  for (double b : rep.aggregate.bleu) CHECK(b == doctest::Approx(1.0));
  REQUIRE(rep.aggregate.bert);
  CHECK(std::abs(rep.aggregate.bert->f1 - 1) < 1e-6);
  for (double d : rep.aggregate.distinct) CHECK(d > 0.0);
  CHECK(rep.examples.size() == 2);
  auto again = evaluate(pairs, {&e, true});
  CHECK(to_json(again) == to_json(rep));
}

TEST_CASE("evaluate_file aligns by id and reports offenders") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto pred = dir / "eyedoc_pred.jsonl", ref = dir / "eyedoc_ref.jsonl";
  write_jsonl(ref, {{"a", "red eye"}, {"b", "swollen lid"}});
  write_jsonl(pred, {{"b", "swollen lid"}, {"a", "red eyes"}});
  auto rep = evaluate_file(pred, ref);
  REQUIRE(rep.examples.size() == 2);
  CHECK(rep.examples[0].id == "a");
  CHECK(rep.examples[1].rouge1 == 1.0);
  CHECK(rep.examples[0].rouge1 == 0.5);
  CHECK_FALSE(rep.aggregate.bert);

  write_jsonl(pred, {{"a", "x"}, {"c", "y"}});
  try {
    evaluate_file(pred, ref);
    FAIL("expected an alignment error");
  } catch (const AlignmentError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("no prediction for b") != std::string::npos);
    CHECK(msg.find("no reference for c") != std::string::npos);
  }
  {
    std::ofstream out(pred);
    out << "{not json\n";
  }
  CHECK_THROWS_AS(evaluate_file(pred, ref), FormatError);
  std::filesystem::remove(pred);
  std::filesystem::remove(ref);
}

TEST_CASE("compare fills paired significance per metric") {
  std::vector<EvalPair> good, bad;
  for (int i = 0; i < 6; ++i) {
    const std::string ref = "the eye is red number " + std::to_string(i);
    good.push_back({std::to_string(i), ref, ref});
    bad.push_back({std::to_string(i), i % 2 ? "lid" : "the lid is swollen", ref});
  }
  auto a = evaluate(good), b = evaluate(bad);
  compare(a, b);
  CHECK(a.significance.count("R-1") == 1);
  CHECK(a.significance.count("Dist-4") == 1);
  CHECK(a.significance.at("R-1").t > 0);
  CHECK(a.significance.at("R-1").p < 0.05);
  auto c = evaluate(std::vector<EvalPair>(good.begin(), good.begin() + 3));
  CHECK_THROWS_AS(compare(a, c), AlignmentError);
}

TEST_CASE("generation table layout") {
  CHECK(generation_columns() ==
        std::vector<std::string>{"R-1", "Bleu-1", "Bleu-2", "Bleu-3", "Bleu-4", "Dist-1", "Dist-2", "Dist-3", "Dist-4"});
  const auto fixture = nlohmann::json::parse(R"({"R-1": 0.3375, "Bleu-1": 0.5305, "Bleu-2": 0.2754,
      "Bleu-3": 0.2082, "Bleu-4": 0.1638, "Dist-1": 0.5153, "Dist-2": 0.7910, "Dist-3": 0.8471,
      "Dist-4": 0.8797})");
  auto agg = aggregates_from_json(fixture);
  const std::string table = render_generation_table({{"EyeDoctor-7B", agg}});
  std::istringstream lines(table);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  CHECK(header.find("R-1") != std::string::npos);
  CHECK(header.find("Dist-4") != std::string::npos);
  CHECK(row.rfind("EyeDoctor-7B", 0) == 0);
  CHECK(row.find("0.3375") != std::string::npos);
  CHECK(row.find("0.8797") != std::string::npos);
  CHECK(to_json(agg) == to_json(aggregates_from_json(to_json(agg))));
  CHECK_THROWS_AS(aggregates_from_json(nlohmann::json{{"R-1", 0.1}}), FormatError);
  CHECK_THROWS_AS(render_bert_table({{"x", agg}}), ContractError);
}
