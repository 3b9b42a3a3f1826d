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

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "eyedoc/encoder.hpp"
#include "eyedoc/errors.hpp"
#include "eyedoc/gradcheck.hpp"
#include "eyedoc/ops.hpp"
#include "eyedoc/optim.hpp"

using namespace eyedoc;
using namespace eyedoc::encoder;
using eyedoc::ad::Tensor;

namespace {

EncoderConfig tiny_config(std::size_t vocab) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.model_dim = 16;
  c.heads = 2;
  c.layers = 2;
  c.ffn_dim = 32;
  c.max_positions = 64;
  c.seed = 5;
  return c;
}

std::vector<std::int64_t> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> d(text::kReservedCount, static_cast<std::int64_t>(vocab) - 1);
  std::vector<std::int64_t> ids{text::kCls};
  for (std::size_t i = 0; i < n; ++i) ids.push_back(d(rng));
  ids.push_back(text::kSep);
  return ids;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.data().begin() + r * w, t.data().begin() + (r + 1) * w};
}

}  // namespace

TEST_CASE("mask_tokens: rate bounds and policy") {
  std::mt19937_64 rng(3);
  auto ids = random_ids(40, 50, rng);
  auto none = mask_tokens(ids, 0.0, 1, 50);
  CHECK(none.flagged() == 0);
  CHECK(none.input_ids == ids);

  auto all = mask_tokens(ids, 1.0, 1, 50, {1.0, 0.0});
  CHECK(all.flagged() == 40);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (text::Vocabulary::is_reserved(ids[i]))
      CHECK(all.flags[i] == 0);
    else
      CHECK(all.input_ids[i] == text::kMask);
  }

  CHECK_THROWS_AS(mask_tokens(ids, -0.01, 1, 50), ContractError);
  CHECK_THROWS_AS(mask_tokens(ids, 1.01, 1, 50), ContractError);
}

TEST_CASE("mask_tokens: 15% over 10k eligible positions stays inside the binomial interval") {
  std::vector<std::int64_t> ids(10000, 11);
  auto b = mask_tokens(ids, 0.15, 77, 50);
  const double frac = static_cast<double>(b.flagged()) / 10000.0;
  CHECK(frac >= 0.13);
  CHECK(frac <= 0.17);
  // Every changed position is flagged; about 80% of flagged become [MASK].
  std::size_t masked = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (b.input_ids[i] != b.original_ids[i]) CHECK(b.flags[i] == 1);
    if (b.input_ids[i] == text::kMask) ++masked;
  }
  CHECK(static_cast<double>(masked) / static_cast<double>(b.flagged()) == doctest::Approx(0.8).epsilon(0.05));
}

TEST_CASE("mask_tokens never selects reserved ids (property)") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto ids = random_ids(30, 40, rng);
    ids.push_back(text::kPad);
    ids.push_back(text::kPad);
    auto b = mask_tokens(ids, 0.9, trial, 40);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (text::Vocabulary::is_reserved(ids[i])) {
        CHECK(b.flags[i] == 0);
        CHECK(b.input_ids[i] == ids[i]);
      }
    CHECK(b.attention_mask.back() == 0);
  }
}

TEST_CASE("encode: determinism, cls row and padding contract") {
  Encoder enc(tiny_config(40));
  std::mt19937_64 rng(4);
  auto ids = random_ids(10, 40, rng);
  auto a = enc.encode(ids);
  auto b = enc.encode(ids);
  CHECK(a.hidden_states.data()[0] == b.hidden_states.data()[0]);
  CHECK(std::equal(a.hidden_states.data().begin(), a.hidden_states.data().end(),
                   b.hidden_states.data().begin()));
  CHECK(a.hidden_states.dim(0) == ids.size());
  CHECK(row(a.cls_vector, 0) == row(a.hidden_states, 0));

  // Append a padded tail, then scramble its content.
  std::vector<std::int64_t> padded = ids;
  std::vector<unsigned char> mask(ids.size(), 1);
  for (int i = 0; i < 6; ++i) {
    padded.push_back(text::kPad);
    mask.push_back(0);
  }
  auto p1 = enc.encode(padded, mask);
  for (std::size_t i = ids.size(); i < padded.size(); ++i) padded[i] = 12 + static_cast<std::int64_t>(i % 20);
  auto p2 = enc.encode(padded, mask);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto x = row(a.hidden_states, r), y = row(p1.hidden_states, r), z = row(p2.hidden_states, r);
    for (std::size_t j = 0; j < x.size(); ++j) {
      CHECK(std::abs(x[j] - y[j]) < 1e-9);
      CHECK(std::abs(y[j] - z[j]) < 1e-9);
    }
  }
}

TEST_CASE("encode: overlength input is cut, not rejected") {
  auto cfg = tiny_config(40);
  cfg.max_positions = 8;
  Encoder enc(cfg);
  std::mt19937_64 rng(1);
  auto ids = random_ids(20, 40, rng);
  auto out = enc.encode(ids);
  CHECK(out.hidden_states.dim(0) == 8);
  CHECK_THROWS_AS(enc.encode({}), ContractError);
}

TEST_CASE("mlm head: normalised rows, zero weights are uniform, bias shift keeps argmax") {
  Encoder enc(tiny_config(30));
  std::mt19937_64 rng(2);
  auto ids = random_ids(8, 30, rng);
  auto out = enc.encode(ids);
  std::vector<std::int64_t> pos{0, 3, 5, 9};
  Tensor p = enc.mlm_probabilities(out.hidden_states, pos);
  for (std::size_t r = 0; r < pos.size(); ++r) {
    double s = 0;
    for (double v : row(p, r)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  Tensor logits = enc.mlm_logits(out.hidden_states, pos);
  auto argmax = [](const std::vector<double>& v) {
    return std::max_element(v.begin(), v.end()) - v.begin();
  };
  const auto before = argmax(row(logits, 1));
  for (double& b : enc.params().at("encoder/mlm/b").mutable_data()) b += 3.25;
  CHECK(argmax(row(enc.mlm_logits(out.hidden_states, pos), 1)) == before);

  for (double& w : enc.params().at("encoder/mlm/w").mutable_data()) w = 0;
  for (double& b : enc.params().at("encoder/mlm/b").mutable_data()) b = 0;
  Tensor u = enc.mlm_probabilities(out.hidden_states, pos);
  for (double v : u.data()) CHECK(std::abs(v - 1.0 / 30.0) < 1e-15);
  CHECK_THROWS_AS(enc.mlm_logits(out.hidden_states, std::vector<std::int64_t>{10}), IndexError);
}

TEST_CASE("mlm_loss: untrained model sits near the uniform baseline for |V| = 200") {
  auto cfg = tiny_config(200);
  cfg.model_dim = 32;
  Encoder enc(cfg);
  std::mt19937_64 rng(6);
  auto ids = random_ids(60, 200, rng);
  auto b = mask_tokens(ids, 0.5, 3, 200);
  REQUIRE(b.flagged() > 0);
  CHECK(mlm_loss(enc, b).item() == doctest::Approx(std::log(200.0)).epsilon(0.2 / std::log(200.0)));

  auto none = mask_tokens(ids, 0.0, 3, 200);
  CHECK_THROWS_AS(mlm_loss(enc, none), ContractError);
}

TEST_CASE("mlm_loss only reads flagged rows") {
  Encoder enc(tiny_config(30));
  std::mt19937_64 rng(9);
  auto ids = random_ids(12, 30, rng);
  auto b = mask_tokens(ids, 0.4, 11, 30);
  REQUIRE(b.flagged() > 0);
  auto out = enc.encode(b.input_ids, b.attention_mask);
  std::vector<std::int64_t> every(ids.size());
  for (std::size_t i = 0; i < every.size(); ++i) every[i] = static_cast<std::int64_t>(i);
  Tensor logits = enc.mlm_logits(out.hidden_states, every);
  std::vector<double> l(logits.data().begin(), logits.data().end());
  // Scramble unflagged rows, then score flagged rows by hand.
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!b.flags[i])
      for (std::size_t v = 0; v < 30; ++v) l[i * 30 + v] = std::sin(double(i * 31 + v)) * 50;
  double total = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!b.flags[i]) continue;
    double mx = -1e300;
    for (std::size_t v = 0; v < 30; ++v) mx = std::max(mx, l[i * 30 + v]);
    double z = 0;
    for (std::size_t v = 0; v < 30; ++v) z += std::exp(l[i * 30 + v] - mx);
    total += -(l[i * 30 + static_cast<std::size_t>(b.original_ids[i])] - mx - std::log(z));
  }
  CHECK(mlm_loss(enc, b).item() == doctest::Approx(total / double(b.flagged())).epsilon(1e-12));
}

TEST_CASE("mlm_loss gradient matches central differences on a 2-layer toy encoder") {
  auto cfg = tiny_config(20);
  cfg.model_dim = 8;
  cfg.ffn_dim = 12;
  Encoder enc(cfg);
  enc.params().set_requires_grad(true);
  std::mt19937_64 rng(13);
  auto ids = random_ids(6, 20, rng);
  auto b = mask_tokens(ids, 0.5, 2, 20);
  REQUIRE(b.flagged() > 0);
  std::vector<Tensor> ps;
  std::vector<std::string> names;
  for (const auto& [k, t] : enc.params().items()) {
    ps.push_back(t);
    names.push_back(k);
  }
  auto rep = ad::finite_diff_check_params([&] { return mlm_loss(enc, b); }, ps, names, 1e-4, 1e-5, 6);
  CHECK_MESSAGE(rep.passed, rep.worst << " rel=" << rep.max_rel_error);
}

TEST_CASE("mlm overfit on one sentence drives loss below 0.1 and recovers the masked token") {
  auto cfg = tiny_config(30);
  cfg.model_dim = 32;
  cfg.ffn_dim = 64;
  Encoder enc(cfg);
  // A high-frequency token (12) dominates the sentence.
  std::vector<std::int64_t> ids{text::kCls, 12, 15, 12, 20, 12, 17, 12, 25, 12, 13, text::kSep};
  auto b = mask_tokens(ids, 0.35, 21, 30, {1.0, 0.0});
  REQUIRE(b.flagged() > 0);
  enc.params().set_requires_grad(true);
  auto ps = enc.params().tensors();
  ad::AdamW opt(ps, {3e-3});
  double loss = 0;
  for (int step = 0; step < 300; ++step) {
    opt.zero_grad();
    Tensor l = mlm_loss(enc, b);
    l.backward();
    for (Tensor& p : ps)
      if (!p.has_grad()) p.zero_grad();
    opt.step();
    loss = l.item();
  }
  {
    ad::NoGradGuard g;
    loss = mlm_loss(enc, b).item();
  }
  CHECK(loss < 0.1);
  auto out = enc.encode(b.input_ids, b.attention_mask);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!b.flags[i]) continue;
    std::vector<std::int64_t> pos{static_cast<std::int64_t>(i)};
    auto r = row(enc.mlm_logits(out.hidden_states, pos), 0);
    CHECK(std::max_element(r.begin(), r.end()) - r.begin() == ids[i]);
  }
}

TEST_CASE("pretrain_mlm: deterministic, touches only the encoder, round-trips to disk") {
  std::vector<std::string> corpus;
  for (int i = 0; i < 24; ++i) corpus.push_back(i % 2 ? "eye pain and redness" : "blurred vision at night");
  auto vocab = text::Vocabulary::build(corpus);
  text::CharTokenizer tok(vocab);
  auto cfg = tiny_config(vocab.size());
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch_size = 8;

  ad::ParameterSet other;
  other.add("base/w", Tensor::full({3, 3}, 0.5));
  const std::string other_sum = other.checksum();

  Encoder a(cfg), b(cfg);
  const std::string before = a.version_tag();
  auto ra = pretrain_mlm(a, tok, corpus, pc);
  auto rb = pretrain_mlm(b, tok, corpus, pc);
  CHECK(ra.final_loss == rb.final_loss);
  CHECK(ra.steps == 6);
  CHECK(ra.epoch_train_loss.size() == 2);
  CHECK(a.version_tag() != before);
  CHECK(a.version_tag() == b.version_tag());
  CHECK(other.checksum() == other_sum);

  CHECK_THROWS_AS(pretrain_mlm(a, tok, {}, pc), ContractError);
  CHECK_THROWS_AS(pretrain_mlm(a, tok, {"  ", ""}, pc), ContractError);

  auto path = std::filesystem::temp_directory_path() / "eyedoc_test_encoder.ckpt";
  save_encoder(path, a);
  Encoder c = load_encoder(path);
  CHECK(c.version_tag() == a.version_tag());
  CHECK(c.config().vocab_size == a.config().vocab_size);
  std::filesystem::remove(path);
}
