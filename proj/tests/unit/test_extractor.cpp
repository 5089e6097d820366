#include <algorithm>
#include <cmath>

#include "cmwm/extractor.hpp"
#include "cmwm/grad_check.hpp"
#include "cmwm/rng.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("extractor");

namespace {

struct Fixture {
  Vocab vocab;
  SentencePolicy policy;
  ModelConfig mcfg;
  ExtractorConfig ecfg;

  Fixture() : vocab(Vocab::build("aa bb cc dd ee ff . ! ? gg hh", 40)) {
    policy = SentencePolicy::from_vocab(vocab);
    mcfg.vocab_size = vocab.size();
    mcfg.d_model = 16;
    mcfg.n_heads = 2;
    mcfg.n_layers = 1;
    mcfg.ff_dim = 32;
    mcfg.max_seq_len = 48;
    mcfg.watermark_bits = 4;
    mcfg.watermark_slots = 2;
    ecfg.n_layers = 2;
    ecfg.n_heads = 2;
    ecfg.mlp_hidden = 32;
  }
};

}  // namespace

TEST_CASE("untrained extractor sits at chance on random watermarks") {
  Fixture f;
  ParamStore<double> store(31);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  SplitRng rng(99);
  int64_t correct = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> sent;
    const int len = 3 + static_cast<int>(rng.below(8));
    for (int i = 0; i < len; ++i)
      sent.push_back(4 + static_cast<TokenId>(
                             rng.below(static_cast<uint64_t>(f.vocab.size() - 4))));
    const auto conf = ex.extract_confidences(sent);
    for (double c : conf) {
      CHECK(c > 0.0);
      CHECK(c < 1.0);
      const int bit = c >= 0.5 ? 1 : 0;
      const int want = rng.bernoulli(0.5) ? 1 : 0;
      total += 1;
      correct += bit == want;
    }
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  CHECK(acc > 0.45);
  CHECK(acc < 0.55);
}

TEST_CASE("mean pooling without position embeddings is permutation invariant") {
  Fixture f;
  f.ecfg.use_pos_emb = false;
  ParamStore<double> store(33);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  const std::vector<TokenId> sent = {4, 5, 6, 7, 8};
  std::vector<TokenId> shuffled = {7, 4, 8, 6, 5};
  const auto a = ex.extract_confidences(sent);
  const auto b = ex.extract_confidences(shuffled);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("with position embeddings, order matters") {
  Fixture f;
  ParamStore<double> store(35);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  const auto a = ex.extract_confidences({4, 5, 6, 7, 8});
  const auto b = ex.extract_confidences({7, 4, 8, 6, 5});
  double diff = 0;
  for (size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("bidirectionality: a late token changes early-bit confidences") {
  Fixture f;
  ParamStore<double> store(37);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  std::vector<TokenId> sent = {4, 5, 6, 7, 8, 9};
  const auto before = ex.extract_confidences(sent);
  sent.back() = 10;
  const auto after = ex.extract_confidences(sent);
  double diff = 0;
  for (size_t i = 0; i < before.size(); ++i) diff += std::abs(before[i] - after[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("extract_from_tokens: one result per sentence, empty input is empty") {
  Fixture f;
  ParamStore<double> store(39);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  const auto toks = tokenize("aa bb. cc dd! ee", f.vocab);
  const auto res = ex.extract_from_tokens(toks, f.policy, &f.vocab);
  CHECK(res.sentences.size() == 3);
  CHECK(res.sentence_texts.size() == 3);
  CHECK(res.warnings.empty());
  for (const auto& e : res.sentences) {
    CHECK(e.bits.size() == 4);
    for (size_t i = 0; i < e.bits.size(); ++i) {
      CHECK(e.bits[i] == (e.confidences[i] >= 0.5 ? 1 : 0));
      CHECK(e.pivots[i] ==
            (std::abs(e.confidences[i] - 0.5) >= kDefaultPivotMargin ? 1 : 0));
    }
  }

  const auto single = ex.extract_from_tokens(tokenize("aa bb cc", f.vocab),
                                             f.policy, &f.vocab);
  CHECK(single.sentences.size() == 1);

  const auto empty = ex.extract_from_tokens({}, f.policy, &f.vocab);
  CHECK(empty.sentences.empty());

  CHECK_THROWS(ex.extract_confidences({}));
}

TEST_CASE("determinism: identical inputs give identical confidences") {
  Fixture f;
  ParamStore<double> store(41);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  const std::vector<TokenId> sent = {4, 9, 6, 5};
  CHECK(ex.extract_confidences(sent) == ex.extract_confidences(sent));
}

TEST_CASE("shared embedding table is the same storage as the embedder's") {
  Fixture f;
  ParamStore<double> store(43);
  auto* table = store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg, table);
  CHECK(ex.tok_emb == table);  // same object, not a copy
  const uint64_t before = store.checksum("base/tok_emb");
  table->value[0] += 1.0;
  CHECK(store.checksum("base/tok_emb") != before);
  CHECK(ex.tok_emb->value[0] == table->value[0]);
}

TEST_CASE("grad check: full token-to-bits path in 64-bit") {
  // tiny configuration keeps the finite-difference sweep fast
  ModelConfig mcfg;
  mcfg.vocab_size = 10;
  mcfg.d_model = 8;
  mcfg.n_heads = 2;
  mcfg.n_layers = 1;
  mcfg.ff_dim = 12;
  mcfg.max_seq_len = 12;
  mcfg.watermark_bits = 3;
  mcfg.watermark_slots = 1;
  ExtractorConfig ecfg;
  ecfg.n_layers = 1;
  ecfg.n_heads = 2;
  ecfg.mlp_hidden = 10;

  const std::vector<TokenId> sent = {4, 7, 5, 9, 6};
  const Tensor<double> targets = Tensor<double>::from({1, 3}, {1, 0, 1});

  for (uint64_t seed = 1; seed <= 5; ++seed) {
    ParamStore<double> store(seed * 101);
    auto* table = store.create("base/tok_emb", {mcfg.vocab_size, mcfg.d_model});
    auto ex = Extractor<double>::build(store, ecfg, mcfg, table);

    auto report = grad_check_params(
        [&](Graph<double>& g) {
          auto emb = g.embedding_rows(g.param(*table), sent);
          auto logits = ex.bit_logits_from_embeddings(g, emb);
          return g.bce_with_logits(logits, targets);
        },
        store.all());
    CHECK(report.pass(1e-4));
  }
}

TEST_CASE("confidence calibration on unwatermarked sentences") {
  Fixture f;
  ParamStore<double> store(47);
  store.create("base/tok_emb", {f.mcfg.vocab_size, f.mcfg.d_model});
  auto ex = Extractor<double>::build(store, f.ecfg, f.mcfg,
                                     store.get("base/tok_emb"));
  SplitRng rng(7);
  std::vector<double> mean_conf(4, 0.0);
  const int sentences = 220;
  for (int s = 0; s < sentences; ++s) {
    std::vector<TokenId> sent;
    const int len = 4 + static_cast<int>(rng.below(6));
    for (int i = 0; i < len; ++i)
      sent.push_back(4 + static_cast<TokenId>(
                             rng.below(static_cast<uint64_t>(f.vocab.size() - 4))));
    const auto conf = ex.extract_confidences(sent);
    for (size_t b = 0; b < conf.size(); ++b) mean_conf[b] += conf[b] / sentences;
  }
  for (double m : mean_conf) {
    CHECK(m > 0.4);
    CHECK(m < 0.6);
  }
}

TEST_SUITE_END();
