#include <set>

#include "cmwm/attacks.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("attacks");

namespace {

std::vector<TokenId> random_body_tokens(int n, int vocab_size, SplitRng& rng) {
  std::vector<TokenId> out;
  for (int i = 0; i < n; ++i)
    out.push_back(Vocab::kNumSpecials +
                  static_cast<TokenId>(rng.below(
                      static_cast<uint64_t>(vocab_size - Vocab::kNumSpecials))));
  return out;
}

SentencePolicy empty_policy(int vocab_size) {
  SentencePolicy p;
  p.terminator.assign(static_cast<size_t>(vocab_size), 0);
  p.closing_quote.assign(static_cast<size_t>(vocab_size), 0);
  return p;
}

}  // namespace

TEST_CASE("synonym substitution") {
  const int v = 64, d = 8;
  SplitRng init(3);
  Tensor<float> table = Tensor<float>::randn({v, d}, init);
  const NeighborTable nn = build_neighbor_table(table, 4);

  SplitRng rng(5);
  const auto tokens = random_body_tokens(200, v, rng);

  SUBCASE("p = 0 is the identity") {
    SplitRng r(1);
    CHECK(synonym_substitute(tokens, 0.0, nn, r) == tokens);
  }

  SUBCASE("p = 1 with k_nn = 1 deterministically maps to nearest neighbors") {
    const NeighborTable nn1 = build_neighbor_table(table, 1);
    SplitRng r(1);
    const auto out = synonym_substitute(tokens, 1.0, nn1, r);
    REQUIRE(out.size() == tokens.size());
    for (size_t i = 0; i < out.size(); ++i) {
      REQUIRE(nn1.neighbors[static_cast<size_t>(tokens[i])].size() == 1);
      CHECK(out[i] == nn1.neighbors[static_cast<size_t>(tokens[i])][0]);
      CHECK(out[i] != tokens[i]);
    }
  }

  SUBCASE("p = 0.1 replaces about a tenth of a long sequence") {
    SplitRng r(7);
    const auto body = random_body_tokens(10000, v, r);
    SplitRng r2(8);
    const auto out = synonym_substitute(body, 0.1, nn, r2);
    int changed = 0;
    for (size_t i = 0; i < body.size(); ++i)
      if (out[i] != body[i]) ++changed;
    CHECK(changed >= 800);
    CHECK(changed <= 1200);
  }

  SUBCASE("neighbors never include specials or self") {
    for (int t = Vocab::kNumSpecials; t < v; ++t)
      for (TokenId cand : nn.neighbors[static_cast<size_t>(t)]) {
        CHECK(cand >= Vocab::kNumSpecials);
        CHECK(cand != t);
      }
  }
}

TEST_CASE("random edits") {
  const int v = 64;
  const auto policy = empty_policy(v);
  SplitRng rng(9);
  const auto tokens = random_body_tokens(10000, v, rng);

  SUBCASE("p = 0 is the identity for all kinds") {
    for (AttackKind k : {AttackKind::insert, AttackKind::del, AttackKind::substitute}) {
      SplitRng r(1);
      CHECK(random_edit(tokens, k, 0.0, v, policy, r) == tokens);
    }
  }

  SUBCASE("delete at p = 1 keeps one token per sentence") {
    SentencePolicy p;
    p.terminator.assign(static_cast<size_t>(v), 0);
    p.closing_quote.assign(static_cast<size_t>(v), 0);
    p.terminator[10] = 1;  // token 10 acts as '.'
    const std::vector<TokenId> sentence = {5, 6, 7, 8, 10};
    SplitRng r(2);
    const auto out = random_edit(sentence, AttackKind::del, 1.0, v, p, r);
    CHECK(out.size() == 1);

    const std::vector<TokenId> two = {5, 6, 10, 7, 8, 10};
    SplitRng r2(3);
    const auto out2 = random_edit(two, AttackKind::del, 1.0, v, p, r2);
    CHECK(out2.size() == 2);  // one survivor per sentence
  }

  SUBCASE("insert at p = 0.1 grows the sequence by about a tenth") {
    SplitRng r(11);
    const auto out = random_edit(tokens, AttackKind::insert, 0.1, v, policy, r);
    const int grew = static_cast<int>(out.size() - tokens.size());
    CHECK(grew >= 800);
    CHECK(grew <= 1200);
  }

  SUBCASE("substitute rate concentrates around p") {
    SplitRng r(13);
    const auto out = random_edit(tokens, AttackKind::substitute, 0.1, v, policy, r);
    int changed = 0;
    for (size_t i = 0; i < tokens.size(); ++i)
      if (out[i] != tokens[i]) ++changed;
    // replacement can draw the original id, so slightly under p
    CHECK(changed >= 700);
    CHECK(changed <= 1200);
  }

  SUBCASE("edits never emit special ids") {
    SplitRng r(15);
    auto inserted = random_edit(tokens, AttackKind::insert, 0.3, v, policy, r);
    auto substituted =
        random_edit(inserted, AttackKind::substitute, 0.3, v, policy, r);
    for (TokenId t : substituted) CHECK(t >= Vocab::kNumSpecials);
  }

  SUBCASE("specials pass through untouched") {
    std::vector<TokenId> with_specials = {Vocab::kBos, 7, 8, Vocab::kEos};
    SplitRng r(17);
    const auto out =
        random_edit(with_specials, AttackKind::substitute, 1.0, v, policy, r);
    CHECK(out[0] == Vocab::kBos);
    CHECK(out[3] == Vocab::kEos);
    CHECK(out[1] != 7);
  }
}

TEST_CASE("composition applies stages in order with split streams") {
  const int v = 64;
  const auto policy = empty_policy(v);
  SplitRng rng(21);
  const auto tokens = random_body_tokens(500, v, rng);

  SUBCASE("composed identities are the identity") {
    auto ident = [](const std::vector<TokenId>& t, SplitRng&) { return t; };
    auto composed = compose_attacks({ident, ident});
    SplitRng r(1);
    CHECK(composed(tokens, r) == tokens);
  }

  SUBCASE("all-zero probabilities compose to the identity") {
    AttackConfig cfg = baseline_attack_config(0.0, 1);
    SplitRng init(3);
    Tensor<float> table = Tensor<float>::randn({v, 8}, init);
    const NeighborTable nn = build_neighbor_table(table, 4);
    auto attack = make_attack(cfg, v, policy, &nn, nullptr);
    SplitRng r(1);
    CHECK(attack(tokens, r) == tokens);
  }

  SUBCASE("synonym then delete leaves about (1-p)^2 of tokens untouched") {
    // twin construction: every lower-half token's nearest neighbor lives in
    // the upper half, so replacements are visible in the id range
    const int half = 512;
    const int big_v = Vocab::kNumSpecials + 2 * half;
    SplitRng init(31);
    Tensor<float> table({big_v, 8});
    for (int i = 0; i < big_v; ++i)
      for (int j = 0; j < 8; ++j) table.at(i, j) = static_cast<float>(init.gaussian());
    for (int i = 0; i < half; ++i) {
      const int lower = Vocab::kNumSpecials + i;
      const int upper = Vocab::kNumSpecials + half + i;
      for (int j = 0; j < 8; ++j)
        table.at(upper, j) = table.at(lower, j) * 1.0001f;
    }
    const NeighborTable nn = build_neighbor_table(table, 1);

    SplitRng r(33);
    std::vector<TokenId> lower_tokens;
    for (int i = 0; i < 10000; ++i)
      lower_tokens.push_back(Vocab::kNumSpecials +
                             static_cast<TokenId>(r.below(half)));

    AttackConfig cfg;
    cfg.kind = AttackKind::compose;
    AttackConfig syn;
    syn.kind = AttackKind::synonym;
    syn.p = 0.05;
    syn.k_nn = 1;
    AttackConfig del;
    del.kind = AttackKind::del;
    del.p = 0.05;
    cfg.parts = {syn, del};
    auto attack = make_attack(cfg, big_v, empty_policy(big_v), &nn, nullptr);
    SplitRng r2(35);
    const auto out = attack(lower_tokens, r2);

    int survivors = 0;
    for (TokenId t : out)
      if (t < Vocab::kNumSpecials + half) ++survivors;
    const double untouched =
        static_cast<double>(survivors) / static_cast<double>(lower_tokens.size());
    CHECK(untouched > 0.9025 - 0.015);
    CHECK(untouched < 0.9025 + 0.015);
  }

  SUBCASE("attacks are deterministic given the seed") {
    AttackConfig cfg = baseline_attack_config(0.2, 5);
    SplitRng init(3);
    Tensor<float> table = Tensor<float>::randn({v, 8}, init);
    const NeighborTable nn = build_neighbor_table(table, 4);
    auto attack = make_attack(cfg, v, policy, &nn, nullptr);
    SplitRng r1(9), r2(9);
    CHECK(attack(tokens, r1) == attack(tokens, r2));
  }
}

TEST_CASE("external rewriter contract via /bin/cat") {
  const Vocab vocab = Vocab::build("aa bb cc dd . !", 20);
  auto attack = make_external_attack("cat", vocab);
  const auto tokens = tokenize("aa bb. cc dd!", vocab);
  SplitRng r(1);
  const auto out = attack(tokens, r);
  CHECK(out == tokens);  // identity command round-trips through text

  auto upper = make_external_attack("tr a-z A-Z", vocab);  // all-OOV rewrite
  SplitRng r2(1);
  const auto mangled = upper(tokens, r2);
  CHECK(mangled.size() == tokens.size());
  int unk = 0;
  for (TokenId t : mangled)
    if (t == Vocab::kUnk) ++unk;
  CHECK(unk > 0);

  CHECK_THROWS(pipe_through_command("exit 3", {"line"}));
}

TEST_SUITE_END();
