#include <set>

#include "cmwm/rng.hpp"
#include "cmwm/text.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("text");

TEST_CASE("build_vocab keeps frequent tokens with lexicographic ties") {
  const Vocab v = Vocab::build("a a b", 6);
  CHECK(v.size() == 6);
  CHECK(v.id_of("a") == 4);
  CHECK(v.id_of("b") == 5);
}

TEST_CASE("build_vocab rejects empty corpus") {
  CHECK_THROWS(Vocab::build("", 10));
  CHECK_THROWS(Vocab::build("   \n\t ", 10));
  CHECK_THROWS(Vocab::build("a b c", 4));  // max_size below 5
}

TEST_CASE("build_vocab truncates to most frequent") {
  // 10 distinct tokens; frequencies 10,9,...,1; only the top 3 survive
  std::string text;
  const char* words[] = {"t0", "t1", "t2", "t3", "t4",
                         "t5", "t6", "t7", "t8", "t9"};
  for (int w = 0; w < 10; ++w)
    for (int k = 0; k < 10 - w; ++k) text += std::string(words[w]) + " ";
  const Vocab v = Vocab::build(text, 7);
  CHECK(v.size() == 7);
  CHECK(v.id_of("t0") == 4);
  CHECK(v.id_of("t1") == 5);
  CHECK(v.id_of("t2") == 6);
  CHECK(v.id_of("t3") == Vocab::kUnk);
}

TEST_CASE("tokenize splits whitespace and isolates punctuation") {
  const Vocab v = Vocab::build("Hi there . zz", 20);
  const auto ids = tokenize("Hi there.", v);
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == v.id_of("Hi"));
  CHECK(ids[1] == v.id_of("there"));
  CHECK(ids[2] == v.id_of("."));

  CHECK(tokenize("", v).empty());
  const auto unk = tokenize("zzzunknown", v);
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == Vocab::kUnk);
}

TEST_CASE("detokenize joins with no space before punctuation") {
  const Vocab v = Vocab::build("Hi there . a b", 20);
  CHECK(detokenize({v.id_of("Hi"), v.id_of("there"), v.id_of(".")}, v) ==
        "Hi there.");
  CHECK(detokenize({}, v).empty());
  CHECK_THROWS(detokenize({v.size()}, v));
}

TEST_CASE("tokenize/detokenize round trip on canonical text") {
  const Vocab v = Vocab::build("a b c d e f . , ! ? x y z", 30);
  SplitRng rng(42);
  const char* words[] = {"a", "b", "c", "d", "e", "f", "x", "y", "z", ".", ",", "!"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenId> ids;
    const int len = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < len; ++i)
      ids.push_back(v.id_of(words[rng.below(12)]));
    const std::string text = detokenize(ids, v);
    CHECK(tokenize(text, v) == ids);       // canonical round trip
    CHECK(detokenize(tokenize(text, v), v) == text);
  }
}

TEST_CASE("segment_sentences splits on terminators") {
  const Vocab v = Vocab::build("A B C no terminator . ! ? \"", 30);
  const auto three = segment_sentences(tokenize("A. B? C!", v), v);
  REQUIRE(three.size() == 3);
  CHECK(three[0].end_token == 2);
  CHECK(three[1].start_token == 2);

  const auto one = segment_sentences(tokenize("no terminator", v), v);
  REQUIRE(one.size() == 1);
  CHECK(one[0].start_token == 0);
  CHECK(one[0].end_token == 2);

  CHECK(segment_sentences(std::vector<TokenId>{}, v).empty());
}

TEST_CASE("segment_sentences absorbs a closing quote") {
  const Vocab v = Vocab::build("he said \" stop . \" then left .", 30);
  const auto ids = tokenize("he said \" stop. \" then left.", v);
  const auto spans = segment_sentences(ids, v);
  REQUIRE(spans.size() == 2);
  // first sentence ends after the closing quote
  CHECK(v.token_of(ids[static_cast<size_t>(spans[0].end_token) - 1]) == "\"");
  CHECK(spans[1].start_token == spans[0].end_token);
}

TEST_CASE("span coverage: concatenated spans reproduce the sequence") {
  const Vocab v = Vocab::build("a b c . ! ? \" '", 30);
  SplitRng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> ids;
    const int len = static_cast<int>(rng.below(30));
    for (int i = 0; i < len; ++i)
      ids.push_back(4 + static_cast<TokenId>(rng.below(
                            static_cast<uint64_t>(v.size() - 4))));
    const auto spans = segment_sentences(ids, v);
    int at = 0;
    for (const auto& s : spans) {
      CHECK(s.start_token == at);
      CHECK(s.end_token > s.start_token);
      at = s.end_token;
    }
    CHECK(at == static_cast<int>(ids.size()));
  }
}

TEST_CASE("vocab serialization is deterministic and loadable") {
  const std::string corpus = "the cat sat on the mat . the dog too .";
  const Vocab a = Vocab::build(corpus, 12);
  const Vocab b = Vocab::build(corpus, 12);
  CHECK(a.serialize() == b.serialize());

  a.save("/tmp/cmwm_test_vocab.txt");
  const Vocab c = Vocab::load("/tmp/cmwm_test_vocab.txt");
  CHECK(c.serialize() == a.serialize());
  // line number == id - 4 after the 4-line special header
  const std::string ser = a.serialize();
  size_t lines = 0;
  for (char ch : ser)
    if (ch == '\n') ++lines;
  CHECK(lines == static_cast<size_t>(a.size()));
}

TEST_CASE("corpus splits documents on blank lines") {
  const Vocab v = Vocab::build("a b c d .", 20);
  const Corpus c = Corpus::from_text("a b.\nc d.\n\n\nc c.\n", v, 1);
  REQUIRE(c.num_documents() == 2);
  CHECK(c.document(0).size() == 6);
  CHECK(c.document(1).size() == 3);

  const auto o1 = c.shuffled_order(0);
  const auto o2 = c.shuffled_order(0);
  CHECK(o1 == o2);
}

TEST_CASE("token edit distance") {
  CHECK(token_edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(token_edit_distance({1, 2, 3}, {1, 3}) == 1);
  CHECK(token_edit_distance({}, {1, 2}) == 2);
  CHECK(token_edit_distance({1, 2, 3}, {4, 5, 6}) == 3);
}

TEST_SUITE_END();
