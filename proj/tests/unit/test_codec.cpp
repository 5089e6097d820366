#include <cmath>

#include "cmwm/codec.hpp"
#include "cmwm/report.hpp"
#include "cmwm/rng.hpp"
#include "doctest.h"

using namespace cmwm;

TEST_SUITE_BEGIN("codec");

namespace {

// Independent oracle: exact integer tail sums from Pascal's triangle,
// divided by 2^n in extended precision. Valid for n <= 63 without overflow
// here (we use it to 24).
long double pvalue_oracle(int n, int k) {
  std::vector<std::vector<unsigned long long>> pascal(
      static_cast<size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    pascal[static_cast<size_t>(i)].assign(static_cast<size_t>(i) + 1, 1ull);
    for (int j = 1; j < i; ++j)
      pascal[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          pascal[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] +
          pascal[static_cast<size_t>(i - 1)][static_cast<size_t>(j)];
  }
  unsigned long long tail = 0;
  for (int i = k; i <= n; ++i) tail += pascal[static_cast<size_t>(n)][static_cast<size_t>(i)];
  return static_cast<long double>(tail) / powl(2.0L, n);
}

ExtractedBits bits_with_conf(const BitVec& bits, double strong = 0.99) {
  std::vector<double> conf;
  for (auto b : bits) conf.push_back(b ? strong : 1.0 - strong);
  return ExtractedBits::from_confidences(conf, kDefaultPivotMargin);
}

}  // namespace

TEST_CASE("p_value spot values at n=8") {
  CHECK(static_cast<double>(p_value(8, 8)) == doctest::Approx(0.00390625).epsilon(1e-12));
  CHECK(static_cast<double>(p_value(8, 0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(static_cast<double>(p_value(8, 6)) ==
        doctest::Approx(37.0 / 256.0).epsilon(1e-12));
}

TEST_CASE("p_value matches the exact oracle for all n <= 24") {
  for (int n = 0; n <= 24; ++n) {
    for (int k = 0; k <= n; ++k) {
      const long double got = p_value(n, k);
      const long double want = pvalue_oracle(n, k);
      CHECK(std::abs(static_cast<double>(got - want)) < 1e-12);
    }
  }
}

TEST_CASE("p_value monotonicity and boundaries") {
  for (int n : {1, 5, 8, 17, 64, 300}) {
    long double prev = 2.0L;
    for (int k = 0; k <= n; ++k) {
      const long double p = p_value(n, k);
      CHECK(p <= prev);
      prev = p;
    }
    CHECK(p_value(n, 0) == 1.0L);
    CHECK(static_cast<double>(p_value(n, n) * powl(2.0L, n)) ==
          doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS(p_value(8, 9));
  CHECK_THROWS(p_value(-1, 0));
  CHECK_THROWS(p_value(5000, 1));
}

TEST_CASE("p_value survives n=4096 without underflow to zero") {
  const long double p = p_value(4096, 4096);
  CHECK(p > 0.0L);
  CHECK(p < 1e-1000L);
  CHECK(static_cast<double>(p_value(4096, 2048)) > 0.4);
}

TEST_CASE("encode_message produces marker-prefixed chunks") {
  // "A" = 01000001, checksum = 01000001; payload padded to 18 bits
  const auto chunks = encode_message({'A'}, 8, 2);
  REQUIRE(chunks.size() == 3);
  const BitVec want0 = {1, 0, 0, 1, 0, 0, 0, 0};
  const BitVec want1 = {1, 0, 0, 1, 0, 1, 0, 0};
  const BitVec want2 = {1, 0, 0, 0, 0, 1, 0, 0};
  CHECK(chunks[0].bits == want0);
  CHECK(chunks[1].bits == want1);
  CHECK(chunks[2].bits == want2);
}

TEST_CASE("encode_message chunk count formula") {
  SplitRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(32));
    const int c = 6 + static_cast<int>(rng.below(6));
    const int r = static_cast<int>(rng.below(3));
    std::vector<uint8_t> msg;
    for (int i = 0; i < len; ++i) msg.push_back(static_cast<uint8_t>(rng.below(256)));
    const auto chunks = encode_message(msg, c, r);
    const int per = c - r;
    const size_t want = (8 * static_cast<size_t>(len) + 8 + per - 1) /
                        static_cast<size_t>(per);
    CHECK(chunks.size() == want);
    for (const auto& ch : chunks) CHECK(static_cast<int>(ch.bits.size()) == c);
  }
}

TEST_CASE("encode_message rejects bad inputs") {
  CHECK_THROWS(encode_message({}, 8, 2));
  CHECK_THROWS(encode_message({'x'}, 8, 8));
}

TEST_CASE("encode/decode round trip is the identity without corruption") {
  SplitRng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(64));
    std::vector<uint8_t> msg;
    for (int i = 0; i < len; ++i) msg.push_back(static_cast<uint8_t>(rng.below(256)));
    const auto chunks = encode_message(msg, 8, 2);
    std::vector<ExtractedBits> extracted;
    for (const auto& ch : chunks) extracted.push_back(bits_with_conf(ch.bits));
    const auto decoded = decode_message(extracted, 8, 2);
    CHECK(decoded.ok);
    CHECK(decoded.message == msg);
    CHECK(decoded.marker_match_rate == 1.0);
  }
}

TEST_CASE("decode recovers an uncertain bit via pivot enumeration") {
  const std::vector<uint8_t> msg = {'h', 'i'};
  const auto chunks = encode_message(msg, 8, 2);
  std::vector<ExtractedBits> extracted;
  for (const auto& ch : chunks) extracted.push_back(bits_with_conf(ch.bits));
  // one payload bit becomes uncertain and flips to the wrong side
  auto& victim = extracted[1];
  victim.confidences[4] = victim.bits[4] ? 0.45 : 0.55;
  victim.bits[4] = victim.bits[4] ? 0 : 1;
  victim.pivots[4] = 0;
  const auto decoded = decode_message(extracted, 8, 2);
  CHECK(decoded.ok);
  CHECK(decoded.message == msg);
  CHECK(decoded.uncertain_bits == 1);
}

TEST_CASE("decode flags exhaustion beyond 16 uncertain bits") {
  const std::vector<uint8_t> msg = {'a', 'b', 'c', 'd'};
  const auto chunks = encode_message(msg, 8, 2);
  std::vector<ExtractedBits> extracted;
  for (const auto& ch : chunks) extracted.push_back(bits_with_conf(ch.bits, 0.52));
  // every payload bit is non-pivot at confidence 0.52/0.48 and one is flipped
  extracted[0].bits[3] ^= 1;
  const auto decoded = decode_message(extracted, 8, 2);
  CHECK(decoded.exhausted);
  CHECK_FALSE(decoded.ok);
  CHECK(decoded.uncertain_bits > 16);
}

TEST_CASE("marker match rate on random bits approaches 2^-r") {
  SplitRng rng(5);
  std::vector<ExtractedBits> extracted;
  for (int s = 0; s < 1000; ++s) {
    BitVec bits;
    for (int b = 0; b < 8; ++b) bits.push_back(rng.bernoulli(0.5) ? 1 : 0);
    extracted.push_back(bits_with_conf(bits));
  }
  const auto decoded = decode_message(extracted, 8, 2);
  CHECK(decoded.marker_match_rate == doctest::Approx(0.25).epsilon(0.2));
  CHECK(std::abs(decoded.marker_match_rate - 0.25) < 0.05);
}

TEST_CASE("verify_key per-sentence and pooled statistics") {
  const BitVec key = {1, 0, 1, 0, 1, 0, 1, 0};
  std::vector<ExtractedBits> extracted;
  std::vector<std::string> texts;
  for (int s = 0; s < 4; ++s) {
    extracted.push_back(bits_with_conf(key));
    texts.push_back("sentence " + std::to_string(s));
  }
  const auto report = verify_key(extracted, texts, key, 0.01);
  REQUIRE(report.sentences.size() == 4);
  CHECK(report.sentences[0].k == 8);
  CHECK(report.sentences[0].p_value == doctest::Approx(0.00390625).epsilon(1e-12));
  CHECK(report.sentences[0].verified);
  CHECK(report.pooled_n == 32);
  CHECK(report.pooled_k == 32);
  CHECK(report.pooled_p_value ==
        doctest::Approx(std::pow(0.5, 32)).epsilon(1e-9));
  CHECK(report.pooled_verified);
}

TEST_CASE("one 8-bit sentence can never verify below T=0.001") {
  const BitVec key = {1, 1, 1, 1, 1, 1, 1, 1};
  const auto report = verify_key({bits_with_conf(key)}, {"s"}, key, 0.001);
  CHECK_FALSE(report.sentences[0].verified);  // floor: min p = 1/256 > 0.001
  CHECK_FALSE(report.pooled_verified);
}

TEST_CASE("report rendering") {
  DocumentReport r;
  r.threshold = 0.01;

  SUBCASE("empty document renders header only") {
    const std::string ansi = render_report(r, ReportFormat::ansi);
    CHECK(ansi.find("watermark verification") != std::string::npos);
    const std::string html = render_report(r, ReportFormat::html);
    CHECK(html.find("<html>") != std::string::npos);
    CHECK(html.find("http") == std::string::npos);  // self-contained
  }

  SUBCASE("json round trips") {
    SentenceVerdict v;
    v.text = "the cat sat.";
    v.k = 7;
    v.n = 8;
    v.p_value = 0.03515625;
    v.verified = false;
    r.sentences.push_back(v);
    r.pooled_k = 7;
    r.pooled_n = 8;
    r.pooled_p_value = 0.03515625;
    r.pooled_verified = false;
    const std::string js = render_report(r, ReportFormat::json);
    const DocumentReport back = parse_report_json(js);
    REQUIRE(back.sentences.size() == 1);
    CHECK(back.sentences[0].text == v.text);
    CHECK(back.sentences[0].k == v.k);
    CHECK(back.sentences[0].p_value == doctest::Approx(v.p_value));
    CHECK(back.threshold == doctest::Approx(r.threshold));
  }

  SUBCASE("bucket boundaries") {
    CHECK(p_value_bucket(1e-5) == 0);
    CHECK(p_value_bucket(0.003) == 1);
    CHECK(p_value_bucket(0.03) == 2);
    CHECK(p_value_bucket(0.3) == 3);
    CHECK(p_value_bucket(0.7) == 4);
  }

  SUBCASE("unknown format name throws") {
    CHECK_THROWS(report_format_from_string("pdf"));
  }
}

TEST_CASE("hex helpers") {
  const BitVec bits = bits_from_hex("a5");
  const BitVec want = {1, 0, 1, 0, 0, 1, 0, 1};
  CHECK(bits == want);
  CHECK(hex_from_bits(bits) == "a5");
  CHECK_THROWS(bits_from_hex("zz"));
}

TEST_SUITE_END();
