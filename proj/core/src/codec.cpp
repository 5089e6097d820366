#include "cmwm/codec.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace cmwm {

long double p_value(int n, int k) {
  if (n < 0 || n > 4096) throw std::invalid_argument("p_value: n out of range");
  if (k < 0) throw std::invalid_argument("p_value: k < 0");
  if (k > n) throw std::invalid_argument("p_value: k > n");
  if (k == 0) return 1.0L;

  // Anchor at the exactly representable top term C(n,n)*2^-n = 2^-n and walk
  // down with t_{i-1} = t_i * i/(n-i+1), summing smallest-first. Every k
  // shares the same operation prefix, so p(n,k) = p(n,k+1) + t_k holds in
  // float arithmetic and the tail is monotone in k by construction.
  long double t = exp2l(static_cast<long double>(-n));
  long double sum = 0.0L;
  for (int i = n; i >= k; --i) {
    sum += t;
    if (i > k) t *= static_cast<long double>(i) / static_cast<long double>(n - i + 1);
  }
  if (sum > 1.0L) sum = 1.0L;
  if (sum <= 0.0L) sum = std::numeric_limits<long double>::denorm_min();
  return sum;
}

BitVec marker_pattern(int r) {
  BitVec m;
  for (int i = 0; i < r; ++i) m.push_back(i % 2 == 0 ? 1 : 0);
  return m;
}

BitVec bits_from_bytes(const std::vector<uint8_t>& bytes) {
  BitVec bits;
  bits.reserve(bytes.size() * 8);
  for (uint8_t b : bytes)
    for (int j = 7; j >= 0; --j) bits.push_back((b >> j) & 1);
  return bits;
}

std::vector<uint8_t> bytes_from_bits(const BitVec& bits) {
  if (bits.size() % 8 != 0)
    throw std::invalid_argument("bytes_from_bits: length not a multiple of 8");
  std::vector<uint8_t> bytes(bits.size() / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    bytes[i / 8] = static_cast<uint8_t>((bytes[i / 8] << 1) | (bits[i] & 1));
  return bytes;
}

BitVec bits_from_hex(const std::string& hex) {
  BitVec bits;
  for (char c : hex) {
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw std::invalid_argument("bits_from_hex: invalid hex digit");
    for (int j = 3; j >= 0; --j) bits.push_back(static_cast<uint8_t>((v >> j) & 1));
  }
  return bits;
}

std::string hex_from_bits(const BitVec& bits) {
  if (bits.size() % 4 != 0)
    throw std::invalid_argument("hex_from_bits: length not a multiple of 4");
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (size_t i = 0; i < bits.size(); i += 4) {
    int v = (bits[i] << 3) | (bits[i + 1] << 2) | (bits[i + 2] << 1) | bits[i + 3];
    out += digits[v];
  }
  return out;
}

namespace {

uint8_t xor_checksum(const std::vector<uint8_t>& bytes) {
  uint8_t c = 0;
  for (uint8_t b : bytes) c ^= b;
  return c;
}

/// Payload sizes consistent with S contributing sentences of C-r bits each:
/// message byte counts m with ceil((8m+8)/(C-r)) == S, largest first.
std::vector<int> candidate_message_lengths(int total_payload_bits, int payload_per) {
  std::vector<int> out;
  for (int m = (total_payload_bits - 8) / 8; m >= 1; --m) {
    const int needed = 8 * m + 8;
    if (needed > total_payload_bits) continue;
    if (total_payload_bits - needed < payload_per) out.push_back(m);
  }
  return out;
}

/// Validates one assignment of payload bits against a message length:
/// checksum must match and padding must be zero.
bool try_decode(const BitVec& payload, int m, std::vector<uint8_t>& message_out) {
  const int needed = 8 * m + 8;
  for (size_t i = static_cast<size_t>(needed); i < payload.size(); ++i)
    if (payload[i] != 0) return false;
  BitVec msg_bits(payload.begin(), payload.begin() + 8 * m);
  BitVec sum_bits(payload.begin() + 8 * m, payload.begin() + needed);
  auto msg = bytes_from_bits(msg_bits);
  const uint8_t checksum = bytes_from_bits(sum_bits)[0];
  if (xor_checksum(msg) != checksum) return false;
  message_out = std::move(msg);
  return true;
}

}  // namespace

std::vector<WatermarkChunk> encode_message(const std::vector<uint8_t>& message,
                                           int chunk_bits, int marker_bits) {
  if (message.empty()) throw std::invalid_argument("encode_message: empty message");
  if (marker_bits < 0 || chunk_bits - marker_bits < 1)
    throw std::invalid_argument("encode_message: need chunk_bits - marker_bits >= 1");

  BitVec payload = bits_from_bytes(message);
  const uint8_t checksum = xor_checksum(message);
  for (int j = 7; j >= 0; --j) payload.push_back((checksum >> j) & 1);

  const int per = chunk_bits - marker_bits;
  while (payload.size() % static_cast<size_t>(per) != 0) payload.push_back(0);

  const BitVec marker = marker_pattern(marker_bits);
  std::vector<WatermarkChunk> chunks;
  for (size_t off = 0; off < payload.size(); off += static_cast<size_t>(per)) {
    WatermarkChunk c;
    c.bits = marker;
    c.bits.insert(c.bits.end(), payload.begin() + static_cast<long>(off),
                  payload.begin() + static_cast<long>(off + per));
    chunks.push_back(std::move(c));
  }
  return chunks;
}

DecodeResult decode_message(const std::vector<ExtractedBits>& extracted,
                            int chunk_bits, int marker_bits) {
  if (extracted.empty())
    throw std::invalid_argument("decode_message: no sentences");
  const int per = chunk_bits - marker_bits;
  if (marker_bits < 0 || per < 1)
    throw std::invalid_argument("decode_message: need chunk_bits - marker_bits >= 1");

  const BitVec marker = marker_pattern(marker_bits);
  DecodeResult res;

  BitVec payload;                 // thresholded payload bits, in order
  std::vector<int> uncertain;    // indices into payload with non-pivot bits
  int matched = 0;
  for (const auto& e : extracted) {
    if (static_cast<int>(e.bits.size()) != chunk_bits) continue;
    bool match = true;
    for (int j = 0; j < marker_bits; ++j)
      if (e.bits[static_cast<size_t>(j)] != marker[static_cast<size_t>(j)]) match = false;
    if (!match) continue;
    ++matched;
    for (int j = marker_bits; j < chunk_bits; ++j) {
      if (!e.pivots[static_cast<size_t>(j)])
        uncertain.push_back(static_cast<int>(payload.size()));
      payload.push_back(e.bits[static_cast<size_t>(j)]);
    }
  }
  res.marker_match_rate =
      static_cast<double>(matched) / static_cast<double>(extracted.size());
  res.sentences_used = matched;
  res.uncertain_bits = static_cast<int>(uncertain.size());
  if (payload.empty()) return res;

  const auto lengths =
      candidate_message_lengths(static_cast<int>(payload.size()), per);

  // direct decode with thresholded bits first
  for (int m : lengths) {
    ++res.candidates_tried;
    if (try_decode(payload, m, res.message)) {
      res.ok = true;
      return res;
    }
  }

  if (uncertain.size() > 16) {
    res.exhausted = true;
    for (int m : lengths)  // best effort: longest layout, ignore checksum
      if (8 * m + 8 <= static_cast<int>(payload.size())) {
        BitVec msg_bits(payload.begin(), payload.begin() + 8 * m);
        res.message = bytes_from_bits(msg_bits);
        break;
      }
    return res;
  }

  // enumerate assignments of uncertain bits, accept a unique message
  std::set<std::vector<uint8_t>> found;
  BitVec work = payload;
  const uint64_t total = 1ull << uncertain.size();
  for (uint64_t mask = 0; mask < total; ++mask) {
    for (size_t b = 0; b < uncertain.size(); ++b)
      work[static_cast<size_t>(uncertain[b])] =
          static_cast<uint8_t>((mask >> b) & 1);
    for (int m : lengths) {
      ++res.candidates_tried;
      std::vector<uint8_t> msg;
      if (try_decode(work, m, msg)) found.insert(std::move(msg));
    }
  }
  if (found.size() == 1) {
    res.message = *found.begin();
    res.ok = true;
  } else if (!found.empty()) {
    res.message = *found.begin();
    res.ambiguous = true;
  }
  return res;
}

DocumentReport verify_key(const std::vector<ExtractedBits>& per_sentence,
                          const std::vector<std::string>& sentence_texts,
                          const BitVec& key, double threshold) {
  DocumentReport report;
  report.threshold = threshold;
  const int c = static_cast<int>(key.size());
  for (size_t s = 0; s < per_sentence.size(); ++s) {
    const auto& e = per_sentence[s];
    if (static_cast<int>(e.bits.size()) != c)
      throw std::invalid_argument("verify_key: bit count does not match key");
    SentenceVerdict v;
    v.text = s < sentence_texts.size() ? sentence_texts[s] : "";
    v.n = c;
    for (int j = 0; j < c; ++j)
      if (e.bits[static_cast<size_t>(j)] == key[static_cast<size_t>(j)]) ++v.k;
    const long double p = p_value(v.n, v.k);
    v.p_value = std::max(static_cast<double>(p),
                         std::numeric_limits<double>::denorm_min());
    v.verified = v.p_value < threshold;
    report.pooled_k += v.k;
    report.pooled_n += v.n;
    report.sentences.push_back(std::move(v));
  }
  if (report.pooled_n > 0) {
    const long double p = p_value(report.pooled_n, report.pooled_k);
    report.pooled_p_value = std::max(
        static_cast<double>(p), std::numeric_limits<double>::denorm_min());
  }
  report.pooled_verified = report.pooled_n > 0 && report.pooled_p_value < threshold;
  return report;
}

int p_value_bucket(double p) {
  if (p < 1e-4) return 0;
  if (p < 1e-2) return 1;
  if (p < 0.05) return 2;
  if (p < 0.5) return 3;
  return 4;
}

}  // namespace cmwm
