#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmwm/extracted_bits.hpp"

namespace cmwm {

/// One-sided binomial tail: sum over i in [k, n] of C(n,i) * 0.5^n, the
/// probability of k or more matches under the by-chance null. Computed in
/// extended precision (the all-match term is 2^-n, far below double range
/// for large n) and clamped to (0, 1].
long double p_value(int n, int k);

/// Marker prefix carried by every chunk: alternating 1,0,1,0,... of length r.
BitVec marker_pattern(int r);

/// Per-sentence watermark payload: r marker bits followed by C-r payload bits.
struct WatermarkChunk {
  BitVec bits;
};

/// Splits a message into per-sentence chunks. Payload layout: message bits
/// (big-endian within each byte), one XOR-checksum byte, zero padding up to
/// a multiple of C-r. Throws on an empty message or C-r < 1.
std::vector<WatermarkChunk> encode_message(const std::vector<uint8_t>& message,
                                           int chunk_bits, int marker_bits);

struct DecodeResult {
  std::vector<uint8_t> message;  // best-effort when !ok
  bool ok = false;               // checksum and padding validated
  bool ambiguous = false;        // several distinct messages satisfied checks
  bool exhausted = false;        // too many uncertain bits to enumerate
  double marker_match_rate = 0;  // fraction of sentences with matching marker
  int sentences_used = 0;
  int uncertain_bits = 0;
  uint64_t candidates_tried = 0;
};

/// Reassembles the message from per-sentence extractions. Sentences whose
/// thresholded marker bits match the pattern contribute payload. If the
/// direct decode fails the checksum, assignments of the non-pivot bits are
/// enumerated (up to 2^16) and a unique satisfying assignment is accepted.
DecodeResult decode_message(const std::vector<ExtractedBits>& extracted,
                            int chunk_bits, int marker_bits);

struct SentenceVerdict {
  std::string text;
  int k = 0;         // matching bits
  int n = 0;         // compared bits
  double p_value = 1.0;
  bool verified = false;
};

struct DocumentReport {
  std::vector<SentenceVerdict> sentences;
  int pooled_k = 0;
  int pooled_n = 0;
  double pooled_p_value = 1.0;
  bool pooled_verified = false;
  double threshold = 0.01;
};

constexpr double kDefaultThreshold = 0.01;

/// Per-sentence and pooled binomial verification of a fixed key.
DocumentReport verify_key(const std::vector<ExtractedBits>& per_sentence,
                          const std::vector<std::string>& sentence_texts,
                          const BitVec& key, double threshold);

/// 5-bucket color scale by p-value: <1e-4, <1e-2, <0.05, <0.5, rest.
int p_value_bucket(double p);

BitVec bits_from_bytes(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> bytes_from_bits(const BitVec& bits);  // bits.size() % 8 == 0

/// Hex helpers for keys/watermarks on the CLI surface.
BitVec bits_from_hex(const std::string& hex);  // 4 bits per hex digit
std::string hex_from_bits(const BitVec& bits);

}  // namespace cmwm
