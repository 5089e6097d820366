#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cmwm {

using TokenId = int;

/// Word-level vocabulary with punctuation isolated as single-character
/// tokens. Ids 0..3 are reserved: PAD, UNK, BOS, EOS. Immutable once built.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr int kNumSpecials = 4;

  /// Keeps the most frequent tokens, ties broken lexicographically.
  /// max_size caps the total vocabulary size including the four specials.
  static Vocab build(std::string_view corpus_text, int max_size);

  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId id_of(std::string_view token) const;  // kUnk when absent
  const std::string& token_of(TokenId id) const;
  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }

  /// One token per line; the first four lines are the specials.
  std::string serialize() const;
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  Vocab() = default;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

bool is_punct_token(std::string_view tok);
bool is_sentence_terminator(std::string_view tok);
bool is_closing_quote(std::string_view tok);

struct TokenizedText {
  std::vector<TokenId> ids;
  std::vector<std::pair<size_t, size_t>> byte_ranges;  // per token, into source
};

/// Whitespace split with punctuation isolation; out-of-vocab words map to UNK.
std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);
TokenizedText tokenize_with_offsets(std::string_view text, const Vocab& vocab);

/// Tokens joined by single spaces, except no space before a punctuation token.
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

struct SentenceSpan {
  int start_token = 0;
  int end_token = 0;  // exclusive
  size_t byte_start = 0;
  size_t byte_end = 0;
};

/// A sentence ends at the first {. ! ?} token; a closing quote directly after
/// the terminator joins the sentence. Trailing tokens form a final span.
std::vector<SentenceSpan> segment_sentences(const std::vector<TokenId>& ids,
                                            const Vocab& vocab);
std::vector<SentenceSpan> segment_sentences(const TokenizedText& text,
                                            const Vocab& vocab);

/// Id-level view of the segmentation rule, usable without token strings
/// (model forward, generation, attacks).
struct SentencePolicy {
  std::vector<uint8_t> terminator;     // indexed by token id
  std::vector<uint8_t> closing_quote;  // indexed by token id

  static SentencePolicy from_vocab(const Vocab& vocab);
  bool is_terminator(TokenId id) const {
    return id >= 0 && id < static_cast<TokenId>(terminator.size()) &&
           terminator[static_cast<size_t>(id)];
  }
  bool is_closing_quote(TokenId id) const {
    return id >= 0 && id < static_cast<TokenId>(closing_quote.size()) &&
           closing_quote[static_cast<size_t>(id)];
  }
};

std::vector<SentenceSpan> segment_ids(const std::vector<TokenId>& ids,
                                      const SentencePolicy& policy);

/// Token-id documents read from plain text (blank-line separated documents).
class Corpus {
 public:
  Corpus() = default;
  static Corpus from_text(std::string_view text, const Vocab& vocab,
                          uint64_t shuffle_seed);
  static Corpus from_file(const std::string& path, const Vocab& vocab,
                          uint64_t shuffle_seed);

  size_t num_documents() const { return documents_.size(); }
  const std::vector<TokenId>& document(size_t i) const { return documents_[i]; }
  const std::vector<std::string>& source_paths() const { return source_paths_; }
  uint64_t shuffle_seed() const { return shuffle_seed_; }

  /// Deterministic document visit order for the given epoch.
  std::vector<size_t> shuffled_order(uint64_t epoch) const;

  int64_t total_tokens() const;

 private:
  std::vector<std::vector<TokenId>> documents_;
  std::vector<std::string> source_paths_;
  uint64_t shuffle_seed_ = 0;
};

/// Splits raw corpus text into documents on blank lines.
std::vector<std::string> split_documents(std::string_view text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

/// Levenshtein distance over token ids (used by the entropy probe).
int token_edit_distance(const std::vector<TokenId>& a,
                        const std::vector<TokenId>& b);

}  // namespace cmwm
