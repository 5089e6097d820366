#include "cmwm/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cmwm/rng.hpp"

namespace cmwm {

namespace {

const char* kSpecialNames[Vocab::kNumSpecials] = {"<pad>", "<unk>", "<bos>",
                                                  "<eos>"};

bool is_punct_char(char c) {
  switch (c) {
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
    case '"':
    case '\'':
    case '(':
    case ')':
      return true;
    default:
      return false;
  }
}

bool is_space_char(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

struct RawToken {
  std::string text;
  size_t begin = 0;
  size_t end = 0;
};

std::vector<RawToken> split_raw(std::string_view text) {
  std::vector<RawToken> out;
  size_t word_begin = 0;
  std::string word;
  auto flush = [&](size_t end) {
    if (!word.empty()) {
      out.push_back({word, word_begin, end});
      word.clear();
    }
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_space_char(c)) {
      flush(i);
    } else if (is_punct_char(c)) {
      flush(i);
      out.push_back({std::string(1, c), i, i + 1});
    } else {
      if (word.empty()) word_begin = i;
      word.push_back(c);
    }
  }
  flush(text.size());
  return out;
}

}  // namespace

bool is_punct_token(std::string_view tok) {
  return tok.size() == 1 && is_punct_char(tok[0]);
}

bool is_sentence_terminator(std::string_view tok) {
  return tok == "." || tok == "!" || tok == "?";
}

bool is_closing_quote(std::string_view tok) {
  return tok == "\"" || tok == "'";
}

Vocab Vocab::build(std::string_view corpus_text, int max_size) {
  if (max_size < kNumSpecials + 1)
    throw std::invalid_argument("build_vocab: max_size must be >= 5");
  const auto raw = split_raw(corpus_text);
  if (raw.empty()) throw std::invalid_argument("build_vocab: empty corpus");

  std::map<std::string, int64_t> counts;
  for (const auto& t : raw) ++counts[t.text];

  // order: frequency descending, then token ascending
  std::vector<std::pair<std::string, int64_t>> items(counts.begin(),
                                                     counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  const size_t keep = static_cast<size_t>(max_size - kNumSpecials);
  std::vector<std::string> tokens;
  for (size_t i = 0; i < items.size() && i < keep; ++i)
    tokens.push_back(items[i].first);
  return from_tokens(tokens);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (int i = 0; i < kNumSpecials; ++i) v.id_to_token_.push_back(kSpecialNames[i]);
  for (const auto& t : tokens) {
    if (v.token_to_id_.count(t))
      throw std::invalid_argument("vocab: duplicate token '" + t + "'");
    v.token_to_id_.emplace(t, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(t);
  }
  return v;
}

TokenId Vocab::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(TokenId id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocab: id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : id_to_token_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  write_text_file(path, serialize());
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < kNumSpecials)
    throw std::runtime_error("vocab: missing special header in " + path);
  for (int i = 0; i < kNumSpecials; ++i)
    if (lines[static_cast<size_t>(i)] != kSpecialNames[i])
      throw std::runtime_error("vocab: bad special header in " + path);
  return from_tokens({lines.begin() + kNumSpecials, lines.end()});
}

TokenizedText tokenize_with_offsets(std::string_view text, const Vocab& vocab) {
  TokenizedText out;
  for (const auto& raw : split_raw(text)) {
    out.ids.push_back(vocab.id_of(raw.text));
    out.byte_ranges.emplace_back(raw.begin, raw.end);
  }
  return out;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  return tokenize_with_offsets(text, vocab).ids;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    const std::string& tok = vocab.token_of(ids[i]);
    if (i > 0 && !is_punct_token(tok)) out += ' ';
    out += tok;
  }
  return out;
}

std::vector<SentenceSpan> segment_sentences(const std::vector<TokenId>& ids,
                                            const Vocab& vocab) {
  TokenizedText t;
  t.ids = ids;
  return segment_sentences(t, vocab);
}

std::vector<SentenceSpan> segment_sentences(const TokenizedText& text,
                                            const Vocab& vocab) {
  auto spans = segment_ids(text.ids, SentencePolicy::from_vocab(vocab));
  if (text.byte_ranges.size() == text.ids.size()) {
    for (auto& s : spans) {
      s.byte_start = text.byte_ranges[static_cast<size_t>(s.start_token)].first;
      s.byte_end = text.byte_ranges[static_cast<size_t>(s.end_token) - 1].second;
    }
  }
  return spans;
}

SentencePolicy SentencePolicy::from_vocab(const Vocab& vocab) {
  SentencePolicy p;
  p.terminator.assign(static_cast<size_t>(vocab.size()), 0);
  p.closing_quote.assign(static_cast<size_t>(vocab.size()), 0);
  for (TokenId id = 0; id < vocab.size(); ++id) {
    const std::string& tok = vocab.token_of(id);
    if (is_sentence_terminator(tok)) p.terminator[static_cast<size_t>(id)] = 1;
    if (cmwm::is_closing_quote(tok)) p.closing_quote[static_cast<size_t>(id)] = 1;
  }
  return p;
}

std::vector<SentenceSpan> segment_ids(const std::vector<TokenId>& ids,
                                      const SentencePolicy& policy) {
  std::vector<SentenceSpan> spans;
  int start = 0;
  const int n = static_cast<int>(ids.size());
  for (int i = 0; i < n; ++i) {
    if (!policy.is_terminator(ids[static_cast<size_t>(i)])) continue;
    int end = i + 1;
    if (end < n && policy.is_closing_quote(ids[static_cast<size_t>(end)])) ++end;
    spans.push_back({start, end, 0, 0});
    start = end;
    i = end - 1;
  }
  if (start < n) spans.push_back({start, n, 0, 0});
  return spans;
}

std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  size_t pos = 0;
  auto flush = [&] {
    // a document is non-blank content between blank lines
    bool nonblank = false;
    for (char c : current)
      if (!is_space_char(c)) nonblank = true;
    if (nonblank) docs.push_back(current);
    current.clear();
  };
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    bool blank = true;
    for (char c : line)
      if (!is_space_char(c)) blank = false;
    if (blank) {
      flush();
    } else {
      current.append(line);
      current += '\n';
    }
    if (eol == text.size()) break;
    pos = eol + 1;
  }
  flush();
  return docs;
}

Corpus Corpus::from_text(std::string_view text, const Vocab& vocab,
                         uint64_t shuffle_seed) {
  Corpus c;
  c.shuffle_seed_ = shuffle_seed;
  for (const auto& doc : split_documents(text)) {
    auto ids = tokenize(doc, vocab);
    if (!ids.empty()) c.documents_.push_back(std::move(ids));
  }
  return c;
}

Corpus Corpus::from_file(const std::string& path, const Vocab& vocab,
                         uint64_t shuffle_seed) {
  Corpus c = from_text(read_text_file(path), vocab, shuffle_seed);
  c.source_paths_.push_back(path);
  return c;
}

std::vector<size_t> Corpus::shuffled_order(uint64_t epoch) const {
  std::vector<size_t> order(documents_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitRng rng = SplitRng(shuffle_seed_).split("shuffle").split(epoch);
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = rng.below(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

int64_t Corpus::total_tokens() const {
  int64_t n = 0;
  for (const auto& d : documents_) n += static_cast<int64_t>(d.size());
  return n;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

int token_edit_distance(const std::vector<TokenId>& a,
                        const std::vector<TokenId>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace cmwm
