#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cmwm/extracted_bits.hpp"
#include "cmwm/graph.hpp"
#include "cmwm/model.hpp"
#include "cmwm/text.hpp"

namespace cmwm {

struct ExtractorConfig {
  int n_layers = 2;
  int n_heads = 4;
  int mlp_hidden = 256;
  bool use_pos_emb = true;
  std::string pooling = "mean";

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || mlp_hidden < 1)
      throw std::invalid_argument("extractor config: bad sizes");
    if (pooling != "mean")
      throw std::invalid_argument("extractor config: unsupported pooling");
  }
};

struct TokenExtraction {
  std::vector<ExtractedBits> sentences;
  std::vector<SentenceSpan> spans;
  std::vector<std::string> sentence_texts;  // filled when a vocab is supplied
  std::vector<std::string> warnings;
};

/// Bidirectional transformer that recovers per-sentence watermark bits with
/// sigmoid confidences. Shares the embedder's token embedding table; during
/// joint training its input can bypass the lookup and come straight from
/// bridged embeddings.
template <typename T>
class Extractor {
 public:
  ExtractorConfig cfg;
  int d_model = 0;
  int bits = 0;
  int max_seq_len = 0;
  Parameter<T>* tok_emb = nullptr;  // shared storage with the embedder
  Parameter<T>* pos_emb = nullptr;
  std::vector<DecoderLayerP<T>> layers;
  LayerNormP<T> ln_f;
  LinearP<T> mlp1, mlp2;

  static Extractor build(ParamStore<T>& store, const ExtractorConfig& cfg,
                         const ModelConfig& model_cfg,
                         Parameter<T>* shared_tok_emb) {
    cfg.validate();
    Extractor e;
    e.cfg = cfg;
    e.d_model = model_cfg.d_model;
    e.bits = model_cfg.watermark_bits;
    e.max_seq_len = model_cfg.max_seq_len;
    e.tok_emb = shared_tok_emb;
    e.pos_emb = store.create("extractor/pos_emb",
                             {model_cfg.max_seq_len, model_cfg.d_model});
    for (int i = 0; i < cfg.n_layers; ++i)
      e.layers.push_back(make_decoder_layer(store,
                                            "extractor/layer" +
                                                BaseModel<T>::pad2(i),
                                            e.d_model, 4 * e.d_model));
    e.ln_f = make_layer_norm(store, "extractor/ln_f", e.d_model);
    e.mlp1 = make_linear(store, "extractor/mlp1", e.d_model, cfg.mlp_hidden);
    e.mlp2 = make_linear(store, "extractor/mlp2", cfg.mlp_hidden, e.bits);
    return e;
  }

  /// Embedding-space entry point: bidirectional blocks, mean pooling, MLP.
  /// Returns pre-sigmoid bit logits [1, C]; differentiable end to end.
  typename Graph<T>::NodeId bit_logits_from_embeddings(
      Graph<T>& g, typename Graph<T>::NodeId embeddings) const {
    const Tensor<T>& e = g.value(embeddings);
    if (e.rank() != 2 || e.dim(0) < 1)
      throw std::invalid_argument("extract_from_embeddings: need L >= 1");
    if (e.dim(1) != d_model)
      throw std::invalid_argument("extract_from_embeddings: dim mismatch");
    auto x = embeddings;
    if (cfg.use_pos_emb) {
      const int l = std::min(e.dim(0), max_seq_len);
      std::vector<int> positions(static_cast<size_t>(e.dim(0)));
      for (int i = 0; i < e.dim(0); ++i)
        positions[static_cast<size_t>(i)] = std::min(i, l - 1);
      x = g.add(x, g.embedding_rows(g.param(*pos_emb), positions));
    }
    for (const auto& layer : layers)
      x = decoder_layer_forward(g, x, layer, cfg.n_heads, /*causal=*/false);
    x = g.layer_norm(x, g.param(*ln_f.gain), g.param(*ln_f.bias));
    auto pooled = g.mean_rows(x);
    auto h = g.tanh_(g.linear(pooled, g.param(*mlp1.w), g.param(*mlp1.b)));
    return g.linear(h, g.param(*mlp2.w), g.param(*mlp2.b));
  }

  typename Graph<T>::NodeId confidences_from_embeddings(
      Graph<T>& g, typename Graph<T>::NodeId embeddings) const {
    return g.sigmoid(bit_logits_from_embeddings(g, embeddings));
  }

  /// Confidences for one sentence's tokens via the shared embedding table.
  std::vector<double> extract_confidences(
      const std::vector<TokenId>& sentence_tokens) const {
    if (sentence_tokens.empty())
      throw std::invalid_argument("extract_from_tokens: empty sentence");
    std::vector<TokenId> toks = sentence_tokens;
    if (static_cast<int>(toks.size()) > max_seq_len)
      toks.resize(static_cast<size_t>(max_seq_len));
    Graph<T> g;
    auto emb = g.embedding_rows(g.param(*tok_emb), toks);
    auto conf = confidences_from_embeddings(g, emb);
    const Tensor<T>& v = g.value(conf);
    std::vector<double> out(static_cast<size_t>(bits));
    for (int i = 0; i < bits; ++i) out[static_cast<size_t>(i)] = v[i];
    return out;
  }

  /// Segments the tokens and extracts bits per sentence. Empty sentences
  /// are skipped with a warning record.
  TokenExtraction extract_from_tokens(const std::vector<TokenId>& tokens,
                                      const SentencePolicy& policy,
                                      const Vocab* vocab = nullptr,
                                      double pivot_margin = kDefaultPivotMargin) const {
    TokenExtraction out;
    if (tokens.empty()) return out;
    out.spans = segment_ids(tokens, policy);
    for (const auto& span : out.spans) {
      if (span.end_token <= span.start_token) {
        out.warnings.push_back("empty sentence span skipped");
        continue;
      }
      std::vector<TokenId> sent(tokens.begin() + span.start_token,
                                tokens.begin() + span.end_token);
      out.sentences.push_back(ExtractedBits::from_confidences(
          extract_confidences(sent), pivot_margin));
      if (vocab) out.sentence_texts.push_back(detokenize(sent, *vocab));
    }
    return out;
  }
};

inline int64_t extractor_param_count(const ExtractorConfig& e,
                                     const ModelConfig& m) {
  const int64_t d = m.d_model;
  const int64_t ff = 4 * d;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t ln = 2 * d;
  const int64_t layer = attn + ffn + 2 * ln;
  return static_cast<int64_t>(m.max_seq_len) * d + e.n_layers * layer + ln +
         d * e.mlp_hidden + e.mlp_hidden +
         static_cast<int64_t>(e.mlp_hidden) * m.watermark_bits + m.watermark_bits;
}

}  // namespace cmwm
